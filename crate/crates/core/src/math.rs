//! Small scalar helpers shared across the crate.

/// ln(2π)
pub const LN_2PI: f64 = 1.8378770664093454835606594728112;

/// `log(exp(a) + exp(b))` computed without overflow.
#[inline]
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Logistic function with a branch on sign so neither tail overflows.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive_in_range() {
        let a = 0.5f64;
        let b = 2.0f64;
        let expected = (a.exp() + b.exp()).ln();
        assert!((log_sum_exp(a, b) - expected).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_survives_large_inputs() {
        let got = log_sum_exp(1234.0, 1232.0);
        let expected = 1232.0 + (1.0 + 2.0f64.exp()).ln();
        assert!((got - expected).abs() < 1e-12);
        assert!(log_sum_exp(f64::NEG_INFINITY, f64::NEG_INFINITY) == f64::NEG_INFINITY);
    }

    #[test]
    fn logistic_is_stable_and_symmetric() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(800.0) == 1.0);
        assert!(logistic(-800.0) == 0.0);
        for &x in &[-30.0, -3.0, -0.1, 0.2, 5.0, 40.0] {
            assert!((logistic(x) + logistic(-x) - 1.0).abs() < 1e-15);
        }
    }
}
