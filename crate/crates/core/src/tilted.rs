//! Moments and log-partition of the per-site tilted distribution
//!
//! ```text
//! P(w) ∝ exp{ĉ₁ w − ½ ĉ₂ w²} · [p_s N(w|0, v_s) + (1 − p_s) δ(w)]
//! ```
//!
//! where `(ĉ₁, ĉ₂)` are the cavity natural parameters of one coordinate.
//! The tilted distribution is a two-component mixture of a point mass at
//! zero and a Gaussian with precision `ĉ₂ + 1/v_s`, so every quantity has a
//! closed form. The slab responsibility is a logistic of the prior log-odds
//! plus a data term and is evaluated branch-on-sign; the log-partition goes
//! through log-sum-exp. Both would overflow in their naive forms.

use crate::error::{Result, SsepError};
use crate::math::{log_sum_exp, logistic};
use crate::model::{ModelInstance, NaturalTuple};

/// Closed-form moments of one tilted coordinate.
#[derive(Debug, Clone, Copy)]
pub struct TiltedMoments {
    /// E_P[w]
    pub mean: f64,
    /// E_P[w²]
    pub second_moment: f64,
    /// log Ẑ of this coordinate
    pub log_partition: f64,
    /// Posterior probability that the coordinate is drawn from the slab.
    pub slab_responsibility: f64,
}

impl TiltedMoments {
    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean * self.mean
    }
}

/// Moments of the tilted distribution for cavity parameters `(cav_1, cav_2)`.
///
/// Requires `cav_2 > 0`, `0 < slab_prob < 1`, `slab_var > 0`. The returned
/// values satisfy `∂ log Ẑ / ∂cav_1 = mean` and
/// `∂ log Ẑ / ∂cav_2 = −½ second_moment`.
pub fn tilted_moments(
    cav_1: f64,
    cav_2: f64,
    slab_prob: f64,
    slab_var: f64,
) -> Result<TiltedMoments> {
    if !(cav_2 > 0.0 && cav_2.is_finite()) {
        return Err(SsepError::InvalidArgument(format!(
            "cavity precision must be positive, got {cav_2}"
        )));
    }
    if !cav_1.is_finite() {
        return Err(SsepError::NonFinite("cavity linear parameter"));
    }
    if !(slab_prob > 0.0 && slab_prob < 1.0) {
        return Err(SsepError::InvalidArgument(format!(
            "slab probability must lie in (0, 1), got {slab_prob}"
        )));
    }
    if !(slab_var > 0.0 && slab_var.is_finite()) {
        return Err(SsepError::InvalidArgument(format!(
            "slab variance must be positive, got {slab_var}"
        )));
    }

    let rho_s = slab_prob.ln() - (-slab_prob).ln_1p();
    let t = cav_2 * slab_var;
    let shrink = 1.0 / (1.0 + t); // 1/(1 + ĉ₂ v_s)

    // Log of the slab/spike integral ratio before prior odds:
    // p = −½ log(1 + ĉ₂v_s) + ĉ₁² v_s / (2 (1 + ĉ₂v_s)).
    let p = -0.5 * t.ln_1p() + 0.5 * cav_1 * cav_1 * slab_var * shrink;
    let r = logistic(p + rho_s);

    // Slab component: Gaussian with precision ĉ₂ + 1/v_s.
    let slab_mean = cav_1 * slab_var * shrink;
    let slab_var_post = slab_var * shrink;

    // Mixture moments. These equal ĉ₂⁻¹(ĉ₁ − a) and
    // ĉ₂⁻¹ − ĉ₂⁻²(a² − b) + mean² for the responsibility-weighted
    // a = r·ĉ₁/(1+ĉ₂v_s) + (1−r)·ĉ₁ and its quadratic counterpart b, but the
    // factored forms below avoid the ĉ₁ − a cancellation for small ĉ₂.
    let mean = r * slab_mean;
    let variance = r * slab_var_post + r * (1.0 - r) * slab_mean * slab_mean;
    let second_moment = variance + mean * mean;

    let log_partition = log_sum_exp((-slab_prob).ln_1p(), slab_prob.ln() + p);

    if !(mean.is_finite() && second_moment.is_finite() && log_partition.is_finite()) {
        return Err(SsepError::NonFinite("tilted moments"));
    }
    Ok(TiltedMoments {
        mean,
        second_moment,
        log_partition,
        slab_responsibility: r,
    })
}

/// Sum over coordinates of the tilted log-partitions at the given cavity.
pub fn log_z_hat(cavity: &NaturalTuple, model: &ModelInstance) -> Result<f64> {
    if cavity.dim() != model.d() {
        return Err(SsepError::DimensionMismatch {
            context: "cavity parameters",
            expected: model.d(),
            got: cavity.dim(),
        });
    }
    let mut total = 0.0;
    for i in 0..model.d() {
        let tm = tilted_moments(
            cavity.first()[i],
            cavity.second()[i],
            model.slab_prob(),
            model.slab_var(),
        )?;
        total += tm.log_partition;
    }
    Ok(total)
}

/// Per-site log-partition without positivity checks, valid for any cavity
/// precision with `1 + ĉ₂ v_s > 0`; returns `+∞` past that point (the slab
/// integral diverges). Used for diagnostic energy traces only.
pub(crate) fn lenient_site_log_partition(
    cav_1: f64,
    cav_2: f64,
    slab_prob: f64,
    slab_var: f64,
) -> f64 {
    let t = cav_2 * slab_var;
    if 1.0 + t <= 0.0 {
        return f64::INFINITY;
    }
    let shrink = 1.0 / (1.0 + t);
    let p = -0.5 * t.ln_1p() + 0.5 * cav_1 * cav_1 * slab_var * shrink;
    log_sum_exp((-slab_prob).ln_1p(), slab_prob.ln() + p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn symmetric_cavity_has_zero_mean() {
        for &cav_2 in &[1e-6, 0.3, 5.0] {
            for &ps in &[0.1, 0.5, 0.9] {
                let tm = tilted_moments(0.0, cav_2, ps, 2.0).unwrap();
                assert_eq!(tm.mean, 0.0);
                assert!(tm.second_moment >= 0.0);
            }
        }
    }

    #[test]
    fn gaussian_limit_second_moment() {
        // p_s → 1⁻, cav = (0, 1), v_s = 1: pure slab with precision 2.
        let tm = tilted_moments(0.0, 1.0, 1.0 - 1e-12, 1.0).unwrap();
        assert_abs_diff_eq!(tm.second_moment, 0.5, epsilon = 1e-9);
        assert!(tm.slab_responsibility > 1.0 - 1e-9);
    }

    #[test]
    fn gaussian_limit_log_partition_is_the_convolution() {
        // p_s → 1⁻: log Ẑ → −½log(1+ĉ₂v_s) + ĉ₁²v_s/(2(1+ĉ₂v_s)).
        let (c1, c2, vs) = (0.8, 2.0, 1.5);
        let tm = tilted_moments(c1, c2, 1.0 - 1e-12, vs).unwrap();
        let expected = -0.5 * (1.0 + c2 * vs).ln() + c1 * c1 * vs / (2.0 * (1.0 + c2 * vs));
        assert_abs_diff_eq!(tm.log_partition, expected, epsilon = 1e-9);
    }

    #[test]
    fn hand_computed_log_z_hat() {
        // cavity (0, 1) per site, p_s = 0.5, v_s = 1, d = 2:
        // per site Ẑ = 0.5 + 0.5·2^{-1/2}.
        let model = ModelInstance::new(DMatrix::zeros(1, 2), DVector::zeros(1), 1.0, 0.5, 1.0)
            .unwrap();
        let cavity = NaturalTuple::constant(2, 0.0, 1.0);
        let expected = 2.0 * (0.5 + 0.5 / 2.0f64.sqrt()).ln();
        assert_abs_diff_eq!(log_z_hat(&cavity, &model).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn responsibility_weighted_route_matches_factored_route() {
        // The factored mean/second-moment expressions are an exact rewrite of
        // the ĉ₂⁻¹(ĉ₁ − a) and ĉ₂⁻¹ − ĉ₂⁻²(a² − b) + mean² forms; check the
        // literal forms on a benign grid.
        for &c1 in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
            for &c2 in &[0.05, 0.9, 4.0] {
                for &ps in &[0.2, 0.7] {
                    for &vs in &[0.5, 1.0, 3.0] {
                        let tm = tilted_moments(c1, c2, ps, vs).unwrap();
                        let rho = ps.ln() - (1.0 - ps).ln();
                        let p = -0.5 * c2.ln() - 0.5 * (1.0 / c2 + vs).ln()
                            + 0.5 * (c1 * c1 / (c2 * c2))
                                * (c2 - 1.0 / (1.0 / c2 + vs));
                        let r = logistic(p + rho);
                        let a = r * c1 / (1.0 + c2 * vs) + (1.0 - r) * c1;
                        let b = r * (c1 * c1 / (c2 * c2) - 1.0 / c2 - vs)
                            / ((1.0 / c2 + vs) * (1.0 / c2 + vs))
                            + (1.0 - r) * (c1 * c1 - c2);
                        let mean = (c1 - a) / c2;
                        let second = 1.0 / c2 - (a * a - b) / (c2 * c2) + mean * mean;
                        assert_abs_diff_eq!(tm.mean, mean, epsilon = 1e-9 * mean.abs().max(1.0));
                        assert_abs_diff_eq!(
                            tm.second_moment,
                            second,
                            epsilon = 1e-9 * second.abs().max(1.0)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn outputs_finite_on_stress_grid() {
        // cav_2 ∈ [1e-6, 1e8], |cav_1| ≤ 1e4: finite outputs everywhere.
        let c2s = [1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6, 1e8];
        let c1s = [-1e4, -317.0, -1.0, 0.0, 0.3, 42.0, 1e4];
        for &c2 in &c2s {
            for &c1 in &c1s {
                for &ps in &[1e-6, 0.2, 1.0 - 1e-6] {
                    let tm = tilted_moments(c1, c2, ps, 1.0).unwrap();
                    assert!(tm.mean.is_finite());
                    assert!(tm.second_moment.is_finite());
                    assert!(tm.log_partition.is_finite());
                    assert!((0.0..=1.0).contains(&tm.slab_responsibility));
                    assert!(tm.variance() >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn lenient_partition_diverges_past_negative_slab_precision() {
        assert!(lenient_site_log_partition(0.0, -2.0, 0.5, 1.0).is_infinite());
        // Mildly negative cavity precision is still integrable.
        let v = lenient_site_log_partition(0.1, -0.4, 0.5, 1.0);
        assert!(v.is_finite());
    }

    #[test]
    fn spike_dominates_when_odds_are_low() {
        let tm = tilted_moments(0.1, 1.0, 1e-9, 1.0).unwrap();
        assert!(tm.slab_responsibility < 1e-6);
        assert!(tm.second_moment < 1e-6);
        // log Ẑ → log(1 − p_s) ≈ 0 from below.
        assert!(tm.log_partition.abs() < 1e-6);
    }
}
