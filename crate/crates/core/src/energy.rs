//! The EP energy `E(v, v̂, ṽ) = −log Z(ṽ) − log Ẑ(v̂) + log Z̃(v)` over
//! marginal, cavity and site natural parameters coupled by `v = ṽ + v̂`,
//! its positivity constraints, and the closed-form floor of the constrained
//! energy.
//!
//! Callers normally hold only `(v, ṽ)` and derive the cavity, which keeps the
//! coupling exact by construction; the three-argument entry point exists for
//! testing and validates consistency before evaluating anything.

use crate::error::{Result, SsepError};
use crate::math::LN_2PI;
use crate::model::{self, ModelInstance, NaturalTuple, PosteriorMoments};
use crate::tilted;

/// Componentwise tolerance for the `v = ṽ + v̂` coupling check.
pub const EQUALITY_TOL: f64 = 1e-10;

/// The three energy terms and their sum.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    /// `−log Z(ṽ)`
    pub neg_log_z: f64,
    /// `−log Ẑ(v̂)`
    pub neg_log_z_hat: f64,
    /// `log Z̃(v)`
    pub log_z_tilde: f64,
    /// Sum of the three terms.
    pub total: f64,
}

/// `log Z̃(v) = Σᵢ [½ log(2π) − ½ log v₂ᵢ + v₁ᵢ²/(2 v₂ᵢ)]`, the log
/// normalizer of d unnormalized Gaussian kernels with natural parameters `v`.
///
/// Requires `v₂ ⪰ 3ε`.
pub fn log_z_tilde(marginal: &NaturalTuple, eps: f64) -> Result<f64> {
    marginal.check_floor("marginal", 3.0 * eps)?;
    Ok(log_z_tilde_unchecked(marginal))
}

fn log_z_tilde_unchecked(marginal: &NaturalTuple) -> f64 {
    let mut total = 0.0;
    for i in 0..marginal.dim() {
        let v1 = marginal.first()[i];
        let v2 = marginal.second()[i];
        total += 0.5 * LN_2PI - 0.5 * v2.ln() + v1 * v1 / (2.0 * v2);
    }
    total
}

/// Energy at an explicit `(v, v̂, ṽ)` triple.
///
/// Validates the coupling `v = ṽ + v̂` to [`EQUALITY_TOL`] and the floors
/// `ṽ₂ ⪰ ε`, `v̂₂ ⪰ ε`, `v₂ ⪰ 3ε`; the error distinguishes which constraint
/// failed.
pub fn energy(
    model: &ModelInstance,
    marginal: &NaturalTuple,
    cavity: &NaturalTuple,
    site: &NaturalTuple,
    eps: f64,
) -> Result<EnergyBreakdown> {
    let d = model.d();
    for (name, tuple) in [("marginal", marginal), ("cavity", cavity), ("site", site)] {
        if tuple.dim() != d {
            return Err(SsepError::DimensionMismatch {
                context: match name {
                    "marginal" => "marginal parameters",
                    "cavity" => "cavity parameters",
                    _ => "site parameters",
                },
                expected: d,
                got: tuple.dim(),
            });
        }
    }
    for i in 0..d {
        let r1 = (marginal.first()[i] - site.first()[i] - cavity.first()[i]).abs();
        let r2 = (marginal.second()[i] - site.second()[i] - cavity.second()[i]).abs();
        let residual = r1.max(r2);
        if residual > EQUALITY_TOL {
            return Err(SsepError::EqualityConstraint { index: i, residual });
        }
    }
    site.check_floor("site", eps)?;
    cavity.check_floor("cavity", eps)?;
    marginal.check_floor("marginal", 3.0 * eps)?;

    let neg_log_z = -model::log_z(model, site)?;
    let neg_log_z_hat = -tilted::log_z_hat(cavity, model)?;
    let log_z_tilde = log_z_tilde_unchecked(marginal);
    let total = neg_log_z + neg_log_z_hat + log_z_tilde;
    Ok(EnergyBreakdown {
        neg_log_z,
        neg_log_z_hat,
        log_z_tilde,
        total,
    })
}

/// Energy at `(v, v − ṽ, ṽ)`: the cavity is derived, so the coupling holds
/// by construction.
pub fn energy_from_site(
    model: &ModelInstance,
    marginal: &NaturalTuple,
    site: &NaturalTuple,
    eps: f64,
) -> Result<EnergyBreakdown> {
    let cavity = marginal.sub(site);
    energy(model, marginal, &cavity, site, eps)
}

/// Diagnostic energy of a site configuration against the marginals implied by
/// `moments`, with no constraint checks. The derived cavity may have negative
/// precisions mid-run; the value is then still computed where the integrals
/// converge and is `±∞` otherwise. Intended for traces, not for control flow.
pub fn energy_diagnostic(
    model: &ModelInstance,
    site: &NaturalTuple,
    moments: &PosteriorMoments,
) -> f64 {
    let marginal = moments.marginal_naturals();
    let neg_log_z = -model::log_z_with_moments(model, moments);
    let mut neg_log_z_hat = 0.0;
    for i in 0..model.d() {
        let c1 = marginal.first()[i] - site.first()[i];
        let c2 = marginal.second()[i] - site.second()[i];
        neg_log_z_hat -=
            tilted::lenient_site_log_partition(c1, c2, model.slab_prob(), model.slab_var());
    }
    neg_log_z + neg_log_z_hat + log_z_tilde_unchecked(&marginal)
}

/// Floor of the constrained energy: `(n/2) log(2πσ²) − (d/2) log 2`.
///
/// Every inner-maximized energy value sits at or above this number, which is
/// what makes the outer descent iteration convergent.
pub fn lower_bound(n: usize, d: usize, noise_var: f64) -> Result<f64> {
    if n == 0 || d == 0 {
        return Err(SsepError::InvalidArgument(format!(
            "counts must be at least 1, got n={n}, d={d}"
        )));
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(SsepError::InvalidArgument(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    Ok(0.5 * n as f64 * (LN_2PI + noise_var.ln()) - 0.5 * d as f64 * 2.0f64.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    const EPS: f64 = 1e-6;

    fn zero_model(n: usize, d: usize) -> ModelInstance {
        ModelInstance::new(DMatrix::zeros(n, d), DVector::zeros(n), 1.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn log_z_tilde_closed_forms() {
        // (v₁, v₂) = (0, 1): ½ log 2π.
        let v = NaturalTuple::constant(1, 0.0, 1.0);
        assert_abs_diff_eq!(
            log_z_tilde(&v, EPS).unwrap(),
            0.5 * LN_2PI,
            epsilon = 1e-12
        );
        // (v₁, v₂) = (2, 2): ½ log π + 1.
        let v = NaturalTuple::constant(1, 2.0, 2.0);
        assert_abs_diff_eq!(
            log_z_tilde(&v, EPS).unwrap(),
            0.5 * std::f64::consts::PI.ln() + 1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_z_tilde_rejects_thin_marginals() {
        let v = NaturalTuple::constant(2, 0.0, 2.0 * EPS);
        assert!(matches!(
            log_z_tilde(&v, EPS),
            Err(SsepError::InequalityConstraint { role: "marginal", .. })
        ));
    }

    #[test]
    fn toy_energy_assembles_from_closed_forms() {
        // X = 0, y = 0, ṽ = v̂ = (0, 1), v = (0, 2), p_s = 0.5, v_s = 1:
        //   −log Z = 0, −log Ẑ = −log(0.5 + 0.5/√2), log Z̃ = ½log(2π) − ½log 2.
        let model = zero_model(1, 1);
        let site = NaturalTuple::constant(1, 0.0, 1.0);
        let cavity = NaturalTuple::constant(1, 0.0, 1.0);
        let marginal = NaturalTuple::constant(1, 0.0, 2.0);
        let br = energy(&model, &marginal, &cavity, &site, EPS).unwrap();
        assert_abs_diff_eq!(br.neg_log_z, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            br.neg_log_z_hat,
            -(0.5 + 0.5 / 2.0f64.sqrt()).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            br.log_z_tilde,
            0.5 * LN_2PI - 0.5 * 2.0f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            br.total,
            br.neg_log_z + br.neg_log_z_hat + br.log_z_tilde,
            epsilon = 0.0
        );
        // The floor for this geometry.
        assert!(br.total >= lower_bound(1, 1, 1.0).unwrap());
    }

    #[test]
    fn energy_distinguishes_equality_from_inequality_breach() {
        let model = zero_model(1, 2);
        let site = NaturalTuple::constant(2, 0.0, 1.0);
        let cavity = NaturalTuple::constant(2, 0.0, 1.0);
        let bad_marginal = NaturalTuple::constant(2, 0.5, 2.0);
        assert!(matches!(
            energy(&model, &bad_marginal, &cavity, &site, EPS),
            Err(SsepError::EqualityConstraint { .. })
        ));
        let thin_site = NaturalTuple::constant(2, 0.0, EPS / 2.0);
        let marginal = thin_site.add(&cavity);
        assert!(matches!(
            energy(&model, &marginal, &cavity, &thin_site, EPS),
            Err(SsepError::InequalityConstraint { role: "site", .. })
        ));
    }

    #[test]
    fn lower_bound_values() {
        // n = 10, d = 25, σ = 0.005.
        let lb = lower_bound(10, 25, 0.005 * 0.005).unwrap();
        assert_abs_diff_eq!(lb, -52.458, epsilon = 5e-3);
        // σ² = 1/(2π): the first term vanishes.
        let lb = lower_bound(7, 4, 1.0 / (2.0 * std::f64::consts::PI)).unwrap();
        assert_abs_diff_eq!(lb, -2.0 * 2.0f64.ln(), epsilon = 1e-12);
        // Degenerate counts rejected.
        assert!(lower_bound(0, 3, 1.0).is_err());
        assert!(lower_bound(3, 0, 1.0).is_err());
    }

    #[test]
    fn diagnostic_energy_matches_checked_energy_at_consistent_points() {
        let x = DMatrix::from_row_slice(2, 2, &[0.5, -0.2, 0.1, 0.9]);
        let y = DVector::from_row_slice(&[0.3, -0.4]);
        let model = ModelInstance::new(x, y, 0.8, 0.3, 1.5).unwrap();
        let site = NaturalTuple::constant(2, 0.1, 0.7);
        let moments = model::posterior_moments(&model, &site).unwrap();
        let marginal = moments.marginal_naturals();
        let checked = energy_from_site(&model, &marginal, &site, EPS).unwrap();
        let lenient = energy_diagnostic(&model, &site, &moments);
        assert_abs_diff_eq!(checked.total, lenient, epsilon = 1e-10);
    }
}
