//! The regression model with spike-and-slab coefficient priors and the
//! Gaussian approximation of its posterior.
//!
//! The approximation multiplies the Gaussian likelihood `N(y|Xw, σ²I)` with
//! one Gaussian site factor `exp{ṽ₁ᵢ wᵢ − ½ ṽ₂ᵢ wᵢ²}` per coefficient, which
//! yields an unnormalized Gaussian `N(w|m, A⁻¹)` with
//!
//! ```text
//! A = σ⁻² XᵀX + diag(ṽ₂),    m = A⁻¹ (ṽ₁ + σ⁻² Xᵀy).
//! ```
//!
//! Two factorization strategies are provided: a d×d Cholesky of `A`, and an
//! n×n Cholesky of `σ²I + X diag(ṽ₂)⁻¹ Xᵀ` obtained from the Woodbury
//! identity, which is the cheaper route when there are fewer instances than
//! coefficients. [`posterior_moments`] picks between them; both are public so
//! they can be cross-checked.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, SsepError};
use crate::math::LN_2PI;

/// Slab probabilities are clamped into `[SLAB_PROB_CLAMP, 1 − SLAB_PROB_CLAMP]`
/// at construction so the prior log-odds stay finite.
pub const SLAB_PROB_CLAMP: f64 = 1e-12;

/// A regression problem: design matrix, targets, noise variance and the
/// two spike-and-slab prior parameters.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    x: DMatrix<f64>,
    y: DVector<f64>,
    noise_var: f64,
    slab_prob: f64,
    slab_var: f64,
    // cached products reused by every factorization
    xty: DVector<f64>,
    yty: f64,
    xtx: Option<DMatrix<f64>>,
    rho_s: f64,
}

impl ModelInstance {
    /// Builds a model instance, validating shapes and parameter ranges.
    ///
    /// `slab_prob` must lie strictly inside (0, 1); values closer than
    /// [`SLAB_PROB_CLAMP`] to the endpoints are clamped.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        noise_var: f64,
        slab_prob: f64,
        slab_var: f64,
    ) -> Result<Self> {
        let n = x.nrows();
        let d = x.ncols();
        if n == 0 || d == 0 {
            return Err(SsepError::InvalidModel(format!(
                "design matrix must be non-empty, got {n}x{d}"
            )));
        }
        if y.len() != n {
            return Err(SsepError::DimensionMismatch {
                context: "targets",
                expected: n,
                got: y.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(SsepError::InvalidModel("non-finite entry in data".into()));
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(SsepError::InvalidModel(format!(
                "noise variance must be positive, got {noise_var}"
            )));
        }
        if !(slab_var.is_finite() && slab_var > 0.0) {
            return Err(SsepError::InvalidModel(format!(
                "slab variance must be positive, got {slab_var}"
            )));
        }
        if !(slab_prob > 0.0 && slab_prob < 1.0) {
            return Err(SsepError::InvalidModel(format!(
                "slab probability must lie in the open interval (0, 1), got {slab_prob}"
            )));
        }
        let slab_prob = slab_prob.clamp(SLAB_PROB_CLAMP, 1.0 - SLAB_PROB_CLAMP);
        let xty = x.transpose() * &y;
        let yty = y.dot(&y);
        // The d×d Gram matrix is only worth caching when the direct path applies.
        let xtx = (n >= d).then(|| x.transpose() * &x);
        let rho_s = slab_prob.ln() - (-slab_prob).ln_1p();
        Ok(Self {
            x,
            y,
            noise_var,
            slab_prob,
            slab_var,
            xty,
            yty,
            xtx,
            rho_s,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn slab_prob(&self) -> f64 {
        self.slab_prob
    }

    pub fn slab_var(&self) -> f64 {
        self.slab_var
    }

    /// Prior log-odds of the slab, `log(p_s) − log(1 − p_s)`.
    pub fn slab_log_odds(&self) -> f64 {
        self.rho_s
    }

    pub(crate) fn yty(&self) -> f64 {
        self.yty
    }

    pub(crate) fn xty(&self) -> &DVector<f64> {
        &self.xty
    }
}

/// Paired first/second natural parameters of d independent Gaussian factors.
///
/// The same shape serves three roles: per-coordinate marginals, site factors
/// and cavities. Role-specific positivity floors are checked at the point of
/// use via [`NaturalTuple::check_floor`].
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalTuple {
    first: DVector<f64>,
    second: DVector<f64>,
}

impl NaturalTuple {
    pub fn new(first: DVector<f64>, second: DVector<f64>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(SsepError::DimensionMismatch {
                context: "natural parameter tuple",
                expected: first.len(),
                got: second.len(),
            });
        }
        if first.iter().chain(second.iter()).any(|v| !v.is_finite()) {
            return Err(SsepError::NonFinite("natural parameter tuple"));
        }
        Ok(Self { first, second })
    }

    /// Tuple with every component equal to `(first, second)`.
    pub fn constant(d: usize, first: f64, second: f64) -> Self {
        Self {
            first: DVector::repeat(d, first),
            second: DVector::repeat(d, second),
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn first(&self) -> &DVector<f64> {
        &self.first
    }

    pub fn second(&self) -> &DVector<f64> {
        &self.second
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            first: &self.first * factor,
            second: &self.second * factor,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self {
            first: &self.first + &other.first,
            second: &self.second + &other.second,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self {
            first: &self.first - &other.first,
            second: &self.second - &other.second,
        }
    }

    /// Sup-norm distance over both parameter vectors.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        let a = (&self.first - &other.first).amax();
        let b = (&self.second - &other.second).amax();
        a.max(b)
    }

    /// Copy with component `i` replaced.
    pub fn with_component(&self, i: usize, first: f64, second: f64) -> Self {
        let mut out = self.clone();
        out.first[i] = first;
        out.second[i] = second;
        out
    }

    pub(crate) fn set_component(&mut self, i: usize, first: f64, second: f64) {
        self.first[i] = first;
        self.second[i] = second;
    }

    pub fn min_second(&self) -> f64 {
        self.second.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Checks `second ⪰ floor` componentwise (strict `≥`, no slack).
    pub fn check_floor(&self, role: &'static str, floor: f64) -> Result<()> {
        for (i, &v) in self.second.iter().enumerate() {
            if !(v >= floor) {
                return Err(SsepError::InequalityConstraint {
                    role,
                    index: i,
                    value: v,
                    floor,
                });
            }
        }
        Ok(())
    }
}

/// Mean, marginal variances and the factorization bookkeeping of the
/// Gaussian approximation at a given set of site parameters.
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    /// Posterior mean `m = A⁻¹(ṽ₁ + σ⁻²Xᵀy)`.
    pub mean: DVector<f64>,
    /// Marginal variances `diag(A⁻¹)`.
    pub marg_var: DVector<f64>,
    /// `log det A`.
    pub log_det_a: f64,
    /// `½ (ṽ₁ + σ⁻²Xᵀy)ᵀ m`, the exponent piece of the normalization constant.
    pub quadratic_term: f64,
}

impl PosteriorMoments {
    /// Natural parameters of the per-coordinate marginals:
    /// `v₂ᵢ = 1/var_i`, `v₁ᵢ = m_i/var_i`.
    pub fn marginal_naturals(&self) -> NaturalTuple {
        let second = self.marg_var.map(|v| 1.0 / v);
        let first = self.mean.component_mul(&second);
        NaturalTuple { first, second }
    }
}

fn validate_site(model: &ModelInstance, site: &NaturalTuple) -> Result<()> {
    if site.dim() != model.d() {
        return Err(SsepError::DimensionMismatch {
            context: "site parameters",
            expected: model.d(),
            got: site.dim(),
        });
    }
    // All site precisions must be positive for A to be guaranteed SPD.
    for (i, &v) in site.second().iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SsepError::InequalityConstraint {
                role: "site",
                index: i,
                value: v,
                floor: 0.0,
            });
        }
    }
    Ok(())
}

/// Moments of the Gaussian approximation, using the d×d factorization when
/// `n ≥ d` and the Woodbury n×n factorization otherwise.
pub fn posterior_moments(model: &ModelInstance, site: &NaturalTuple) -> Result<PosteriorMoments> {
    if model.n() >= model.d() {
        posterior_moments_direct(model, site)
    } else {
        posterior_moments_woodbury(model, site)
    }
}

/// Same path selection as [`posterior_moments`], additionally returning the
/// full posterior covariance `A⁻¹` (needed by curvature-exact solvers).
pub fn posterior_moments_with_cov(
    model: &ModelInstance,
    site: &NaturalTuple,
) -> Result<(PosteriorMoments, DMatrix<f64>)> {
    let (moments, cov) = if model.n() >= model.d() {
        direct_impl(model, site, true)?
    } else {
        woodbury_impl(model, site, true)?
    };
    Ok((moments, cov.expect("covariance requested")))
}

/// d×d route: Cholesky of `A = σ⁻²XᵀX + diag(ṽ₂)`.
pub fn posterior_moments_direct(
    model: &ModelInstance,
    site: &NaturalTuple,
) -> Result<PosteriorMoments> {
    Ok(direct_impl(model, site, false)?.0)
}

/// n×n route: `A⁻¹ = D⁻¹ − D⁻¹Xᵀ B⁻¹ X D⁻¹` with `B = σ²I + X D⁻¹ Xᵀ`
/// and `D = diag(ṽ₂)`; `log det A = Σ log ṽ₂ᵢ + log det B − n log σ²`.
pub fn posterior_moments_woodbury(
    model: &ModelInstance,
    site: &NaturalTuple,
) -> Result<PosteriorMoments> {
    Ok(woodbury_impl(model, site, false)?.0)
}

fn direct_impl(
    model: &ModelInstance,
    site: &NaturalTuple,
    want_cov: bool,
) -> Result<(PosteriorMoments, Option<DMatrix<f64>>)> {
    validate_site(model, site)?;
    let d = model.d();
    let inv_noise = 1.0 / model.noise_var;
    let mut a = match &model.xtx {
        Some(xtx) => xtx * inv_noise,
        None => (model.x.transpose() * &model.x) * inv_noise,
    };
    for i in 0..d {
        a[(i, i)] += site.second()[i];
    }
    let chol = Cholesky::new(a).ok_or(SsepError::NotPositiveDefinite("posterior precision"))?;
    let log_det_a = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let eta = site.first() + model.xty() * inv_noise;
    let mean = chol.solve(&eta);
    let quadratic_term = 0.5 * eta.dot(&mean);
    let cov = chol.inverse();
    let marg_var = cov.diagonal().clone_owned();
    let moments = finish_moments(mean, marg_var, log_det_a, quadratic_term)?;
    Ok((moments, want_cov.then_some(cov)))
}

fn woodbury_impl(
    model: &ModelInstance,
    site: &NaturalTuple,
    want_cov: bool,
) -> Result<(PosteriorMoments, Option<DMatrix<f64>>)> {
    validate_site(model, site)?;
    let n = model.n();
    let d = model.d();
    let inv_noise = 1.0 / model.noise_var;
    let d_inv = site.second().map(|v| 1.0 / v);

    // X D⁻¹ Xᵀ scaled column by column.
    let mut x_dinv = model.x.clone();
    for j in 0..d {
        let mut col = x_dinv.column_mut(j);
        col *= d_inv[j];
    }
    let mut b = &x_dinv * model.x.transpose();
    for i in 0..n {
        b[(i, i)] += model.noise_var;
    }
    let chol = Cholesky::new(b).ok_or(SsepError::NotPositiveDefinite("Woodbury capacitance"))?;
    let log_det_b = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_a = site.second().iter().map(|v| v.ln()).sum::<f64>() + log_det_b
        - n as f64 * model.noise_var.ln();

    // diag(A⁻¹)ᵢ = 1/ṽ₂ᵢ − (xᵢᵀ B⁻¹ xᵢ)/ṽ₂ᵢ², with xᵢ the i-th column of X.
    let z = chol.solve(&model.x);
    let mut marg_var = DVector::zeros(d);
    for i in 0..d {
        let corr = model.x.column(i).dot(&z.column(i));
        marg_var[i] = d_inv[i] - d_inv[i] * d_inv[i] * corr;
    }

    let eta = site.first() + model.xty() * inv_noise;
    let u = eta.component_mul(&d_inv);
    let xu = &model.x * &u;
    let s = chol.solve(&xu);
    let mean = &u - (model.x.transpose() * &s).component_mul(&d_inv);
    // ηᵀm = ηᵀu − (Xu)ᵀB⁻¹(Xu); assembling it from the n-space pieces skips
    // one cancellation-prone pass through m.
    let quadratic_term = 0.5 * (eta.dot(&u) - xu.dot(&s));

    let cov = want_cov.then(|| {
        let mut cov = model.x.transpose() * z;
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] *= -d_inv[i] * d_inv[j];
            }
            cov[(i, i)] += d_inv[i];
        }
        cov
    });
    let moments = finish_moments(mean, marg_var, log_det_a, quadratic_term)?;
    Ok((moments, cov))
}

fn finish_moments(
    mean: DVector<f64>,
    marg_var: DVector<f64>,
    log_det_a: f64,
    quadratic_term: f64,
) -> Result<PosteriorMoments> {
    if marg_var.iter().any(|&v| !(v > 0.0)) {
        return Err(SsepError::NotPositiveDefinite("marginal variances"));
    }
    if mean.iter().any(|v| !v.is_finite()) || !log_det_a.is_finite() || !quadratic_term.is_finite()
    {
        return Err(SsepError::NonFinite("posterior moments"));
    }
    Ok(PosteriorMoments {
        mean,
        marg_var,
        log_det_a,
        quadratic_term,
    })
}

/// Log of the normalization constant of the site-tilted likelihood,
///
/// ```text
/// log ∫ N(y|Xw, σ²I) Π_i exp{ṽ₁ᵢwᵢ − ½ṽ₂ᵢwᵢ²} dw
///   = −(n/2)log(2πσ²) − ½σ⁻²yᵀy + ½ηᵀA⁻¹η − ½ log det A + (d/2)log(2π)
/// ```
///
/// with `η = ṽ₁ + σ⁻²Xᵀy`, evaluated from the factorization (no explicit
/// inverse, no exponentials of energy-scale quantities).
pub fn log_z(model: &ModelInstance, site: &NaturalTuple) -> Result<f64> {
    let moments = posterior_moments(model, site)?;
    Ok(log_z_with_moments(model, &moments))
}

/// Same as [`log_z`], reusing an existing factorization result.
pub fn log_z_with_moments(model: &ModelInstance, moments: &PosteriorMoments) -> f64 {
    let n = model.n() as f64;
    let d = model.d() as f64;
    -0.5 * n * (LN_2PI + model.noise_var.ln()) - 0.5 * model.yty() / model.noise_var
        + moments.quadratic_term
        - 0.5 * moments.log_det_a
        + 0.5 * d * LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy(n: usize, d: usize, entries: &[f64], y: &[f64]) -> ModelInstance {
        ModelInstance::new(
            DMatrix::from_row_slice(n, d, entries),
            DVector::from_row_slice(y),
            1.0,
            0.5,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let x = DMatrix::zeros(2, 3);
        let y = DVector::zeros(2);
        assert!(ModelInstance::new(x.clone(), y.clone(), 0.0, 0.5, 1.0).is_err());
        assert!(ModelInstance::new(x.clone(), y.clone(), 1.0, 0.0, 1.0).is_err());
        assert!(ModelInstance::new(x.clone(), y.clone(), 1.0, 1.0, 1.0).is_err());
        assert!(ModelInstance::new(x.clone(), y.clone(), 1.0, 0.5, -1.0).is_err());
        assert!(ModelInstance::new(x, DVector::zeros(3), 1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn slab_prob_is_clamped_not_rejected_near_endpoints() {
        let x = DMatrix::zeros(1, 1);
        let y = DVector::zeros(1);
        let m = ModelInstance::new(x, y, 1.0, 1.0 - 1e-15, 1.0).unwrap();
        assert_eq!(m.slab_prob(), 1.0 - SLAB_PROB_CLAMP);
        assert!(m.slab_log_odds().is_finite());
    }

    #[test]
    fn zero_design_is_prior_only() {
        // X = 0, ṽ₁ = 0, ṽ₂ = 1 → A = I, m = 0, marginal variances 1.
        let model = toy(2, 3, &[0.0; 6], &[0.0, 0.0]);
        let site = NaturalTuple::constant(3, 0.0, 1.0);
        let mom = posterior_moments(&model, &site).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(mom.mean[i], 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(mom.marg_var[i], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn scalar_closed_form() {
        // d = n = 1, X = [[1]], y = [1], σ² = 1, ṽ = (0, 1): A = 2, m = 1/2.
        let model = toy(1, 1, &[1.0], &[1.0]);
        let site = NaturalTuple::constant(1, 0.0, 1.0);
        let mom = posterior_moments(&model, &site).unwrap();
        assert_abs_diff_eq!(mom.mean[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(mom.marg_var[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(mom.log_det_a, 2.0f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn decoupled_log_z_is_zero() {
        // X = 0, y = 0, σ² = 1, ṽ = (0, 1): the likelihood factor integrates
        // N(0|0,1) against a standard Gaussian kernel, so Z = 1 exactly.
        let model = toy(1, 1, &[0.0], &[0.0]);
        let site = NaturalTuple::constant(1, 0.0, 1.0);
        assert_abs_diff_eq!(log_z(&model, &site).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn woodbury_matches_dense_inverse_oracle() {
        // Fixed 3×8 instance; the dense-inverse oracle is independent of both
        // Cholesky routes.
        let entries: Vec<f64> = (0..24)
            .map(|k| ((k * 2654435761u64 % 1000) as f64) / 500.0 - 1.0)
            .collect();
        let y = vec![0.3, -1.2, 0.7];
        let model = toy(3, 8, &entries, &y);
        let site = NaturalTuple::new(
            DVector::from_fn(8, |i, _| 0.1 * i as f64 - 0.3),
            DVector::from_fn(8, |i, _| 0.5 + 0.2 * i as f64),
        )
        .unwrap();

        let inv_noise = 1.0 / model.noise_var();
        let mut a = model.design().transpose() * model.design() * inv_noise;
        for i in 0..8 {
            a[(i, i)] += site.second()[i];
        }
        let a_inv = a.clone().try_inverse().unwrap();
        let eta = site.first() + model.design().transpose() * model.targets() * inv_noise;
        let m_ref = &a_inv * &eta;

        let wood = posterior_moments_woodbury(&model, &site).unwrap();
        let direct = posterior_moments_direct(&model, &site).unwrap();
        for i in 0..8 {
            assert_abs_diff_eq!(wood.mean[i], m_ref[i], epsilon = 1e-10 * m_ref[i].abs().max(1.0));
            assert_abs_diff_eq!(
                wood.marg_var[i],
                a_inv[(i, i)],
                epsilon = 1e-10 * a_inv[(i, i)]
            );
            assert_abs_diff_eq!(
                wood.mean[i],
                direct.mean[i],
                epsilon = 1e-10 * direct.mean[i].abs().max(1.0)
            );
            assert_abs_diff_eq!(
                wood.marg_var[i],
                direct.marg_var[i],
                epsilon = 1e-10 * direct.marg_var[i]
            );
        }
        assert_abs_diff_eq!(
            wood.log_det_a,
            direct.log_det_a,
            epsilon = 1e-10 * direct.log_det_a.abs()
        );
    }

    #[test]
    fn prior_only_moments_are_analytic_for_any_scaling() {
        // With X = 0 the posterior decouples: m = ṽ₁/ṽ₂, var = 1/ṽ₂,
        // whatever the noise variance.
        for &noise in &[0.3, 1.0, 7.5] {
            let model = ModelInstance::new(
                DMatrix::zeros(2, 4),
                DVector::zeros(2),
                noise,
                0.5,
                1.0,
            )
            .unwrap();
            let site = NaturalTuple::new(
                DVector::from_row_slice(&[0.4, -1.0, 2.0, 0.0]),
                DVector::from_row_slice(&[0.5, 1.0, 4.0, 8.0]),
            )
            .unwrap();
            let mom = posterior_moments(&model, &site).unwrap();
            for i in 0..4 {
                assert_abs_diff_eq!(
                    mom.mean[i],
                    site.first()[i] / site.second()[i],
                    epsilon = 1e-13
                );
                assert_abs_diff_eq!(mom.marg_var[i], 1.0 / site.second()[i], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn nonpositive_site_precision_is_a_typed_error() {
        let model = toy(1, 2, &[0.1, 0.2], &[0.0]);
        let site = NaturalTuple::new(
            DVector::zeros(2),
            DVector::from_row_slice(&[1.0, -0.5]),
        )
        .unwrap();
        match posterior_moments(&model, &site) {
            Err(SsepError::InequalityConstraint { index: 1, .. }) => {}
            other => panic!("expected inequality violation, got {other:?}"),
        }
    }

    #[test]
    fn marginal_naturals_round_trip() {
        let model = toy(1, 1, &[1.0], &[1.0]);
        let site = NaturalTuple::constant(1, 0.0, 1.0);
        let mom = posterior_moments(&model, &site).unwrap();
        let v = mom.marginal_naturals();
        assert_abs_diff_eq!(v.second()[0], 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(v.first()[0], 1.0, epsilon = 1e-13);
    }
}
