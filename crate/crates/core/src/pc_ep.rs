//! The provably convergent double-loop solver.
//!
//! Each outer iteration holds the marginal parameters `v` fixed and
//! maximizes the energy over the site parameters `ṽ` (the cavity is
//! identified as `v − ṽ`), subject to the box `ε ≤ ṽ₂ᵢ ≤ v₂ᵢ − ε`. The
//! inner objective is concave, so the box-constrained quasi-Newton ascent
//! finds its global maximum. Lagrange multipliers are then read off the
//! stationarity conditions
//!
//! ```text
//! λ₁ᵢ = −E_Q[wᵢ] = −E_P[wᵢ],   λ₂ᵢ + μ₁ᵢ = ½E_P[wᵢ²],   λ₂ᵢ + μ₂ᵢ = ½E_Q[wᵢ²],
//! ```
//!
//! with `μ₁` attached to the cavity floor and `μ₂` to the site floor, and the
//! outer step minimizes `λ₁ᵀv₁ + λ₂ᵀv₂ + log Z̃(v)` in closed form:
//! `v₂ᵢ = 1/(2λ₂ᵢ − λ₁ᵢ²)` clipped at `3ε`, `v₁ᵢ = −λ₁ᵢ v₂ᵢ`. Strong duality
//! makes every outer step decrease the inner-maximized energy, and the
//! positivity floors bound that energy from below, so the iteration
//! converges. An energy increase beyond slack is therefore reported as a
//! hard error, not smoothed over.

use nalgebra::{DMatrix, DVector};

use crate::energy::log_z_tilde;
use crate::error::{Result, SsepError};
use crate::math::LN_2PI;
use crate::model::{
    log_z_with_moments, posterior_moments, posterior_moments_with_cov, ModelInstance,
    NaturalTuple, PosteriorMoments,
};
use crate::optim::{minimize_box, OptimOptions};
use crate::r_ep::EPResult;
use crate::tilted::{tilted_moments, TiltedMoments};

/// Distance to a bound below which it is treated as active.
pub const ACTIVE_SET_TOL: f64 = 1e-12;

/// Positive multiplier values beyond this are a KKT failure.
pub const MU_TOL: f64 = 1e-8;

/// Energy increases up to `1e-8 · (1 + |E|)` are attributed to inexact inner
/// solves; anything larger aborts the run.
const DESCENT_SLACK_SCALE: f64 = 1e-8;

/// Which inequality holds with equality at one coordinate of an inner
/// solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveBound {
    Interior,
    /// `ṽ₂ᵢ = ε`
    SiteAtEps,
    /// `v̂₂ᵢ = ε`, i.e. `ṽ₂ᵢ = v₂ᵢ − ε`
    CavityAtEps,
}

/// Multipliers of the inner problem's dual. `mu_1` pairs with the cavity
/// floor, `mu_2` with the site floor; both are `⪯ 0`, and at most one is
/// nonzero per coordinate.
#[derive(Debug, Clone)]
pub struct Multipliers {
    pub lambda_1: DVector<f64>,
    pub lambda_2: DVector<f64>,
    pub mu_1: DVector<f64>,
    pub mu_2: DVector<f64>,
}

/// Maximizer of the energy over `(ṽ, v̂)` at fixed marginals.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub site_star: NaturalTuple,
    pub cavity_star: NaturalTuple,
    /// The inner-maximized energy `E(v)`.
    pub inner_value: f64,
    pub multipliers: Multipliers,
    pub active_set: Vec<ActiveBound>,
    /// Moments of the Gaussian approximation at `site_star`.
    pub moments: PosteriorMoments,
    /// The line search stalled before reaching the gradient tolerance; the
    /// solution is the best iterate found.
    pub degraded: bool,
}

#[derive(Debug, Clone)]
pub struct PcepOptions {
    /// Positivity floor ε.
    pub eps: f64,
    /// Stop when the outer energy decrease falls below this.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Sup-norm tolerance on the projected inner gradient.
    pub inner_tol: f64,
    pub inner_max_iters: usize,
}

impl Default for PcepOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            outer_tol: 1e-8,
            max_outer: 200,
            inner_tol: 1e-8,
            inner_max_iters: 500,
        }
    }
}

/// A finished double-loop run: the standard solver result plus the terminal
/// inner solution (multipliers, active set, cavity), which downstream
/// consumers need for evidence estimates and fixed-point probes.
#[derive(Debug, Clone)]
pub struct PcepRun {
    pub result: EPResult,
    pub terminal: InnerSolution,
}

struct SiteEvaluation {
    moments: PosteriorMoments,
    tilted: Vec<TiltedMoments>,
}

fn evaluate_site(
    model: &ModelInstance,
    marginal: &NaturalTuple,
    site: &NaturalTuple,
) -> Result<SiteEvaluation> {
    let moments = posterior_moments(model, site)?;
    let mut tilted = Vec::with_capacity(model.d());
    for i in 0..model.d() {
        tilted.push(tilted_moments(
            marginal.first()[i] - site.first()[i],
            marginal.second()[i] - site.second()[i],
            model.slab_prob(),
            model.slab_var(),
        )?);
    }
    Ok(SiteEvaluation { moments, tilted })
}

/// Maximizes `E(v, v − ṽ, ṽ)` over `ṽ` with `ṽ₁` free and
/// `ε ≤ ṽ₂ᵢ ≤ v₂ᵢ − ε`, starting from `warm_start` projected into that box.
///
/// The ascent direction uses the gradient
/// `∂E/∂ṽ₁ᵢ = E_P[wᵢ] − E_Q[wᵢ]`,
/// `∂E/∂ṽ₂ᵢ = ½(E_Q[wᵢ²] − E_P[wᵢ²])`,
/// with the full second moment `E_Q[wᵢ²] = var_i + m_i²`. Terminates when the
/// projected gradient sup-norm drops below `opts.inner_tol`.
pub fn inner_maximize(
    model: &ModelInstance,
    marginal: &NaturalTuple,
    warm_start: &NaturalTuple,
    opts: &PcepOptions,
) -> Result<InnerSolution> {
    inner_maximize_with_tol(model, marginal, warm_start, opts, opts.inner_tol)
}

fn inner_maximize_with_tol(
    model: &ModelInstance,
    marginal: &NaturalTuple,
    warm_start: &NaturalTuple,
    opts: &PcepOptions,
    inner_tol: f64,
) -> Result<InnerSolution> {
    let d = model.d();
    let eps = opts.eps;
    marginal.check_floor("marginal", 3.0 * eps)?;
    if warm_start.dim() != d {
        return Err(SsepError::DimensionMismatch {
            context: "inner warm start",
            expected: d,
            got: warm_start.dim(),
        });
    }

    // x = [ṽ₁; ṽ₂].
    let mut lower = DVector::repeat(2 * d, f64::NEG_INFINITY);
    let mut upper = DVector::repeat(2 * d, f64::INFINITY);
    let mut x0 = DVector::zeros(2 * d);
    for i in 0..d {
        lower[d + i] = eps;
        upper[d + i] = marginal.second()[i] - eps;
        x0[i] = warm_start.first()[i];
        x0[d + i] = warm_start.second()[i];
    }

    let log_z_tilde_v = log_z_tilde(marginal, eps)?;
    let slab_var = model.slab_var();
    // Minimize the negated energy. Factorization failures inside the box are
    // reported as +∞ so the line search backs off. The Hessian is exact: the
    // Gaussian part is the covariance of the sufficient statistics
    // (w, −½w∘w) under the approximation, the tilted part the per-site
    // covariance under the tilted distribution.
    let objective = |x: &DVector<f64>, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>| -> f64 {
        let site = NaturalTuple::new(x.rows(0, d).into_owned(), x.rows(d, d).into_owned())
            .expect("in-box iterate");
        let (moments, cov) = match posterior_moments_with_cov(model, &site) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        let mut log_z_hat = 0.0;
        for i in 0..d {
            let c1 = marginal.first()[i] - site.first()[i];
            let c2 = marginal.second()[i] - site.second()[i];
            let tm = match tilted_moments(c1, c2, model.slab_prob(), slab_var) {
                Ok(t) => t,
                Err(_) => return f64::INFINITY,
            };
            log_z_hat += tm.log_partition;
            let e_q1 = moments.mean[i];
            let e_q2 = moments.marg_var[i] + e_q1 * e_q1;
            grad[i] = e_q1 - tm.mean;
            grad[d + i] = 0.5 * (tm.second_moment - e_q2);

            // Per-site curvature from the slab component's raw moments.
            let shrink = 1.0 / (1.0 + c2 * slab_var);
            let mu = c1 * slab_var * shrink;
            let s = slab_var * shrink;
            let r = tm.slab_responsibility;
            let e1 = tm.mean;
            let e2 = tm.second_moment;
            let e3 = r * (mu * mu * mu + 3.0 * mu * s);
            let e4 = r * (mu * mu * mu * mu + 6.0 * mu * mu * s + 3.0 * s * s);
            hess[(i, d + i)] = -0.5 * (e3 - e1 * e2);
            hess[(d + i, i)] = hess[(i, d + i)];
            hess[(i, i)] = e2 - e1 * e1;
            hess[(d + i, d + i)] = 0.25 * (e4 - e2 * e2);
        }
        for i in 0..d {
            for j in 0..d {
                let sij = cov[(i, j)];
                let cross_ij = -sij * moments.mean[j];
                let cross_ji = -sij * moments.mean[i];
                if i == j {
                    hess[(i, j)] += sij;
                    hess[(i, d + j)] += cross_ij;
                    hess[(d + i, j)] += cross_ji;
                    hess[(d + i, d + j)] +=
                        0.5 * sij * sij + moments.mean[i] * sij * moments.mean[j];
                } else {
                    hess[(i, j)] = sij;
                    hess[(i, d + j)] = cross_ij;
                    hess[(d + i, j)] = cross_ji;
                    hess[(d + i, d + j)] =
                        0.5 * sij * sij + moments.mean[i] * sij * moments.mean[j];
                }
            }
        }
        log_z_with_moments(model, &moments) + log_z_hat - log_z_tilde_v
    };

    let optim_opts = OptimOptions {
        tol: inner_tol,
        max_iters: opts.inner_max_iters,
        ..OptimOptions::default()
    };
    let outcome = minimize_box(objective, &x0, &lower, &upper, &optim_opts)?;

    let site_star = NaturalTuple::new(
        outcome.x.rows(0, d).into_owned(),
        outcome.x.rows(d, d).into_owned(),
    )?;
    let cavity_star = marginal.sub(&site_star);
    let eval = evaluate_site(model, marginal, &site_star)?;

    let mut active_set = Vec::with_capacity(d);
    for i in 0..d {
        let flag = if (site_star.second()[i] - eps).abs() <= ACTIVE_SET_TOL {
            ActiveBound::SiteAtEps
        } else if (cavity_star.second()[i] - eps).abs() <= ACTIVE_SET_TOL {
            ActiveBound::CavityAtEps
        } else {
            ActiveBound::Interior
        };
        active_set.push(flag);
    }

    let multipliers = multipliers_from_moments(&eval.moments, &eval.tilted, &active_set)?;
    Ok(InnerSolution {
        site_star,
        cavity_star,
        inner_value: -outcome.value,
        multipliers,
        active_set,
        moments: eval.moments,
        degraded: outcome.line_search_failed,
    })
}

fn multipliers_from_moments(
    moments: &PosteriorMoments,
    tilted: &[TiltedMoments],
    active_set: &[ActiveBound],
) -> Result<Multipliers> {
    let d = moments.mean.len();
    let mut lambda_1 = DVector::zeros(d);
    let mut lambda_2 = DVector::zeros(d);
    let mut mu_1 = DVector::zeros(d);
    let mut mu_2 = DVector::zeros(d);
    for i in 0..d {
        let e_q1 = moments.mean[i];
        let e_q2 = moments.marg_var[i] + e_q1 * e_q1;
        let e_p2 = tilted[i].second_moment;
        lambda_1[i] = -e_q1;
        match active_set[i] {
            ActiveBound::SiteAtEps => {
                // Cavity floor inactive: μ₁ = 0 and λ₂ comes from the tilted side.
                lambda_2[i] = 0.5 * e_p2;
                mu_2[i] = 0.5 * e_q2 - lambda_2[i];
            }
            ActiveBound::CavityAtEps => {
                lambda_2[i] = 0.5 * e_q2;
                mu_1[i] = 0.5 * e_p2 - lambda_2[i];
            }
            ActiveBound::Interior => {
                // Both expressions coincide up to the inner tolerance; the
                // Gaussian side is already available from the factorization.
                lambda_2[i] = 0.5 * e_q2;
            }
        }
        for mu in [&mut mu_1[i], &mut mu_2[i]] {
            if *mu > MU_TOL {
                return Err(SsepError::KktViolation {
                    index: i,
                    value: *mu,
                });
            }
            // Sub-tolerance positive values are inner-solve noise.
            *mu = mu.min(0.0);
        }
    }
    Ok(Multipliers {
        lambda_1,
        lambda_2,
        mu_1,
        mu_2,
    })
}

/// Recomputes the multipliers of an inner solution from its moments and
/// active set. Errors if a recovered μ is positive beyond [`MU_TOL`], which
/// signals an insufficiently converged inner solve.
pub fn extract_multipliers(sol: &InnerSolution, model: &ModelInstance) -> Result<Multipliers> {
    let d = model.d();
    let mut tilted = Vec::with_capacity(d);
    for i in 0..d {
        tilted.push(tilted_moments(
            sol.cavity_star.first()[i],
            sol.cavity_star.second()[i],
            model.slab_prob(),
            model.slab_var(),
        )?);
    }
    multipliers_from_moments(&sol.moments, &tilted, &sol.active_set)
}

/// Closed-form outer step: `v₂ᵢ = 1/(2λ₂ᵢ − λ₁ᵢ²)` wherever that is at least
/// `3ε` (clipped to `3ε` otherwise, including nonpositive denominators), and
/// `v₁ᵢ = −λ₁ᵢ · v₂ᵢ`.
pub fn outer_update(mult: &Multipliers, eps: f64) -> NaturalTuple {
    let d = mult.lambda_1.len();
    let floor = 3.0 * eps;
    let mut first = DVector::zeros(d);
    let mut second = DVector::zeros(d);
    for i in 0..d {
        let denom = 2.0 * mult.lambda_2[i] - mult.lambda_1[i] * mult.lambda_1[i];
        let v2 = if denom > 0.0 { 1.0 / denom } else { f64::NEG_INFINITY };
        let v2 = if v2 >= floor { v2 } else { floor };
        second[i] = v2;
        first[i] = -mult.lambda_1[i] * v2;
    }
    NaturalTuple::new(first, second).expect("finite outer update")
}

/// Runs the double loop to convergence of the outer energy.
///
/// The marginals start at `v₂ = 2/v_s`, `v₁ = 0` and the warm start is the
/// always-feasible midpoint `ṽ = v/2`. The inner tolerance is halved (down to
/// 1e-10) whenever an outer step's decrease falls below `10 · outer_tol`, so
/// late iterations cannot break the descent argument through a loose inner
/// solve. An energy increase beyond `1e-8 · (1 + |E|)` aborts with
/// [`SsepError::DescentViolation`].
pub fn run_pcep(model: &ModelInstance, opts: &PcepOptions) -> Result<PcepRun> {
    if !(opts.eps > 0.0 && opts.outer_tol > 0.0 && opts.inner_tol > 0.0) {
        return Err(SsepError::InvalidArgument(
            "eps and tolerances must be positive".into(),
        ));
    }
    if opts.max_outer == 0 || opts.inner_max_iters == 0 {
        return Err(SsepError::InvalidArgument(
            "iteration caps must be at least 1".into(),
        ));
    }

    let d = model.d();
    let v2_init = (2.0 / model.slab_var()).max(3.0 * opts.eps);
    let mut marginal = NaturalTuple::constant(d, 0.0, v2_init);
    let mut warm = marginal.scale(0.5);
    let mut inner_tol = opts.inner_tol;

    let mut energy_trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut max_delta = f64::INFINITY;
    let mut terminal: Option<InnerSolution> = None;

    for outer in 1..=opts.max_outer {
        let sol = inner_maximize_with_tol(model, &marginal, &warm, opts, inner_tol)?;
        let e = sol.inner_value;
        if let Some(&prev) = energy_trace.last() {
            let slack = DESCENT_SLACK_SCALE * (1.0 + prev.abs());
            if e > prev + slack {
                return Err(SsepError::DescentViolation {
                    iteration: outer,
                    previous: prev,
                    current: e,
                    slack,
                });
            }
            let delta = prev - e;
            max_delta = delta;
            energy_trace.push(e);
            if delta < opts.outer_tol {
                converged = true;
                terminal = Some(sol);
                break;
            }
            if delta < 10.0 * opts.outer_tol {
                inner_tol = (0.5 * inner_tol).max(1e-10);
            }
        } else {
            energy_trace.push(e);
        }

        let next = outer_update(&sol.multipliers, opts.eps);
        // Project the previous sites into the new box as the next warm start.
        let w1 = sol.site_star.first().clone_owned();
        let mut w2 = sol.site_star.second().clone_owned();
        for i in 0..d {
            w2[i] = w2[i].clamp(opts.eps, next.second()[i] - opts.eps);
        }
        warm = NaturalTuple::new(w1, w2)?;
        terminal = Some(sol);
        marginal = next;
        debug_assert!(marginal.min_second() >= 3.0 * opts.eps);
    }

    let terminal = terminal.expect("at least one outer iteration");
    let iterations = energy_trace.len();
    Ok(PcepRun {
        result: EPResult {
            site: terminal.site_star.clone(),
            moments: terminal.moments.clone(),
            energy_trace,
            converged,
            iterations,
            max_delta,
        },
        terminal,
    })
}

/// Marginal-likelihood estimate at an inner solution: the site scales are
/// recovered as `z̃ᵢ = log Ẑᵢ(v̂ᵢ) − ½log(2π/v₂ᵢ) − v₁ᵢ²/(2v₂ᵢ)` so that
/// `Σᵢ z̃ᵢ + log Z(ṽ)` approximates `log P(y|X)`. Exact in the pure-slab
/// limit.
pub fn approx_log_evidence(model: &ModelInstance, sol: &InnerSolution) -> Result<f64> {
    let marginal = sol.site_star.add(&sol.cavity_star);
    let mut total = log_z_with_moments(model, &sol.moments);
    for i in 0..model.d() {
        let tm = tilted_moments(
            sol.cavity_star.first()[i],
            sol.cavity_star.second()[i],
            model.slab_prob(),
            model.slab_var(),
        )?;
        let v1 = marginal.first()[i];
        let v2 = marginal.second()[i];
        let log_z_tilde_i = 0.5 * LN_2PI - 0.5 * v2.ln() + v1 * v1 / (2.0 * v2);
        total += tm.log_partition - log_z_tilde_i;
    }
    Ok(total)
}
