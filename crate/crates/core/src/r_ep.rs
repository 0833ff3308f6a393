//! Damped sequential EP.
//!
//! Sites are swept in ascending index order; the posterior moments are
//! refactorized once per sweep, not per site, so a sweep costs one
//! factorization plus d scalar tilted-moment evaluations. The positivity
//! floor `ε` is enforced by clamping both the cavity precision and the
//! proposed site precision, which mirrors the constraints under which the
//! double-loop solver operates.

use crate::energy::energy_diagnostic;
use crate::error::{Result, SsepError};
use crate::model::{posterior_moments, ModelInstance, NaturalTuple, PosteriorMoments};
use crate::tilted::tilted_moments;

/// Outcome of a solver run (shared by the sequential and double-loop solvers).
#[derive(Debug, Clone)]
pub struct EPResult {
    /// Final site parameters ṽ.
    pub site: NaturalTuple,
    /// Moments of the Gaussian approximation at the final sites.
    pub moments: PosteriorMoments,
    /// One energy value per sweep (sequential) or per outer iteration
    /// (double loop). Sequential entries are diagnostic and may be `±∞`
    /// while iterates are infeasible.
    pub energy_trace: Vec<f64>,
    /// Whether the convergence criterion fired before the iteration cap.
    pub converged: bool,
    /// Number of sweeps (sequential) or outer iterations (double loop).
    pub iterations: usize,
    /// The quantity compared against the tolerance on the last iteration:
    /// sup-norm site change for the sequential solver, energy decrease for
    /// the double loop. `converged` implies `max_delta < tol`.
    pub max_delta: f64,
}

#[derive(Debug, Clone)]
pub struct RepOptions {
    /// Damping factor τ ∈ (0, 1]; the accepted site is
    /// `τ · proposed + (1 − τ) · old` in natural parameters.
    pub damping: f64,
    /// Maximum number of full sweeps.
    pub max_iter: usize,
    /// Sup-norm tolerance on the per-sweep site parameter change.
    pub tol: f64,
    /// Positivity floor for site and cavity precisions.
    pub eps: f64,
}

impl Default for RepOptions {
    fn default() -> Self {
        Self {
            damping: 0.9,
            max_iter: 1000,
            tol: 1e-6,
            eps: 1e-6,
        }
    }
}

/// Starting sites: the Gaussian that moment-matches the exact prior factor
/// (zero mean, variance `p_s · v_s`). The pure-slab limit is then already a
/// fixed point.
pub fn initial_site(model: &ModelInstance, eps: f64) -> NaturalTuple {
    let prec = (1.0 / (model.slab_prob() * model.slab_var())).max(eps);
    NaturalTuple::constant(model.d(), 0.0, prec)
}

/// One site update: form the cavity from the current marginal, moment-match
/// against the tilted distribution, clamp precisions to `ε`, and damp.
///
/// `moments` must be the factorization of `site`; within a sweep it is the
/// factorization from the start of the sweep.
pub fn rep_site_update(
    i: usize,
    site: &NaturalTuple,
    moments: &PosteriorMoments,
    model: &ModelInstance,
    damping: f64,
    eps: f64,
) -> Result<NaturalTuple> {
    let q2 = 1.0 / moments.marg_var[i];
    let q1 = moments.mean[i] * q2;
    let cav_2 = (q2 - site.second()[i]).max(eps);
    let cav_1 = q1 - site.first()[i];

    let tm = tilted_moments(cav_1, cav_2, model.slab_prob(), model.slab_var())?;
    let var_p = tm.variance();
    if !(var_p > 0.0) {
        return Err(SsepError::DegenerateTiltedVariance {
            index: i,
            value: var_p,
        });
    }
    let proposed_2 = (1.0 / var_p - cav_2).max(eps);
    let proposed_1 = tm.mean / var_p - cav_1;

    let new_2 = damping * proposed_2 + (1.0 - damping) * site.second()[i];
    let new_1 = damping * proposed_1 + (1.0 - damping) * site.first()[i];
    let mut out = site.clone();
    out.set_component(i, new_1, new_2);
    Ok(out)
}

/// Runs sequential EP from the default starting sites.
pub fn run_rep(model: &ModelInstance, opts: &RepOptions) -> Result<EPResult> {
    let site0 = initial_site(model, opts.eps);
    run_rep_from(model, site0, opts)
}

/// Runs sequential EP from explicit starting sites (used for warm starts and
/// for probing fixed points found by other solvers).
pub fn run_rep_from(
    model: &ModelInstance,
    site0: NaturalTuple,
    opts: &RepOptions,
) -> Result<EPResult> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(SsepError::InvalidArgument(format!(
            "damping must lie in (0, 1], got {}",
            opts.damping
        )));
    }
    if opts.max_iter == 0 {
        return Err(SsepError::InvalidArgument("max_iter must be at least 1".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(SsepError::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    if site0.dim() != model.d() {
        return Err(SsepError::DimensionMismatch {
            context: "site parameters",
            expected: model.d(),
            got: site0.dim(),
        });
    }
    site0.check_floor("site", opts.eps)?;

    let mut site = site0;
    let mut moments = posterior_moments(model, &site)?;
    let mut energy_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut max_delta = f64::INFINITY;

    for sweep in 1..=opts.max_iter {
        let previous = site.clone();
        for i in 0..model.d() {
            site = rep_site_update(i, &site, &moments, model, opts.damping, opts.eps)?;
        }
        moments = posterior_moments(model, &site)?;
        energy_trace.push(energy_diagnostic(model, &site, &moments));
        max_delta = site.sup_distance(&previous);
        iterations = sweep;
        if max_delta < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(EPResult {
        site,
        moments,
        energy_trace,
        converged,
        iterations,
        max_delta,
    })
}
