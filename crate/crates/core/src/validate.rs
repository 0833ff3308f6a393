//! Self-contained correctness battery behind `ssep validate`: closed-form
//! limits, factorization cross-checks, gradient identities and
//! oracle-vs-solver agreement at enumerable sizes.

use nalgebra::DVector;

use crate::energy::{log_z_tilde, lower_bound};
use crate::error::Result;
use crate::experiment::{generate_trial, ExperimentConfig};
use crate::model::{
    log_z, posterior_moments, posterior_moments_direct, posterior_moments_woodbury, NaturalTuple,
};
use crate::oracle::{exact_posterior, DEFAULT_MAX_D};
use crate::pc_ep::{approx_log_evidence, run_pcep, ActiveBound, PcepOptions};
use crate::r_ep::{run_rep, RepOptions};
use crate::tilted::tilted_moments;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn pass(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: false,
            detail,
        }
    }
}

fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    match body() {
        Ok((true, detail)) => CheckOutcome::pass(name, detail),
        Ok((false, detail)) => CheckOutcome::fail(name, detail),
        Err(e) => CheckOutcome::fail(name, format!("error: {e}")),
    }
}

fn small_config(d: usize, n_train: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        d,
        n_train,
        n_test: 50,
        n_trials: 1,
        seed,
        ..ExperimentConfig::default()
    }
}

fn woodbury_vs_direct() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..4u64 {
        let data = generate_trial(&small_config(8, 3, 100 + seed), 0)?;
        let site = NaturalTuple::new(
            DVector::from_fn(8, |i, _| 0.2 * (i as f64) - 0.5),
            DVector::from_fn(8, |i, _| 0.4 + 0.3 * (i as f64)),
        )?;
        let a = posterior_moments_direct(&data.train, &site)?;
        let b = posterior_moments_woodbury(&data.train, &site)?;
        for i in 0..8 {
            worst = worst.max((a.mean[i] - b.mean[i]).abs() / a.mean[i].abs().max(1.0));
            worst = worst.max((a.marg_var[i] - b.marg_var[i]).abs() / a.marg_var[i]);
        }
        worst = worst.max((a.log_det_a - b.log_det_a).abs() / a.log_det_a.abs().max(1.0));
    }
    Ok((worst < 1e-9, format!("max relative path disagreement {worst:.2e}")))
}

fn partition_gradients() -> Result<(bool, String)> {
    let h = 1e-6;
    let mut worst = 0.0f64;
    // Moderate noise keeps the normalization constants at O(1) scale, where
    // central differences resolve the identities; the identities themselves
    // are scale-free.
    let config = ExperimentConfig {
        noise_std: 0.5,
        ..small_config(4, 3, 7)
    };
    let data = generate_trial(&config, 0)?;
    let model = &data.train;
    let site = NaturalTuple::constant(4, 0.1, 0.8);
    let moments = posterior_moments(model, &site)?;
    for i in 0..4 {
        let fd1 = (log_z(model, &site.with_component(i, site.first()[i] + h, site.second()[i]))?
            - log_z(model, &site.with_component(i, site.first()[i] - h, site.second()[i]))?)
            / (2.0 * h);
        let fd2 = (log_z(model, &site.with_component(i, site.first()[i], site.second()[i] + h))?
            - log_z(model, &site.with_component(i, site.first()[i], site.second()[i] - h))?)
            / (2.0 * h);
        let m = moments.mean[i];
        let ex2 = moments.marg_var[i] + m * m;
        worst = worst.max((fd1 - m).abs() / m.abs().max(1.0));
        worst = worst.max((fd2 + 0.5 * ex2).abs() / ex2.abs().max(1.0));
    }
    // Tilted partition derivatives.
    let (c1, c2) = (0.6, 1.1);
    let tm = tilted_moments(c1, c2, model.slab_prob(), model.slab_var())?;
    let lp = |a: f64, b: f64| -> Result<f64> {
        Ok(tilted_moments(a, b, model.slab_prob(), model.slab_var())?.log_partition)
    };
    let fd1 = (lp(c1 + h, c2)? - lp(c1 - h, c2)?) / (2.0 * h);
    let fd2 = (lp(c1, c2 + h)? - lp(c1, c2 - h)?) / (2.0 * h);
    worst = worst.max((fd1 - tm.mean).abs() / tm.mean.abs().max(1.0));
    worst = worst.max((fd2 + 0.5 * tm.second_moment).abs() / tm.second_moment.max(1.0));
    // Gaussian-kernel normalizer derivative.
    let v = NaturalTuple::constant(1, 0.7, 1.9);
    let eps = 1e-6;
    let fd = (log_z_tilde(&v.with_component(0, 0.7 + h, 1.9), eps)?
        - log_z_tilde(&v.with_component(0, 0.7 - h, 1.9), eps)?)
        / (2.0 * h);
    worst = worst.max((fd - 0.7 / 1.9).abs() / (0.7f64 / 1.9).max(1.0));
    Ok((worst < 1e-5, format!("max relative gradient error {worst:.2e}")))
}

fn gaussian_limit() -> Result<(bool, String)> {
    let config = ExperimentConfig {
        slab_prob: 1.0 - 1e-12,
        noise_std: 0.1,
        ..small_config(5, 9, 3)
    };
    let data = generate_trial(&config, 0)?;
    let model = &data.train;
    // Exact ridge posterior.
    let mut prec = model.design().transpose() * model.design() / model.noise_var();
    for i in 0..5 {
        prec[(i, i)] += 1.0 / model.slab_var();
    }
    let cov = prec.try_inverse().expect("spd");
    let mu = &cov * (model.design().transpose() * model.targets() / model.noise_var());

    let rep = run_rep(model, &RepOptions::default())?;
    let pcep = run_pcep(model, &PcepOptions::default())?;
    let mut worst = 0.0f64;
    for i in 0..5 {
        worst = worst.max((rep.moments.mean[i] - mu[i]).abs());
        worst = worst.max((pcep.result.moments.mean[i] - mu[i]).abs());
    }
    Ok((
        rep.converged && pcep.result.converged && worst < 1e-6,
        format!("max abs deviation from exact ridge posterior {worst:.2e}"),
    ))
}

fn oracle_agreement(seeds: u64) -> Result<(bool, String)> {
    let mut worst_mean = 0.0f64;
    let mut worst_ev = 0.0f64;
    let mut rep_checked = 0;
    for seed in 0..seeds {
        let data = generate_trial(&small_config(8, 4, 200 + seed), 0)?;
        let exact = exact_posterior(&data.train, DEFAULT_MAX_D)?;
        let pcep = run_pcep(&data.train, &PcepOptions::default())?;
        worst_mean = worst_mean.max((&pcep.result.moments.mean - &exact.mean).amax());
        let ev = approx_log_evidence(&data.train, &pcep.terminal)?;
        worst_ev = worst_ev.max((ev - exact.log_evidence).abs());

        let rep = run_rep(
            &data.train,
            &RepOptions {
                damping: 0.5,
                ..RepOptions::default()
            },
        )?;
        if rep.converged {
            rep_checked += 1;
            worst_mean = worst_mean.max((&rep.moments.mean - &exact.mean).amax());
        }
    }
    Ok((
        worst_mean < 0.05 && worst_ev < 0.5,
        format!(
            "max abs mean error {worst_mean:.3e}, max evidence gap {worst_ev:.3e} nats \
             ({rep_checked} converged sequential runs checked)"
        ),
    ))
}

fn descent_bounded(seeds: u64) -> Result<(bool, String)> {
    let mut min_gap = f64::INFINITY;
    for seed in 0..seeds {
        let data = generate_trial(&small_config(8, 2, 300 + seed), 0)?;
        let run = run_pcep(&data.train, &PcepOptions::default())?;
        let floor = lower_bound(2, 8, data.train.noise_var())?;
        let mut prev = f64::INFINITY;
        for &e in &run.result.energy_trace {
            if e > prev + 1e-8 * (1.0 + prev.abs()) {
                return Ok((false, format!("energy rose {prev} -> {e} (seed {seed})")));
            }
            min_gap = min_gap.min(e - floor);
            prev = e;
        }
    }
    Ok((
        min_gap >= -1e-9,
        format!("min trace clearance above the floor {min_gap:.3e}"),
    ))
}

fn kkt_coherence() -> Result<(bool, String)> {
    let data = generate_trial(&small_config(8, 4, 55), 0)?;
    let run = run_pcep(&data.train, &PcepOptions::default())?;
    let sol = &run.terminal;
    let mult = &sol.multipliers;
    let mut interior = 0;
    let mut worst_agreement = 0.0f64;
    for i in 0..8 {
        if mult.mu_1[i] > 0.0 || mult.mu_2[i] > 0.0 {
            return Ok((false, format!("positive multiplier at {i}")));
        }
        if mult.mu_1[i] != 0.0 && mult.mu_2[i] != 0.0 {
            return Ok((false, format!("both multipliers active at {i}")));
        }
        if sol.active_set[i] == ActiveBound::Interior {
            interior += 1;
            let tm = tilted_moments(
                sol.cavity_star.first()[i],
                sol.cavity_star.second()[i],
                data.train.slab_prob(),
                data.train.slab_var(),
            )?;
            worst_agreement =
                worst_agreement.max((0.5 * tm.second_moment - mult.lambda_2[i]).abs());
        }
    }
    Ok((
        worst_agreement < 1e-6,
        format!(
            "{interior}/8 interior coordinates, max tilted/Gaussian multiplier gap {worst_agreement:.2e}"
        ),
    ))
}

/// Runs the battery; `quick` trims the seeded repetitions.
pub fn run_validation(quick: bool) -> Vec<CheckOutcome> {
    let seeds = if quick { 3 } else { 8 };
    vec![
        check("woodbury-vs-direct", woodbury_vs_direct),
        check("partition-gradients", partition_gradients),
        check("gaussian-limit-recovery", gaussian_limit),
        check("enumeration-oracle-agreement", || oracle_agreement(seeds)),
        check("descent-and-lower-bound", || descent_bounded(seeds)),
        check("kkt-coherence", kkt_coherence),
    ]
}
