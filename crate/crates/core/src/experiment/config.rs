//! Flat `key = value` experiment configuration.

use std::str::FromStr;

use crate::error::{Result, SsepError};

/// Full parameterization of a sweep. The defaults reproduce the synthetic
/// benchmark: 25 coefficients of which 5 are nonzero on average, unit-sphere
/// inputs, noise σ = 0.005, 100 trials of 10 training and 1000 test
/// instances, damping grid {0.1, 0.3, 0.5, 0.7, 0.9}, and at most 1000
/// sequential sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub d: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_trials: usize,
    pub slab_prob: f64,
    pub slab_var: f64,
    /// Noise standard deviation σ (the model uses σ²).
    pub noise_std: f64,
    pub damping_grid: Vec<f64>,
    pub rep_max_iter: usize,
    pub eps: f64,
    pub seed: u64,
    pub rep_tol: f64,
    pub outer_tol: f64,
    pub inner_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 25,
            n_train: 10,
            n_test: 1000,
            n_trials: 100,
            slab_prob: 0.2,
            slab_var: 1.0,
            noise_std: 0.005,
            damping_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            rep_max_iter: 1000,
            eps: 1e-6,
            seed: 42,
            rep_tol: 1e-6,
            outer_tol: 1e-8,
            inner_tol: 1e-8,
        }
    }
}

impl ExperimentConfig {
    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_train == 0 || self.n_test == 0 || self.n_trials == 0 {
            return Err(SsepError::Config("all counts must be at least 1".into()));
        }
        if self.rep_max_iter == 0 {
            return Err(SsepError::Config("rep_max_iter must be at least 1".into()));
        }
        if !(self.slab_prob > 0.0 && self.slab_prob < 1.0) {
            return Err(SsepError::Config(format!(
                "slab_prob must lie in (0, 1), got {}",
                self.slab_prob
            )));
        }
        if !(self.slab_var > 0.0) {
            return Err(SsepError::Config("slab_var must be positive".into()));
        }
        if !(self.noise_std > 0.0) {
            return Err(SsepError::Config("noise_std must be positive".into()));
        }
        if self.damping_grid.is_empty() {
            return Err(SsepError::Config("damping_grid must be non-empty".into()));
        }
        for &tau in &self.damping_grid {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(SsepError::Config(format!(
                    "damping values must lie in (0, 1], got {tau}"
                )));
            }
        }
        if !(self.eps > 0.0 && self.rep_tol > 0.0 && self.outer_tol > 0.0 && self.inner_tol > 0.0)
        {
            return Err(SsepError::Config(
                "eps and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, unknown or duplicate keys are errors. Keys not present keep
    /// their default values. `damping_grid` is a comma-separated list.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SsepError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(SsepError::Config(format!("duplicate key `{key}`")));
            }
            seen.push(key.to_string());
            match key {
                "d" => cfg.d = parse_field(key, value)?,
                "n_train" => cfg.n_train = parse_field(key, value)?,
                "n_test" => cfg.n_test = parse_field(key, value)?,
                "n_trials" => cfg.n_trials = parse_field(key, value)?,
                "slab_prob" => cfg.slab_prob = parse_field(key, value)?,
                "slab_var" => cfg.slab_var = parse_field(key, value)?,
                "noise_std" => cfg.noise_std = parse_field(key, value)?,
                "damping_grid" => {
                    cfg.damping_grid = value
                        .split(',')
                        .map(|v| parse_field::<f64>(key, v.trim()))
                        .collect::<Result<Vec<_>>>()?;
                }
                "rep_max_iter" => cfg.rep_max_iter = parse_field(key, value)?,
                "eps" => cfg.eps = parse_field(key, value)?,
                "seed" => cfg.seed = parse_field(key, value)?,
                "rep_tol" => cfg.rep_tol = parse_field(key, value)?,
                "outer_tol" => cfg.outer_tol = parse_field(key, value)?,
                "inner_tol" => cfg.inner_tol = parse_field(key, value)?,
                other => {
                    return Err(SsepError::Config(format!("unknown key `{other}`")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| SsepError::Config(format!("cannot parse `{value}` for key `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "\
# sweep setup
d = 8
n_train = 4
n_test = 50      # small smoke test
n_trials = 3
slab_prob = 0.2
slab_var = 1.0
noise_std = 0.005
damping_grid = 0.5, 0.9
rep_max_iter = 200
eps = 1e-6
seed = 7
rep_tol = 1e-6
outer_tol = 1e-8
inner_tol = 1e-8
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.d, 8);
        assert_eq!(cfg.n_trials, 3);
        assert_eq!(cfg.damping_grid, vec![0.5, 0.9]);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn defaults_survive_partial_configs() {
        let cfg = ExperimentConfig::parse("seed = 9\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.d, 25);
        assert_eq!(cfg.damping_grid.len(), 5);
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid() {
        assert!(ExperimentConfig::parse("dd = 3\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(ExperimentConfig::parse("slab_prob = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("damping_grid = 0.0\n").is_err());
        assert!(ExperimentConfig::parse("n_trials = 0\n").is_err());
    }
}
