//! Experiment configuration file.
//!
//! A flat TOML file whose keys follow the names of the toy benchmark's
//! hyperparameter table. Every key is optional; missing keys take the toy
//! defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{default_refresh, Algorithm, OptimizerConfig};
use crate::error::{FedError, Result};
use crate::problem::ProblemConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_clients: usize,
    pub feature_dim: usize,
    pub output_dim: usize,
    pub samples_per_client: usize,
    pub ridge: f64,
    pub noise_std: f64,

    pub algorithms: Vec<Algorithm>,
    pub rounds: usize,
    pub local_steps: usize,
    pub clients_per_round: usize,
    pub batch_size: usize,
    pub global_lr: f64,
    /// One rate for every level, or one per entry of `het_levels`.
    pub local_lr: Vec<f64>,
    /// Projector refresh period for FedSub; SSF always refreshes every round.
    pub fedsub_refresh_every: usize,

    pub het_levels: Vec<f64>,
    pub r_values: Vec<usize>,
    /// Each seed drives both the data draw and the optimizer streams.
    pub seeds: Vec<u64>,
    pub log_every: usize,

    pub lr_grid: Vec<f64>,
    pub lr_search_rounds: usize,

    pub output_dir: PathBuf,

    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_clients: 20,
            feature_dim: 100,
            output_dim: 10,
            samples_per_client: 50,
            ridge: 0.1,
            noise_std: 0.01,
            algorithms: Algorithm::ALL.to_vec(),
            rounds: 25_000,
            local_steps: 5,
            clients_per_round: 10,
            batch_size: 20,
            global_lr: 1.0,
            local_lr: vec![1e-2, 1e-2, 1e-3],
            fedsub_refresh_every: 5,
            het_levels: vec![0.1, 0.5, 2.0],
            r_values: vec![20],
            seeds: vec![0, 1, 2],
            log_every: 25,
            lr_grid: vec![1e-4, 1e-3, 1e-2, 1e-1],
            lr_search_rounds: 500,
            output_dir: PathBuf::from("results"),
            verify: VerifyConfig::default(),
        }
    }
}

/// Settings for the `verify` suite: the toy problem shrunk to `feature_dim`,
/// run with full participation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub feature_dim: usize,
    pub het_level: f64,
    pub r: usize,
    /// Upper cap on η_l; the suite also enforces η_l ≤ 1/(4KL).
    pub local_lr: f64,
    pub seed: u64,
    pub sigma_trials: usize,
    pub variance_trials: usize,
    pub drift_rounds: usize,
    pub drift_states: usize,
    pub drift_trials: usize,
    pub descent_rounds: usize,
    pub descent_states: usize,
    pub descent_trials: usize,
    pub contraction_rounds: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            feature_dim: 40,
            het_level: 0.5,
            r: 8,
            local_lr: 1e-2,
            seed: 0,
            sigma_trials: 200,
            variance_trials: 400,
            drift_rounds: 500,
            drift_states: 50,
            drift_trials: 200,
            descent_rounds: 200,
            descent_states: 5,
            descent_trials: 500,
            contraction_rounds: 500,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
        let cfg = Self::from_toml_str(&text).map_err(|message| FedError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(FedError::InvalidConfig(msg.to_string()));
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty");
        }
        if self.het_levels.is_empty() {
            return bad("het_levels must not be empty");
        }
        if self.r_values.is_empty() {
            return bad("r_values must not be empty");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.lr_grid.is_empty() {
            return bad("lr_grid must not be empty");
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1");
        }
        if self.fedsub_refresh_every == 0 {
            return bad("fedsub_refresh_every must be >= 1");
        }
        if self.local_lr.len() != 1 && self.local_lr.len() != self.het_levels.len() {
            return bad("local_lr needs one entry or one per het level");
        }
        if let Some(r) = self
            .r_values
            .iter()
            .find(|&&r| r == 0 || r > self.feature_dim)
        {
            return Err(FedError::SubspaceDim {
                r: *r,
                d: self.feature_dim,
            });
        }
        if self.lr_grid.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return bad("lr_grid entries must be positive");
        }
        for het in &self.het_levels {
            self.problem(*het, 0).validate()?;
        }
        let (n, d, s) = (self.num_clients, self.feature_dim, self.samples_per_client);
        for &algo in &self.algorithms {
            for &r in &self.r_values {
                for (i, _) in self.het_levels.iter().enumerate() {
                    self.optimizer_at(algo, i, r, 0).validate(n, d, s)?;
                }
            }
        }
        Ok(())
    }

    pub fn problem(&self, het_level: f64, seed: u64) -> ProblemConfig {
        ProblemConfig {
            num_clients: self.num_clients,
            feature_dim: self.feature_dim,
            output_dim: self.output_dim,
            samples_per_client: self.samples_per_client,
            ridge: self.ridge,
            noise_std: self.noise_std,
            het_level,
            data_seed: seed,
        }
    }

    /// Local rate for the `index`-th het level.
    pub fn local_lr_at(&self, index: usize) -> f64 {
        if self.local_lr.len() == 1 {
            self.local_lr[0]
        } else {
            self.local_lr[index]
        }
    }

    pub fn optimizer_at(
        &self,
        algorithm: Algorithm,
        het_index: usize,
        r: usize,
        seed: u64,
    ) -> OptimizerConfig {
        self.optimizer_with_lr(algorithm, self.local_lr_at(het_index), r, seed)
    }

    pub fn optimizer_with_lr(
        &self,
        algorithm: Algorithm,
        local_lr: f64,
        r: usize,
        seed: u64,
    ) -> OptimizerConfig {
        let refresh = match algorithm {
            Algorithm::FedSub => self.fedsub_refresh_every,
            other => default_refresh(other),
        };
        OptimizerConfig {
            algorithm,
            local_lr,
            global_lr: self.global_lr,
            local_steps: self.local_steps,
            clients_per_round: self.clients_per_round,
            subspace_dim: r,
            rounds: self.rounds,
            projector_refresh_every: refresh,
            batch_size: self.batch_size,
            seed,
            log_every: self.log_every,
        }
    }

    /// Narrows the config to a single cell, as the `run` subcommand does.
    pub fn restrict(
        &mut self,
        algorithm: Option<Algorithm>,
        het_level: Option<f64>,
        r: Option<usize>,
        seed: Option<u64>,
    ) -> Result<()> {
        if let Some(a) = algorithm {
            self.algorithms = vec![a];
        }
        if let Some(h) = het_level {
            let lr = match self.het_levels.iter().position(|x| *x == h) {
                Some(i) => self.local_lr_at(i),
                None if self.local_lr.len() == 1 => self.local_lr[0],
                None => {
                    return Err(FedError::InvalidConfig(format!(
                        "het level {h} has no local_lr entry; add it to het_levels or give a single local_lr"
                    )))
                }
            };
            self.het_levels = vec![h];
            self.local_lr = vec![lr];
        }
        if let Some(r) = r {
            self.r_values = vec![r];
        }
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_toy_table() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let o = c.optimizer_at(Algorithm::Ssf, 2, 20, 1);
        assert_eq!(o, OptimizerConfig::toy(Algorithm::Ssf, 1e-3, 20, 1));
        assert_eq!(c.problem(2.0, 4), ProblemConfig::toy(2.0, 4));
        assert_eq!(
            c.optimizer_at(Algorithm::FedSub, 0, 20, 0)
                .projector_refresh_every,
            5
        );
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "rounds = 100\nr_values = [1, 10]\nalgorithms = [\"ssf\"]\n",
        )
        .unwrap();
        assert_eq!(c.rounds, 100);
        assert_eq!(c.r_values, vec![1, 10]);
        assert_eq!(c.algorithms, vec![Algorithm::Ssf]);
        assert_eq!(c.batch_size, 20);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(ExperimentConfig::from_toml_str("roundz = 3").is_err());
        let mut c = ExperimentConfig::default();
        c.het_levels.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.log_every = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.r_values = vec![101];
        assert!(matches!(c.validate(), Err(FedError::SubspaceDim { .. })));
        let mut c = ExperimentConfig::default();
        c.local_lr = vec![0.1, 0.2];
        assert!(c.validate().is_err());
    }

    #[test]
    fn restrict_keeps_matching_rate() {
        let mut c = ExperimentConfig::default();
        c.restrict(Some(Algorithm::FedAvg), Some(2.0), Some(5), Some(9))
            .unwrap();
        assert_eq!(c.local_lr, vec![1e-3]);
        assert_eq!(c.seeds, vec![9]);
        let mut c = ExperimentConfig::default();
        assert!(c.restrict(None, Some(1.0), None, None).is_err());
    }
}
