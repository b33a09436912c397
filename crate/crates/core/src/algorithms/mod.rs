//! Round engines for FedAvg, full SCAFFOLD, SSF and FedSub.
//!
//! Each engine is a pure function of `(model, controls, federation, config,
//! round)`. Randomness is keyed by round and client (see [`crate::rng`]), so
//! for one seed all four algorithms see the same sampled clients and the same
//! minibatch indices, and a round can be replayed from frozen state.

mod experiment;
mod fedsub;
mod full;
mod ssf;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{FedError, Result};
use crate::problem::{ClientDataset, Federation};
use crate::rng::{self, Purpose};
use crate::subspace::Projector;

pub use experiment::{fmt_het, run_experiment, run_experiment_on, run_id, RunRecord, Simulation};
pub use fedsub::{rotate_controls, run_round_fedsub};
pub use full::{local_steps_full, run_round_fedavg, run_round_scaffold};
pub use ssf::{
    aggregate_ssf, local_steps_ssf, run_round_ssf, update_client_control_ssf,
    update_server_control_ssf,
};

/// Relative errors above this count as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Scaffold,
    FedAvg,
    Ssf,
    FedSub,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Scaffold,
        Algorithm::FedAvg,
        Algorithm::Ssf,
        Algorithm::FedSub,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Algorithm::Scaffold => "scaffold",
            Algorithm::FedAvg => "fedavg",
            Algorithm::Ssf => "ssf",
            Algorithm::FedSub => "fedsub",
        }
    }

    /// Column heading used in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Scaffold => "Full-SCAFFOLD",
            Algorithm::FedAvg => "Full-FedAvg",
            Algorithm::Ssf => "SSF",
            Algorithm::FedSub => "FedSub",
        }
    }

    pub fn uses_subspace(self) -> bool {
        matches!(self, Algorithm::Ssf | Algorithm::FedSub)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Algorithm {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scaffold" | "full-scaffold" => Ok(Algorithm::Scaffold),
            "fedavg" | "full-fedavg" => Ok(Algorithm::FedAvg),
            "ssf" | "subspace-scaffold" => Ok(Algorithm::Ssf),
            "fedsub" => Ok(Algorithm::FedSub),
            other => Err(FedError::InvalidConfig(format!(
                "unknown algorithm '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub local_lr: f64,
    pub global_lr: f64,
    pub local_steps: usize,
    pub clients_per_round: usize,
    /// Subspace dimension `r`; ignored by the full-dimensional methods.
    pub subspace_dim: usize,
    pub rounds: usize,
    pub projector_refresh_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl OptimizerConfig {
    /// Training skeleton of the toy benchmark: K=5, S=10, batch 20, η_g=1.
    pub fn toy(algorithm: Algorithm, local_lr: f64, subspace_dim: usize, seed: u64) -> Self {
        OptimizerConfig {
            algorithm,
            local_lr,
            global_lr: 1.0,
            local_steps: 5,
            clients_per_round: 10,
            subspace_dim,
            rounds: 25_000,
            projector_refresh_every: default_refresh(algorithm),
            batch_size: 20,
            seed,
            log_every: 25,
        }
    }

    /// Checks the config against a federation of `n` clients, dimension `d`
    /// and `samples` rows per client.
    pub fn validate(&self, n: usize, d: usize, samples: usize) -> Result<()> {
        let bad = |msg: String| Err(FedError::InvalidConfig(msg));
        if !(self.local_lr > 0.0 && self.local_lr.is_finite()) {
            return bad(format!("local_lr must be positive, got {}", self.local_lr));
        }
        if !(self.global_lr > 0.0 && self.global_lr.is_finite()) {
            return bad(format!(
                "global_lr must be positive, got {}",
                self.global_lr
            ));
        }
        if self.local_steps == 0 {
            return bad("local_steps must be >= 1".into());
        }
        if self.clients_per_round == 0 || self.clients_per_round > n {
            return bad(format!(
                "clients_per_round must be in 1..={n}, got {}",
                self.clients_per_round
            ));
        }
        if self.algorithm.uses_subspace() && (self.subspace_dim == 0 || self.subspace_dim > d) {
            return Err(FedError::SubspaceDim {
                r: self.subspace_dim,
                d,
            });
        }
        if self.projector_refresh_every == 0 {
            return bad("projector_refresh_every must be >= 1".into());
        }
        if self.batch_size == 0 || self.batch_size > samples {
            return Err(FedError::BatchSize {
                batch: self.batch_size,
                samples,
            });
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1".into());
        }
        Ok(())
    }

    /// `η_g η_l K`
    pub fn effective_lr(&self) -> f64 {
        self.global_lr * self.local_lr * self.local_steps as f64
    }

    /// Index of the projector in force at `round`.
    pub fn basis_index(&self, round: usize) -> usize {
        round / self.projector_refresh_every
    }
}

/// SSF refreshes every round; FedSub every 5 rounds.
pub fn default_refresh(algorithm: Algorithm) -> usize {
    match algorithm {
        Algorithm::FedSub => 5,
        _ => 1,
    }
}

#[derive(Clone, Debug)]
pub struct ModelState {
    pub x: DMatrix<f64>,
    pub round: usize,
}

impl ModelState {
    pub fn zeros(d: usize, m: usize) -> Self {
        ModelState {
            x: DMatrix::zeros(d, m),
            round: 0,
        }
    }
}

/// Server and client control variates.
///
/// Full-dimensional (`d×m`) for SCAFFOLD and SSF, `r×m` for FedSub with
/// `basis_round` naming the projector index the coordinates refer to, and
/// empty for FedAvg.
#[derive(Clone, Debug)]
pub struct ControlState {
    pub server: DMatrix<f64>,
    pub clients: Vec<DMatrix<f64>>,
    pub basis_round: Option<usize>,
}

impl ControlState {
    pub fn none() -> Self {
        ControlState {
            server: DMatrix::zeros(0, 0),
            clients: Vec::new(),
            basis_round: None,
        }
    }

    pub fn zeros(num_clients: usize, rows: usize, m: usize) -> Self {
        ControlState {
            server: DMatrix::zeros(rows, m),
            clients: vec![DMatrix::zeros(rows, m); num_clients],
            basis_round: None,
        }
    }

    /// Zero initial controls of the right shape for `cfg.algorithm`.
    pub fn initial(cfg: &OptimizerConfig, n: usize, d: usize, m: usize) -> Self {
        match cfg.algorithm {
            Algorithm::FedAvg => ControlState::none(),
            Algorithm::Scaffold | Algorithm::Ssf => ControlState::zeros(n, d, m),
            Algorithm::FedSub => {
                let mut c = ControlState::zeros(n, cfg.subspace_dim, m);
                c.basis_round = Some(0);
                c
            }
        }
    }

    /// Mean of the client controls.
    pub fn client_mean(&self) -> Option<DMatrix<f64>> {
        let first = self.clients.first()?;
        let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
        for c in &self.clients {
            acc += c;
        }
        Some(acc / self.clients.len() as f64)
    }
}

/// Per-round measurements kept for verification.
#[derive(Clone, Debug, Default)]
pub struct RoundDiagnostics {
    /// Participating clients, ascending.
    pub sampled: Vec<usize>,
    /// `Σ_k ‖y^k − x‖²_F` per participating client (projected coordinates for
    /// the subspace methods), `k = 0..K−1`.
    pub drift: Vec<f64>,
}

impl RoundDiagnostics {
    /// `(1/(S K)) Σ_i Σ_k ‖y_i^k − x‖²`
    pub fn mean_drift(&self, local_steps: usize) -> f64 {
        if self.drift.is_empty() {
            return 0.0;
        }
        self.drift.iter().sum::<f64>() / (self.drift.len() * local_steps) as f64
    }
}

#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub model: ModelState,
    pub controls: ControlState,
    /// Relative error of the new model; NaN when `diverged`.
    pub rel_err: f64,
    pub diverged: bool,
    pub diagnostics: RoundDiagnostics,
}

/// Result of one client's local loop.
#[derive(Clone, Debug)]
pub struct LocalOutcome {
    /// Final local iterate (`r×m` for subspace methods, `d×m` otherwise).
    pub endpoint: DMatrix<f64>,
    /// `Σ_k g^k`, full-dimensional.
    pub grad_sum: DMatrix<f64>,
    /// `Σ_{k<K} ‖y^k − y^0‖²_F`.
    pub drift: f64,
    /// False if a non-finite gradient was produced.
    pub finite: bool,
}

/// The `S` participating clients of `round`, ascending. Full participation
/// takes every client without consuming randomness.
pub fn sample_clients(seed: u64, round: usize, n: usize, s: usize) -> Vec<usize> {
    if s >= n {
        return (0..n).collect();
    }
    let mut rng = rng::stream(seed, Purpose::ClientSampling, round as u64, 0);
    let mut picked = index::sample(&mut rng, n, s).into_vec();
    picked.sort_unstable();
    picked
}

/// Projector in force at `round` under the config's refresh schedule.
pub fn projector_for(cfg: &OptimizerConfig, d: usize, round: usize) -> Result<Projector> {
    Projector::generate(d, cfg.subspace_dim, cfg.seed, cfg.basis_index(round))
}

/// Runs `f` over the participating clients; results come back in input order
/// no matter how the work is scheduled.
pub(crate) fn map_clients<T, F>(ids: &[usize], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if ids.len() > 1 && rayon::current_num_threads() > 1 {
        ids.par_iter().map(|&i| f(i)).collect()
    } else {
        ids.iter().map(|&i| f(i)).collect()
    }
}

pub(crate) fn check_state(
    model: &ModelState,
    controls: &ControlState,
    fed: &Federation,
    ctrl_rows: Option<usize>,
) -> Result<()> {
    let (d, m) = (fed.feature_dim(), fed.output_dim());
    if model.x.shape() != (d, m) {
        return Err(FedError::shape("model", (d, m), model.x.shape()));
    }
    if let Some(rows) = ctrl_rows {
        if controls.clients.len() != fed.num_clients() {
            return Err(FedError::InvalidConfig(format!(
                "expected {} client controls, got {}",
                fed.num_clients(),
                controls.clients.len()
            )));
        }
        for c in std::iter::once(&controls.server).chain(&controls.clients) {
            if c.shape() != (rows, m) {
                return Err(FedError::shape("control", (rows, m), c.shape()));
            }
        }
    }
    Ok(())
}

/// Relative error and divergence flag for a finished round.
pub(crate) fn assess(
    fed: &Federation,
    x: &DMatrix<f64>,
    clients_finite: bool,
) -> Result<(f64, bool)> {
    let err = fed.relative_error(x)?;
    let diverged =
        !clients_finite || !err.is_finite() || err > DIVERGENCE_THRESHOLD || !dense::all_finite(x);
    Ok((if diverged { f64::NAN } else { err }, diverged))
}

/// Shared scratch for a local loop.
pub(crate) struct Workspace {
    pub y: DMatrix<f64>,
    pub grad: DMatrix<f64>,
}

impl Workspace {
    pub fn new(d: usize, m: usize) -> Self {
        Workspace {
            y: DMatrix::zeros(d, m),
            grad: DMatrix::zeros(d, m),
        }
    }
}

pub(crate) fn client(fed: &Federation, i: usize) -> &ClientDataset {
    &fed.clients()[i]
}
