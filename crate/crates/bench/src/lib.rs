//! Fixtures shared by the benchmarks.

use fedsim_core::algorithms::{Algorithm, ControlState, ModelState, OptimizerConfig};
use fedsim_core::{Federation, ProblemConfig};

/// The toy benchmark problem at the given heterogeneity.
pub fn toy_federation(het_level: f64) -> Federation {
    Federation::generate(&ProblemConfig::toy(het_level, 0)).expect("toy config is valid")
}

/// Toy training settings for one algorithm at subspace dimension `r`.
pub fn toy_optimizer(algorithm: Algorithm, r: usize) -> OptimizerConfig {
    OptimizerConfig::toy(algorithm, 1e-2, r, 0)
}

/// Zero model and controls shaped for `cfg`.
pub fn initial_state(fed: &Federation, cfg: &OptimizerConfig) -> (ModelState, ControlState) {
    let (d, m) = (fed.feature_dim(), fed.output_dim());
    (
        ModelState::zeros(d, m),
        ControlState::initial(cfg, fed.num_clients(), d, m),
    )
}
