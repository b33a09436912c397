use serde::{Deserialize, Serialize};

use super::{
    run_round_fedavg, run_round_fedsub, run_round_scaffold, run_round_ssf, Algorithm, ControlState,
    ModelState, OptimizerConfig, RoundOutput,
};
use crate::error::Result;
use crate::problem::{Federation, ProblemConfig};

/// One logged point of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub algorithm: Algorithm,
    pub het_level: f64,
    pub r: usize,
    pub seed: u64,
    pub round: usize,
    /// NaN exactly when `diverged`.
    pub rel_err: f64,
    pub diverged: bool,
}

/// `<algorithm>_het<h>_r<r>_s<seed>`
pub fn run_id(algorithm: Algorithm, het_level: f64, r: usize, seed: u64) -> String {
    format!(
        "{}_het{}_r{}_s{}",
        algorithm.key(),
        fmt_het(het_level),
        r,
        seed
    )
}

/// Formats a het level so that `2.0` stays `2.0` and `0.1` stays `0.1`.
pub fn fmt_het(h: f64) -> String {
    if h.fract() == 0.0 && h.abs() < 1e15 {
        format!("{h:.1}")
    } else {
        format!("{h}")
    }
}

/// Stateful driver over the round engines.
pub struct Simulation<'a> {
    fed: &'a Federation,
    cfg: OptimizerConfig,
    model: ModelState,
    controls: ControlState,
    diverged: bool,
}

impl<'a> Simulation<'a> {
    pub fn new(fed: &'a Federation, cfg: &OptimizerConfig) -> Result<Self> {
        let c = fed.config();
        cfg.validate(fed.num_clients(), c.feature_dim, fed.clients()[0].samples())?;
        Ok(Simulation {
            fed,
            cfg: cfg.clone(),
            model: ModelState::zeros(c.feature_dim, c.output_dim),
            controls: ControlState::initial(cfg, fed.num_clients(), c.feature_dim, c.output_dim),
            diverged: false,
        })
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn controls(&self) -> &ControlState {
        &self.controls
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Runs the next round and adopts its output.
    pub fn step(&mut self) -> Result<RoundOutput> {
        let round = self.model.round;
        let out = match self.cfg.algorithm {
            Algorithm::FedAvg => run_round_fedavg(&self.model, self.fed, &self.cfg, round)?,
            Algorithm::Scaffold => {
                run_round_scaffold(&self.model, &self.controls, self.fed, &self.cfg, round)?
            }
            Algorithm::Ssf => {
                run_round_ssf(&self.model, &self.controls, self.fed, &self.cfg, round)?
            }
            Algorithm::FedSub => {
                run_round_fedsub(&self.model, &self.controls, self.fed, &self.cfg, round)?
            }
        };
        self.model = out.model.clone();
        self.controls = out.controls.clone();
        self.diverged = out.diverged;
        Ok(out)
    }
}

/// Generates the federation for `problem` and runs `opt` on it.
pub fn run_experiment(problem: &ProblemConfig, opt: &OptimizerConfig) -> Result<Vec<RunRecord>> {
    let fed = Federation::generate(problem)?;
    run_experiment_on(&fed, opt)
}

/// Runs `opt.rounds` rounds, logging round 0, every `log_every` rounds and the
/// last round. A divergent run logs the failing round, skips the rest and
/// closes with a NaN row at the final round.
pub fn run_experiment_on(fed: &Federation, opt: &OptimizerConfig) -> Result<Vec<RunRecord>> {
    let het = fed.config().het_level;
    let id = run_id(opt.algorithm, het, opt.subspace_dim, opt.seed);
    let record = |round: usize, rel_err: f64, diverged: bool| RunRecord {
        run_id: id.clone(),
        algorithm: opt.algorithm,
        het_level: het,
        r: opt.subspace_dim,
        seed: opt.seed,
        round,
        rel_err,
        diverged,
    };

    let mut sim = Simulation::new(fed, opt)?;
    let mut records = vec![record(0, fed.relative_error(&sim.model().x)?, false)];
    for t in 1..=opt.rounds {
        let out = sim.step()?;
        if out.diverged {
            records.push(record(t, f64::NAN, true));
            if t != opt.rounds {
                records.push(record(opt.rounds, f64::NAN, true));
            }
            break;
        }
        if t % opt.log_every == 0 || t == opt.rounds {
            records.push(record(t, out.rel_err, false));
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem() -> ProblemConfig {
        ProblemConfig {
            num_clients: 5,
            feature_dim: 8,
            output_dim: 2,
            samples_per_client: 12,
            ridge: 0.1,
            noise_std: 0.01,
            het_level: 0.5,
            data_seed: 2,
        }
    }

    fn opt(algorithm: Algorithm, rounds: usize) -> OptimizerConfig {
        OptimizerConfig {
            algorithm,
            local_lr: 0.01,
            global_lr: 1.0,
            local_steps: 2,
            clients_per_round: 3,
            subspace_dim: 3,
            rounds,
            projector_refresh_every: 1,
            batch_size: 4,
            seed: 5,
            log_every: 4,
        }
    }

    #[test]
    fn zero_rounds_logs_initial_error_only() {
        let recs = run_experiment(&problem(), &opt(Algorithm::Ssf, 0)).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].round, 0);
        assert!((recs[0].rel_err - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logging_cadence_includes_final_round() {
        let recs = run_experiment(&problem(), &opt(Algorithm::Scaffold, 10)).unwrap();
        let rounds: Vec<usize> = recs.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![0, 4, 8, 10]);
        assert!(recs.iter().all(|r| r.rel_err.is_finite() && !r.diverged));
    }

    #[test]
    fn runs_are_reproducible() {
        for algo in Algorithm::ALL {
            let a = run_experiment(&problem(), &opt(algo, 12)).unwrap();
            let b = run_experiment(&problem(), &opt(algo, 12)).unwrap();
            let bits = |v: &[RunRecord]| v.iter().map(|r| r.rel_err.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b), "{algo}");
        }
    }

    #[test]
    fn divergence_is_flagged_and_run_stops() {
        let mut o = opt(Algorithm::FedAvg, 200);
        o.local_lr = 10.0;
        let recs = run_experiment(&problem(), &o).unwrap();
        let last = recs.last().unwrap();
        assert!(last.diverged && last.rel_err.is_nan());
        assert_eq!(last.round, 200);
        for r in &recs {
            assert!(r.rel_err.is_finite() ^ r.diverged);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut o = opt(Algorithm::Ssf, 3);
        o.subspace_dim = 9;
        assert!(run_experiment(&problem(), &o).is_err());
        let mut o = opt(Algorithm::Ssf, 3);
        o.clients_per_round = 6;
        assert!(run_experiment(&problem(), &o).is_err());
    }
}
