//! The `verify` suite: every theory check on one shrunken toy instance.

use nalgebra::DMatrix;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::algorithms::{projector_for, Algorithm, OptimizerConfig, Simulation};
use crate::error::Result;
use crate::problem::{smoothness_constant, Federation};
use crate::theory::{
    check_theorem_conditions, corollary_stepsizes, estimate_sigma,
    verify_control_contraction_trend, verify_descent, verify_drift_bound,
    verify_projected_variance, CheckPlan, Stepsizes, TheoryParams, VerificationReport,
};

#[derive(Clone, Debug, Serialize)]
pub struct VerificationSuite {
    pub feature_dim: usize,
    pub het_level: f64,
    pub r: usize,
    pub smoothness: f64,
    pub sigma_sq: f64,
    pub local_lr: f64,
    pub global_lr: f64,
    pub params: TheoryParams,
    pub corollary: Stepsizes,
    pub reports: Vec<VerificationReport>,
}

impl VerificationSuite {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite serializes")
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "verification: d={} het={} r={} L={:.6e} sigma^2={:.6e} eta_l={:.6e} eta_g={:.6e}\n",
            self.feature_dim,
            crate::algorithms::fmt_het(self.het_level),
            self.r,
            self.smoothness,
            self.sigma_sq,
            self.local_lr,
            self.global_lr
        );
        for r in &self.reports {
            s.push_str(&r.line());
            s.push('\n');
        }
        s
    }
}

/// The SSF configuration the suite checks: full participation, and rates
/// clipped so that η_l ≤ 1/(4KL) and η̃ ≤ 1/(4L).
pub fn verification_setup(cfg: &ExperimentConfig) -> Result<(Federation, OptimizerConfig, f64)> {
    let v = &cfg.verify;
    let mut problem = cfg.problem(v.het_level, v.seed);
    problem.feature_dim = v.feature_dim;
    let fed = Federation::generate(&problem)?;
    let l = smoothness_constant(fed.clients(), fed.ridge())?;
    let k = cfg.local_steps as f64;
    let local_lr = v.local_lr.min(1.0 / (4.0 * k * l));
    let global_lr = cfg.global_lr.min(1.0 / (4.0 * l * local_lr * k));
    let rounds = v
        .drift_rounds
        .max(v.descent_rounds)
        .max(v.contraction_rounds);
    let opt = OptimizerConfig {
        algorithm: Algorithm::Ssf,
        local_lr,
        global_lr,
        local_steps: cfg.local_steps,
        clients_per_round: fed.num_clients(),
        subspace_dim: v.r,
        rounds,
        projector_refresh_every: 1,
        batch_size: cfg.batch_size,
        seed: v.seed,
        log_every: cfg.log_every,
    };
    opt.validate(fed.num_clients(), v.feature_dim, problem.samples_per_client)?;
    Ok((fed, opt, l))
}

pub fn run_verification(cfg: &ExperimentConfig) -> Result<VerificationSuite> {
    let v = &cfg.verify;
    let (fed, opt, l) = verification_setup(cfg)?;
    let d = fed.feature_dim();

    // Probes: origin, optimum and ten states along the run being checked.
    let mut probes = vec![DMatrix::zeros(d, fed.output_dim()), fed.optimum().clone()];
    let mut sim = Simulation::new(&fed, &opt)?;
    let every = (opt.rounds / 10).max(1);
    for t in 0..opt.rounds {
        if t % every == 0 {
            probes.push(sim.model().x.clone());
        }
        sim.step()?;
    }
    let sigma_sq = estimate_sigma(&fed, opt.batch_size, &probes, v.sigma_trials, v.seed)?;

    let mut reports = Vec::new();
    let p0 = projector_for(&opt, d, 0)?;
    reports.push(verify_projected_variance(
        &fed,
        &p0,
        opt.batch_size,
        &probes,
        v.variance_trials,
        sigma_sq,
        v.seed,
    )?);
    let drift_plan = CheckPlan {
        rounds: v.drift_rounds,
        states: v.drift_states,
        trials: v.drift_trials,
        seed: v.seed,
    };
    reports.push(verify_drift_bound(&fed, &opt, sigma_sq, &drift_plan)?);
    let descent_plan = CheckPlan {
        rounds: v.descent_rounds,
        states: v.descent_states,
        trials: v.descent_trials,
        seed: v.seed,
    };
    reports.push(verify_descent(&fed, &opt, sigma_sq, &descent_plan)?);
    reports.push(verify_control_contraction_trend(
        &fed,
        &opt,
        sigma_sq,
        v.contraction_rounds,
    )?);

    let mut horizon = opt.clone();
    horizon.rounds = cfg.rounds;
    let params = TheoryParams::measure(&fed, &horizon, sigma_sq)?;
    let corollary = corollary_stepsizes(&params)?;
    for mut r in check_theorem_conditions(corollary.local_lr, corollary.effective, &params) {
        r.name = format!("corollary_{}", r.name);
        reports.push(r);
    }

    Ok(VerificationSuite {
        feature_dim: d,
        het_level: v.het_level,
        r: v.r,
        smoothness: l,
        sigma_sq,
        local_lr: opt.local_lr,
        global_lr: opt.global_lr,
        params,
        corollary,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::VerifyConfig;

    #[test]
    fn small_suite_passes() {
        let cfg = ExperimentConfig {
            num_clients: 6,
            samples_per_client: 20,
            batch_size: 5,
            verify: VerifyConfig {
                feature_dim: 12,
                r: 3,
                sigma_trials: 100,
                variance_trials: 200,
                drift_rounds: 40,
                drift_states: 6,
                drift_trials: 60,
                descent_rounds: 40,
                descent_states: 2,
                descent_trials: 100,
                contraction_rounds: 60,
                ..VerifyConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let suite = run_verification(&cfg).unwrap();
        assert!(suite.passed(), "{}", suite.render());
        assert_eq!(suite.reports.len(), 9);
        assert!(suite.local_lr <= 1.0 / (4.0 * 5.0 * suite.smoothness) * (1.0 + 1e-15));
        assert!(suite.to_json().contains("\"reports\""));
    }
}
