//! Grid search for the local rate with Full-SCAFFOLD on short runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::sweep::{median_nan_high, threads_from_env, with_threads};
use crate::algorithms::{run_experiment_on, Algorithm};
use crate::error::{FedError, Result};
use crate::problem::Federation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrCandidate {
    pub local_lr: f64,
    /// Median final error over seeds; NaN when any seed diverged.
    pub median_error: f64,
    pub diverged_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrChoice {
    pub het_level: f64,
    pub selected: f64,
    pub candidates: Vec<LrCandidate>,
}

/// Candidates whose errors agree to this relative tolerance are tied.
pub const TIE_TOL: f64 = 1e-12;

/// Lowest median error wins; diverged candidates are excluded and ties go
/// to the smaller rate.
pub fn select(het_level: f64, mut candidates: Vec<LrCandidate>) -> Result<LrChoice> {
    candidates.sort_by(|a, b| a.local_lr.total_cmp(&b.local_lr));
    let mut best: Option<&LrCandidate> = None;
    for c in candidates
        .iter()
        .filter(|c| c.diverged_seeds == 0 && c.median_error.is_finite())
    {
        match best {
            Some(b) if c.median_error >= b.median_error * (1.0 - TIE_TOL) => {}
            _ => best = Some(c),
        }
    }
    let selected = best
        .ok_or(FedError::AllCandidatesDiverged(het_level))?
        .local_lr;
    Ok(LrChoice {
        het_level,
        selected,
        candidates,
    })
}

pub fn lr_search(cfg: &ExperimentConfig) -> Result<Vec<LrChoice>> {
    lr_search_with_threads(cfg, threads_from_env())
}

/// For each het level, runs Full-SCAFFOLD for `lr_search_rounds` rounds at
/// every grid rate and seed.
pub fn lr_search_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<LrChoice>> {
    if cfg.lr_grid.is_empty() {
        return Err(FedError::InvalidConfig("lr_grid must not be empty".into()));
    }
    if cfg.lr_search_rounds == 0 {
        return Err(FedError::InvalidConfig(
            "lr_search_rounds must be >= 1".into(),
        ));
    }
    let mut feds = Vec::new();
    for &h in &cfg.het_levels {
        for &s in &cfg.seeds {
            feds.push(((h, s), Federation::generate(&cfg.problem(h, s))?));
        }
    }
    let mut jobs = Vec::new();
    for (fi, _) in feds.iter().enumerate() {
        for &lr in &cfg.lr_grid {
            jobs.push((fi, lr));
        }
    }
    let finals: Vec<Result<f64>> = with_threads(threads, || {
        jobs.par_iter()
            .map(|&(fi, lr)| {
                let ((_, seed), fed) = &feds[fi];
                let mut opt =
                    cfg.optimizer_with_lr(Algorithm::Scaffold, lr, cfg.feature_dim, *seed);
                opt.rounds = cfg.lr_search_rounds;
                opt.log_every = cfg.lr_search_rounds;
                let recs = run_experiment_on(fed, &opt)?;
                Ok(recs.last().expect("round 0 is logged").rel_err)
            })
            .collect()
    })?;
    let finals: Vec<f64> = finals.into_iter().collect::<Result<_>>()?;

    let mut out = Vec::new();
    for &h in &cfg.het_levels {
        let mut candidates = Vec::new();
        for &lr in &cfg.lr_grid {
            let errs: Vec<f64> = jobs
                .iter()
                .zip(&finals)
                .filter(|((fi, l), _)| feds[*fi].0 .0 == h && *l == lr)
                .map(|(_, e)| *e)
                .collect();
            let diverged_seeds = errs.iter().filter(|e| !e.is_finite()).count();
            let median_error = if diverged_seeds > 0 {
                f64::NAN
            } else {
                median_nan_high(&errs).unwrap_or(f64::NAN)
            };
            candidates.push(LrCandidate {
                local_lr: lr,
                median_error,
                diverged_seeds,
            });
        }
        out.push(select(h, candidates)?);
    }
    Ok(out)
}

pub fn choices_to_csv(choices: &[LrChoice]) -> String {
    let mut s = String::from("het_level,local_lr,median_rel_err,diverged_seeds,selected\n");
    for c in choices {
        for k in &c.candidates {
            s.push_str(&format!(
                "{},{:e},{},{},{}\n",
                crate::algorithms::fmt_het(c.het_level),
                k.local_lr,
                super::sweep::fmt_err(k.median_error),
                k.diverged_seeds,
                k.local_lr == c.selected
            ));
        }
    }
    s
}
