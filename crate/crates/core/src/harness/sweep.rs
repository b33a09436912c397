//! Sweeps over (algorithm, het level, r, seed) cells.
//!
//! Full-dimensional baselines do not depend on `r`, so they run once per
//! (het level, seed) and are relabelled for every requested `r`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::algorithms::{fmt_het, run_experiment_on, run_id, Algorithm, RunRecord};
use crate::error::{FedError, Result};
use crate::problem::Federation;

pub const CSV_HEADER: &str = "run_id,algorithm,het_level,r,seed,round,rel_err,diverged";
pub const THREADS_ENV: &str = "FEDSIM_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub het_level: f64,
    pub r: usize,
    pub seed: u64,
}

/// Final error of one cell. `final_error` is NaN exactly when `diverged`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub het_level: f64,
    pub r: usize,
    pub seed: u64,
    pub rounds: usize,
    pub final_error: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SummaryRow>,
}

pub fn fmt_err(e: f64) -> String {
    if e.is_nan() {
        "NaN".to_string()
    } else {
        format!("{e:.6e}")
    }
}

/// Median with NaN ordered above every number, so a diverged seed counts as
/// the worst outcome.
pub fn median_nan_high(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| match (a.is_nan(), b.is_nan()) {
        (true, true) => std::cmp::Ordering::Equal,
        (true, false) => std::cmp::Ordering::Greater,
        (false, true) => std::cmp::Ordering::Less,
        _ => a.partial_cmp(b).expect("not NaN"),
    });
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

impl SweepSummary {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn finals(&self, algorithm: Algorithm, het_level: f64, r: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|x| x.algorithm == algorithm && x.het_level == het_level && x.r == r)
            .map(|x| x.final_error)
            .collect()
    }

    pub fn median(&self, algorithm: Algorithm, het_level: f64, r: usize) -> Option<f64> {
        median_nan_high(&self.finals(algorithm, het_level, r))
    }

    pub fn any_diverged(&self) -> bool {
        self.rows.iter().any(|r| r.diverged)
    }

    pub fn algorithms(&self) -> Vec<Algorithm> {
        let mut a: Vec<Algorithm> = self.rows.iter().map(|r| r.algorithm).collect();
        a.sort();
        a.dedup();
        a
    }

    /// Distinct (het level, r) pairs in ascending order.
    pub fn settings(&self) -> Vec<(f64, usize)> {
        let mut s: Vec<(f64, usize)> = self.rows.iter().map(|r| (r.het_level, r.r)).collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        s.dedup();
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("algorithm,het_level,r,seed,rounds,final_rel_err,diverged\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.algorithm.key(),
                fmt_het(r.het_level),
                r.r,
                r.seed,
                r.rounds,
                fmt_err(r.final_error),
                r.diverged
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!(
                    "line {}: expected 7 fields, got {}",
                    n + 1,
                    f.len()
                ));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", n + 1));
            let int = |s: &str| s.parse::<u64>().map_err(|e| format!("line {}: {e}", n + 1));
            rows.push(SummaryRow {
                algorithm: f[0].parse().map_err(|e| format!("line {}: {e}", n + 1))?,
                het_level: num(f[1])?,
                r: int(f[2])? as usize,
                seed: int(f[3])?,
                rounds: int(f[4])? as usize,
                final_error: num(f[5])?,
                diverged: f[6].parse().map_err(|e| format!("line {}: {e}", n + 1))?,
            });
        }
        Ok(SweepSummary { rows })
    }
}

/// Every cell of the config in (het, algorithm, r, seed) order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &het_level in &cfg.het_levels {
        for &algorithm in &cfg.algorithms {
            for &r in &cfg.r_values {
                for &seed in &cfg.seeds {
                    out.push(Cell {
                        algorithm,
                        het_level,
                        r,
                        seed,
                    });
                }
            }
        }
    }
    out
}

/// Output of one cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub records: Vec<RunRecord>,
}

impl CellResult {
    pub fn summary_row(&self) -> SummaryRow {
        let last = self.records.last().expect("every run logs round 0");
        SummaryRow {
            algorithm: self.cell.algorithm,
            het_level: self.cell.het_level,
            r: self.cell.r,
            seed: self.cell.seed,
            rounds: last.round,
            final_error: last.rel_err,
            diverged: last.diverged,
        }
    }

    pub fn file_name(&self) -> String {
        format!(
            "{}.csv",
            run_id(
                self.cell.algorithm,
                self.cell.het_level,
                self.cell.r,
                self.cell.seed
            )
        )
    }
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.run_id,
            r.algorithm.key(),
            fmt_het(r.het_level),
            r.r,
            r.seed,
            r.round,
            fmt_err(r.rel_err),
            r.diverged
        );
    }
    out
}

pub fn records_from_csv(text: &str) -> std::result::Result<Vec<RunRecord>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(format!("line {}: expected 8 fields", n + 2));
        }
        let e = |m: String| format!("line {}: {m}", n + 2);
        out.push(RunRecord {
            run_id: f[0].to_string(),
            algorithm: f[1].parse().map_err(|x| e(format!("{x}")))?,
            het_level: f[2].parse().map_err(|x| e(format!("{x}")))?,
            r: f[3].parse().map_err(|x| e(format!("{x}")))?,
            seed: f[4].parse().map_err(|x| e(format!("{x}")))?,
            round: f[5].parse().map_err(|x| e(format!("{x}")))?,
            rel_err: f[6].parse().map_err(|x| e(format!("{x}")))?,
            diverged: f[7].parse().map_err(|x| e(format!("{x}")))?,
        });
    }
    Ok(out)
}

/// Thread count from `FEDSIM_THREADS`, else the machine's parallelism.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| FedError::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Job {
    algorithm: Algorithm,
    het_index: usize,
    het_level: f64,
    /// `None` for full-dimensional baselines.
    r: Option<usize>,
    seed: u64,
}

/// Runs the given cells and returns their records in the order given.
/// Local rates come from `cfg` by het level; a level missing from
/// `cfg.het_levels` uses the single configured rate.
pub fn run_cells(
    cfg: &ExperimentConfig,
    cells: &[Cell],
    threads: usize,
) -> Result<Vec<CellResult>> {
    let mut jobs: Vec<Job> = Vec::new();
    let mut job_of = Vec::with_capacity(cells.len());
    for c in cells {
        let het_index = match cfg.het_levels.iter().position(|h| *h == c.het_level) {
            Some(i) => i,
            None if cfg.local_lr.len() == 1 => 0,
            None => {
                return Err(FedError::InvalidConfig(format!(
                    "het level {} has no configured local_lr",
                    c.het_level
                )))
            }
        };
        let job = Job {
            algorithm: c.algorithm,
            het_index,
            het_level: c.het_level,
            r: c.algorithm.uses_subspace().then_some(c.r),
            seed: c.seed,
        };
        let idx = match jobs.iter().position(|j| *j == job) {
            Some(i) => i,
            None => {
                jobs.push(job);
                jobs.len() - 1
            }
        };
        job_of.push(idx);
    }

    let feds: BTreeMap<(u64, u64), Federation> = {
        let mut keys: Vec<(f64, u64)> = jobs.iter().map(|j| (j.het_level, j.seed)).collect();
        keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keys.dedup();
        let mut m = BTreeMap::new();
        for (h, s) in keys {
            m.insert((h.to_bits(), s), Federation::generate(&cfg.problem(h, s))?);
        }
        m
    };

    let run = |job: &Job| -> Result<Vec<RunRecord>> {
        let fed = &feds[&(job.het_level.to_bits(), job.seed)];
        let r = job.r.unwrap_or(cfg.feature_dim);
        let opt = cfg.optimizer_at(job.algorithm, job.het_index, r, job.seed);
        run_experiment_on(fed, &opt)
    };
    let outputs: Vec<Result<Vec<RunRecord>>> =
        with_threads(threads, || jobs.par_iter().map(run).collect())?;
    let outputs: Vec<Vec<RunRecord>> = outputs.into_iter().collect::<Result<_>>()?;

    Ok(cells
        .iter()
        .zip(job_of)
        .map(|(c, j)| {
            let id = run_id(c.algorithm, c.het_level, c.r, c.seed);
            let records = outputs[j]
                .iter()
                .map(|rec| RunRecord {
                    run_id: id.clone(),
                    r: c.r,
                    ..rec.clone()
                })
                .collect();
            CellResult { cell: *c, records }
        })
        .collect())
}

/// Writes one CSV per cell plus `summary.csv` into `dir`.
pub fn write_results(dir: &Path, results: &[CellResult]) -> Result<SweepSummary> {
    std::fs::create_dir_all(dir).map_err(|e| FedError::io(dir, e))?;
    let mut summary = SweepSummary::default();
    for res in results {
        let path = dir.join(res.file_name());
        std::fs::write(&path, records_to_csv(&res.records)).map_err(|e| FedError::io(&path, e))?;
        summary.rows.push(res.summary_row());
    }
    let path = dir.join("summary.csv");
    std::fs::write(&path, summary.to_csv()).map_err(|e| FedError::io(&path, e))?;
    Ok(summary)
}

/// Runs every cell of `cfg` with `threads` workers and writes the results
/// under `cfg.output_dir`.
pub fn run_sweep_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<SweepSummary> {
    cfg.validate()?;
    let results = run_cells(cfg, &cells(cfg), threads)?;
    write_results(&cfg.output_dir, &results)
}

/// [`run_sweep_with_threads`] with the thread count from `FEDSIM_THREADS`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepSummary> {
    run_sweep_with_threads(cfg, threads_from_env())
}

pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            num_clients: 4,
            feature_dim: 12,
            output_dim: 2,
            samples_per_client: 10,
            rounds: 60,
            clients_per_round: 2,
            batch_size: 5,
            local_lr: vec![0.02],
            het_levels: vec![0.5, 2.0],
            r_values: vec![3, 12],
            seeds: vec![0, 1],
            log_every: 25,
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn writes_one_csv_per_cell_with_fixed_schema() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let summary = run_sweep_with_threads(&cfg, 1).unwrap();
        assert_eq!(summary.rows.len(), 4 * 2 * 2 * 2);
        for c in cells(&cfg) {
            let id = run_id(c.algorithm, c.het_level, c.r, c.seed);
            let text = std::fs::read_to_string(dir.path().join(format!("{id}.csv"))).unwrap();
            assert!(text.starts_with(CSV_HEADER));
            let recs = records_from_csv(&text).unwrap();
            let rounds: Vec<usize> = recs.iter().map(|r| r.round).collect();
            assert_eq!(rounds, vec![0, 25, 50, 60]);
            assert!(recs.iter().all(|r| r.run_id == id && r.r == c.r));
        }
        let back =
            SweepSummary::from_csv(&std::fs::read_to_string(summary_path(dir.path())).unwrap())
                .unwrap();
        assert_eq!(back.rows.len(), summary.rows.len());
    }

    #[test]
    fn baselines_identical_across_r() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_sweep_with_threads(&tiny(dir.path()), 1).unwrap();
        for algo in [Algorithm::Scaffold, Algorithm::FedAvg] {
            assert_eq!(summary.finals(algo, 0.5, 3), summary.finals(algo, 0.5, 12));
        }
    }

    #[test]
    fn thread_count_does_not_change_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_sweep_with_threads(&tiny(a.path()), 1).unwrap();
        run_sweep_with_threads(&tiny(b.path()), 3).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for n in names {
            assert_eq!(
                std::fs::read(a.path().join(&n)).unwrap(),
                std::fs::read(b.path().join(&n)).unwrap()
            );
        }
    }

    #[test]
    fn empty_lists_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.r_values.clear();
        assert!(run_sweep_with_threads(&cfg, 1).is_err());
    }

    #[test]
    fn diverged_runs_write_nan() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.algorithms = vec![Algorithm::FedAvg];
        cfg.local_lr = vec![50.0];
        cfg.het_levels = vec![0.5];
        cfg.r_values = vec![12];
        cfg.seeds = vec![0];
        let s = run_sweep_with_threads(&cfg, 1).unwrap();
        assert!(s.rows[0].diverged && s.rows[0].final_error.is_nan());
        let text = std::fs::read_to_string(dir.path().join("fedavg_het0.5_r12_s0.csv")).unwrap();
        assert!(text.trim_end().ends_with("60,NaN,true"), "{text}");
    }

    #[test]
    fn median_puts_nan_last() {
        assert_eq!(median_nan_high(&[3.0, f64::NAN, 1.0]), Some(3.0));
        assert!(median_nan_high(&[f64::NAN, f64::NAN, 1.0])
            .unwrap()
            .is_nan());
        assert_eq!(median_nan_high(&[1.0, 2.0]), Some(1.5));
        assert_eq!(median_nan_high(&[]), None);
    }

    #[test]
    fn het_formatting() {
        assert_eq!(fmt_het(2.0), "2.0");
        assert_eq!(fmt_het(0.1), "0.1");
        assert_eq!(fmt_het(0.25), "0.25");
    }
}
