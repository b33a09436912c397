//! Markdown report assembled from a results directory.

use std::fmt::Write as _;
use std::path::Path;

use super::sweep::{fmt_err, summary_path, SweepSummary};
use crate::algorithms::{fmt_het, Algorithm};
use crate::error::{FedError, Result};
use crate::theory::VerificationReport;

pub const REPORT_TITLE: &str = "# Federated subspace benchmark report";
pub const VERIFY_JSON: &str = "verify.json";
pub const ACCEPTANCE_TXT: &str = "acceptance.txt";

/// Renders the final-error table (median over seeds), then the verification
/// checks and acceptance lines when given. An empty summary with nothing
/// else renders the title alone.
pub fn emit_report(
    summary: &SweepSummary,
    verification: &[VerificationReport],
    acceptance: &[String],
) -> String {
    let mut out = String::from(REPORT_TITLE);
    out.push('\n');
    if !summary.is_empty() {
        let mut seeds: Vec<u64> = summary.rows.iter().map(|r| r.seed).collect();
        seeds.sort();
        seeds.dedup();
        let mut rounds: Vec<usize> = summary.rows.iter().map(|r| r.rounds).collect();
        rounds.sort();
        rounds.dedup();
        let algos: Vec<Algorithm> = Algorithm::ALL
            .iter()
            .copied()
            .filter(|a| summary.algorithms().contains(a))
            .collect();
        let _ = writeln!(out, "\n## Final relative error\n");
        let _ = writeln!(
            out,
            "Final round {}; median over seeds {:?}. NaN marks divergence.\n",
            rounds
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join("/"),
            seeds
        );
        let _ = write!(out, "| Heterogeneity | r |");
        for a in &algos {
            let _ = write!(out, " {} |", a.label());
        }
        out.push_str("\n|---|---|");
        for _ in &algos {
            out.push_str("---|");
        }
        out.push('\n');
        for (het, r) in summary.settings() {
            let _ = write!(out, "| {} | {} |", fmt_het(het), r);
            for a in &algos {
                let cell = summary.median(*a, het, r).map_or("-".to_string(), fmt_err);
                let _ = write!(out, " {cell} |");
            }
            out.push('\n');
        }
        let diverged: Vec<String> = summary
            .rows
            .iter()
            .filter(|r| r.diverged)
            .map(|r| {
                format!(
                    "{} het={} r={} seed={}",
                    r.algorithm.label(),
                    fmt_het(r.het_level),
                    r.r,
                    r.seed
                )
            })
            .collect();
        if !diverged.is_empty() {
            let _ = writeln!(out, "\nDiverged runs: {}", diverged.join("; "));
        }
    }
    if !verification.is_empty() {
        let _ = writeln!(out, "\n## Verification\n");
        out.push_str(
            "| Check | lhs | rhs | margin | trials | result |\n|---|---|---|---|---|---|\n",
        );
        for r in verification {
            let _ = writeln!(
                out,
                "| {} | {:.4e} | {:.4e} | {:.3e} | {} | {} |",
                r.name,
                r.lhs,
                r.rhs,
                r.margin,
                r.trials,
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
    }
    if !acceptance.is_empty() {
        let _ = writeln!(out, "\n## Acceptance\n");
        for line in acceptance {
            let _ = writeln!(out, "    {line}");
        }
    }
    out
}

/// Reads `summary.csv`, `verify.json` and `acceptance.txt` from `dir`,
/// whichever exist, and renders them.
pub fn report_from_dir(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(FedError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| FedError::io(p, e));
    let sp = summary_path(dir);
    let summary = if sp.exists() {
        SweepSummary::from_csv(&read(&sp)?).map_err(|message| FedError::Parse {
            path: sp.clone(),
            message,
        })?
    } else {
        SweepSummary::default()
    };
    let vp = dir.join(VERIFY_JSON);
    let verification = if vp.exists() {
        parse_reports(&read(&vp)?).map_err(|message| FedError::Parse {
            path: vp.clone(),
            message,
        })?
    } else {
        Vec::new()
    };
    let ap = dir.join(ACCEPTANCE_TXT);
    let acceptance = if ap.exists() {
        read(&ap)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    Ok(emit_report(&summary, &verification, &acceptance))
}

fn parse_reports(text: &str) -> std::result::Result<Vec<VerificationReport>, String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let reports = v.get("reports").cloned().ok_or("missing \"reports\"")?;
    serde_json::from_value(reports).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::sweep::SummaryRow;

    fn row(a: Algorithm, het: f64, r: usize, seed: u64, e: f64) -> SummaryRow {
        SummaryRow {
            algorithm: a,
            het_level: het,
            r,
            seed,
            rounds: 100,
            final_error: e,
            diverged: e.is_nan(),
        }
    }

    #[test]
    fn empty_summary_is_header_only() {
        assert_eq!(
            emit_report(&SweepSummary::default(), &[], &[]),
            format!("{REPORT_TITLE}\n")
        );
    }

    #[test]
    fn table_has_one_column_per_method() {
        let mut s = SweepSummary::default();
        for (i, a) in Algorithm::ALL.iter().enumerate() {
            for seed in 0..3 {
                s.rows.push(row(
                    *a,
                    0.1,
                    20,
                    seed,
                    1e-3 * (i + 1) as f64 + seed as f64 * 1e-4,
                ));
                s.rows.push(row(
                    *a,
                    2.0,
                    20,
                    seed,
                    if *a == Algorithm::FedSub {
                        f64::NAN
                    } else {
                        2e-3
                    },
                ));
            }
        }
        let text = emit_report(&s, &[], &[]);
        assert!(text.contains("| Heterogeneity | r | Full-SCAFFOLD | Full-FedAvg | SSF | FedSub |"));
        assert!(
            text.contains("| 0.1 | 20 | 1.100000e-3 | 2.100000e-3 | 3.100000e-3 | 4.100000e-3 |"),
            "{text}"
        );
        assert!(text.contains("| 2.0 | 20 | 2.000000e-3 | 2.000000e-3 | 2.000000e-3 | NaN |"));
        assert!(text.contains("Diverged runs: FedSub het=2.0 r=20 seed=0"));
        assert!(!text.contains("## Verification"));
    }

    #[test]
    fn verification_section_when_artifacts_present() {
        let dir = tempfile::tempdir().unwrap();
        let reps = vec![VerificationReport::exact("cond", 0.5, 1.0)];
        let json = serde_json::json!({ "reports": reps }).to_string();
        std::fs::write(dir.path().join(VERIFY_JSON), json).unwrap();
        let text = report_from_dir(dir.path()).unwrap();
        assert!(text.contains("## Verification"));
        assert!(text.contains("| cond |"));
        assert!(report_from_dir(&dir.path().join("missing")).is_err());
    }
}
