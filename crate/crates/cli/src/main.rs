//! `fedsim`: command-line front end for the federated subspace benchmark.
//!
//! Exit codes: 0 success, 2 when everything ran but a run diverged or a
//! verification check failed, 1 on errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fedsim_core::algorithms::Algorithm;
use fedsim_core::harness::{
    self, convergence_svg, emit_report, lr_search, records_from_csv, report::VERIFY_JSON,
    run_sweep, run_verification, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated subspace optimization benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single cell (or any subset selected by the flags).
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long)]
        het: Option<f64>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every (algorithm, het, r, seed) cell of the config.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Pick the local rate per het level with short Full-SCAFFOLD runs.
    LrSearch {
        #[command(flatten)]
        common: Common,
    },
    /// Run the Monte-Carlo checks of the convergence inequalities.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Render report.md from a results directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Draw run CSVs as an SVG convergence chart.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "Relative error by round")]
        title: String,
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; omitted keys take the toy defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(t) = self.rounds {
            cfg.rounds = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Outcome {
    Clean,
    Flagged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Flagged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sweep_and_report(cfg: &ExperimentConfig) -> Result<Outcome> {
    let summary = run_sweep(cfg)?;
    let report = harness::report_from_dir(&cfg.output_dir)?;
    write(&cfg.output_dir.join("report.md"), &report)?;
    print!("{}", emit_report(&summary, &[], &[]));
    println!(
        "\nwrote {} run files to {}",
        summary.rows.len(),
        cfg.output_dir.display()
    );
    Ok(if summary.any_diverged() {
        Outcome::Flagged
    } else {
        Outcome::Clean
    })
}

fn execute(command: Command) -> Result<Outcome> {
    match command {
        Command::Run {
            common,
            algo,
            het,
            r,
            seed,
        } => {
            let mut cfg = common.load()?;
            cfg.restrict(algo, het, r, seed)?;
            sweep_and_report(&cfg)
        }
        Command::Sweep { common } => sweep_and_report(&common.load()?),
        Command::LrSearch { common } => {
            let cfg = common.load()?;
            let choices = lr_search(&cfg)?;
            for c in &choices {
                println!(
                    "het={} selected local_lr={:e}",
                    fedsim_core::algorithms::fmt_het(c.het_level),
                    c.selected
                );
                for k in &c.candidates {
                    println!(
                        "    lr={:<8e} median_err={} diverged_seeds={}",
                        k.local_lr,
                        harness::sweep::fmt_err(k.median_error),
                        k.diverged_seeds
                    );
                }
            }
            write(
                &cfg.output_dir.join("lr_search.csv"),
                &harness::lr_search::choices_to_csv(&choices),
            )?;
            Ok(Outcome::Clean)
        }
        Command::Verify { common } => {
            let cfg = common.load()?;
            let suite = run_verification(&cfg)?;
            print!("{}", suite.render());
            let path = cfg.output_dir.join(VERIFY_JSON);
            write(&path, &suite.to_json())?;
            println!("wrote {}", path.display());
            Ok(if suite.passed() {
                Outcome::Clean
            } else {
                Outcome::Flagged
            })
        }
        Command::Report { dir } => {
            let text = harness::report_from_dir(&dir)?;
            write(&dir.join("report.md"), &text)?;
            print!("{text}");
            Ok(Outcome::Clean)
        }
        Command::Plot { out, title, csv } => {
            let mut runs = Vec::new();
            for p in &csv {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                runs.push(
                    records_from_csv(&text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?,
                );
            }
            write(&out, &convergence_svg(&title, &runs))?;
            println!("wrote {}", out.display());
            Ok(Outcome::Clean)
        }
    }
}
