//! Command-line front end: train, eval, verify, sweep, gen-synthetic.

mod checkpoint;
mod config;
mod outputs;
mod verify;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fenrec_core::data::{parse_interactions, split_leave_one_out, DatasetSplit, RemapTable};
use fenrec_core::metrics::{evaluate, EvalTarget, MetricsReport};
use fenrec_core::train::fit;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fenrec", version, about = "Sequential-recommendation training engine \
with time-dependent soft labels and enduring hard-negative contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key-value TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable KEY=VALUE override applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (falls back to $FENREC_OUT_DIR, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override (shorthand for --set seed=N).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for assignment in &self.set {
            config.apply_override(assignment)?;
        }
        if let Some(seed) = self.seed {
            config.hp.seed = seed;
        }
        config.hp.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(config)
    }

    fn out_dir(&self) -> PathBuf {
        outputs::resolve_out_dir(self.out.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, logs, and metrics to a run
    /// directory.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the test targets of a dataset.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run every property suite (dominance, reductions, gradient checks,
    /// metric closed forms) and exit nonzero on any failure.
    Verify,
    /// Train and evaluate once per value of one hyperparameter; write an
    /// aggregate CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of: gamma, lambda, mu, m, tau2, batch_size, horizon.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `0.1,0.2,0.3`.
        #[arg(long)]
        values: String,
        /// Run sweep points on worker threads instead of sequentially.
        #[arg(long)]
        parallel: bool,
    },
    /// Generate a cluster-structured synthetic interaction file.
    GenSynthetic {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        items: usize,
        #[arg(long)]
        clusters: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Destination file.
        #[arg(long)]
        path: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let out = args.out_dir();
            let report = run_training(&config, &out, false)?;
            println!("run directory: {}", out.display());
            print_report(&report);
            Ok(())
        }
        Command::Eval { config, checkpoint } => {
            let config = config.resolve()?;
            let (split, _) = load_dataset(&config)?;
            let params = checkpoint::load(&checkpoint)?;
            let report =
                evaluate(&params, &split, EvalTarget::Test).map_err(|e| anyhow::anyhow!("{e}"))?;
            let json = outputs::metrics_json(&report)?;
            println!("{json}");
            Ok(())
        }
        Command::Verify => {
            let results = verify::run_all();
            let mut failed = 0;
            println!(
                "{:<22} {:>8} {:>14}  {:<6} note",
                "suite", "cases", "max_error", "status"
            );
            for r in &results {
                if !r.passed {
                    failed += 1;
                }
                println!(
                    "{:<22} {:>8} {:>14.3e}  {:<6} {}",
                    r.name,
                    r.cases,
                    r.max_error,
                    if r.passed { "PASS" } else { "FAIL" },
                    r.note
                );
            }
            if failed > 0 {
                bail!("{failed} verification suite(s) failed");
            }
            println!("all {} suites passed", results.len());
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
            parallel,
        } => run_sweep(&config, &param, &values, parallel),
        Command::GenSynthetic {
            users,
            items,
            clusters,
            seed,
            path,
        } => {
            let text = fenrec_core::synth::generate(users, items, clusters, seed)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            outputs::write_file(&path, &text)?;
            println!("wrote {} users to {}", users, path.display());
            Ok(())
        }
    }
}

fn load_dataset(config: &ExperimentConfig) -> Result<(DatasetSplit, RemapTable)> {
    let Some(dataset) = &config.dataset else {
        bail!("no dataset configured; pass --set dataset=PATH or put `dataset` in the config file");
    };
    let text = std::fs::read_to_string(dataset)
        .with_context(|| format!("reading dataset {dataset}"))?;
    let (sequences, remap) = parse_interactions(&text, 3).map_err(|e| anyhow::anyhow!("{e}"))?;
    let split = split_leave_one_out(&sequences, remap.catalog_size())
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok((split, remap))
}

/// Full train + test-evaluation pipeline into one run directory.
fn run_training(config: &ExperimentConfig, out: &Path, quiet: bool) -> Result<MetricsReport> {
    let (split, remap) = load_dataset(config)?;
    outputs::ensure_dir(out)?;
    outputs::write_file(&out.join("resolved_config.toml"), &config.to_resolved_toml())?;
    outputs::write_file(&out.join("remap.tsv"), &outputs::remap_table_text(&remap))?;

    let log_path = out.join("log.jsonl");
    let mut log_lines = String::new();
    let out_owned = out.to_path_buf();
    let mut observer = |summary: &fenrec_core::train::EpochSummary| {
        let histogram_rel = summary.histogram.as_ref().map(|h| {
            let rel = format!("histograms/epoch_{:04}.csv", h.epoch);
            let _ = outputs::write_file(&out_owned.join(&rel), &outputs::histogram_csv(h));
            rel
        });
        log_lines.push_str(&outputs::epoch_record(summary, histogram_rel.as_deref()));
        log_lines.push('\n');
        if !quiet {
            println!(
                "epoch {:>3}  rec {:.4}  cl {:.4}  ndcg@10 {:.4}  mu {}",
                summary.epoch,
                summary.mean_rec_loss,
                summary.mean_cl_loss,
                summary.valid_ndcg10.unwrap_or(0.0),
                summary.mu_in_effect
            );
        }
    };
    let outcome =
        fit(&split, &config.hp, Some(&mut observer)).map_err(|e| anyhow::anyhow!("{e}"))?;
    outputs::write_file(&log_path, &log_lines)?;
    checkpoint::save(&outcome.best_params, &out.join("checkpoint.json"))?;

    let report = evaluate(&outcome.best_params, &split, EvalTarget::Test)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    outputs::write_file(&out.join("metrics.json"), &outputs::metrics_json(&report)?)?;
    Ok(report)
}

fn print_report(report: &MetricsReport) {
    for m in &report.at_k {
        println!("test HR@{:<2} {:.4}   NDCG@{:<2} {:.4}", m.k, m.hr, m.k, m.ndcg);
    }
    println!("item uniformity {:.4}", report.uniformity);
}

const SWEEPABLE: [&str; 7] = ["gamma", "lambda", "mu", "m", "tau2", "batch_size", "horizon"];

fn run_sweep(args: &ConfigArgs, param: &str, values: &str, parallel: bool) -> Result<()> {
    if !SWEEPABLE.contains(&param) {
        bail!("unknown sweep parameter `{param}`; expected one of {SWEEPABLE:?}");
    }
    let base = args.resolve()?;
    let out = args.out_dir();
    outputs::ensure_dir(&out)?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        bail!("--values is empty");
    }

    let jobs: Vec<(String, ExperimentConfig, PathBuf)> = values
        .iter()
        .map(|value| {
            let mut config = base.clone();
            config.set(param, value)?;
            let dir = out.join(format!("{param}_{value}"));
            Ok((value.clone(), config, dir))
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    if parallel {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(value, config, dir)| {
                std::thread::spawn(move || -> Result<(String, f64, f64)> {
                    let report = run_training(&config, &dir, true)?;
                    let at20 = report.at_k.iter().find(|m| m.k == 20).expect("k=20");
                    Ok((value, at20.ndcg, at20.hr))
                })
            })
            .collect();
        for handle in handles {
            rows.push(handle.join().expect("sweep worker panicked")?);
        }
    } else {
        for (value, config, dir) in jobs {
            println!("sweep {param} = {value}");
            let report = run_training(&config, &dir, true)?;
            let at20 = report.at_k.iter().find(|m| m.k == 20).expect("k=20");
            rows.push((value, at20.ndcg, at20.hr));
        }
    }

    let mut csv = String::from("value,ndcg20,hr20\n");
    for (value, ndcg, hr) in &rows {
        csv.push_str(&format!("{value},{ndcg},{hr}\n"));
    }
    outputs::write_file(&out.join("sweep.csv"), &csv)?;
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(())
}
