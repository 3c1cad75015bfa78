use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mfmarl_core::harness::{
    run_error_vs_n, summarize, theorem_bound_report, train_policy, write_outputs, BoundReport,
    ExperimentConfig, ExperimentRow,
};
use mfmarl_core::{Error, SoftmaxPolicy};

#[derive(Parser)]
#[command(name = "mfmarl", version, about = "Mean-field vs N-agent value experiments on the firm network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy, then measure percentage error against N.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Results CSV; sidecar files are written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated population sizes.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Report the approximation bound for a trained policy.
    Bound {
        #[arg(long)]
        config: PathBuf,
        /// Use this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a policy and save it.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn mean_abs_gap(rows: &[ExperimentRow], n: usize) -> f64 {
    let gaps: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| (r.v_marl_mean - r.v_mf).abs()).collect();
    gaps.iter().sum::<f64>() / gaps.len().max(1) as f64
}

fn print_bound(report: &BoundReport, rows: Option<&[ExperimentRow]>) {
    println!(
        "L_P = {:.6}  L_Q = {:.6}  S_P = {:.6}  gamma*S_P = {:.6}",
        report.l_p, report.l_q, report.s_p, report.gamma_sp
    );
    for (n, bound) in &report.bounds {
        let observed = rows.map(|r| format!("  observed mean |v_marl - v_mf| = {:.6}", mean_abs_gap(r, *n)));
        match bound {
            Some(b) => println!("N = {n}: bound = {b:.6}{}", observed.unwrap_or_default()),
            None => println!("N = {n}: bound inapplicable (gamma*S_P >= 1){}", observed.unwrap_or_default()),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &Path,
    out: Option<PathBuf>,
    seeds: Option<usize>,
    n: Option<Vec<usize>>,
    sigma: Option<f64>,
    gamma: Option<f64>,
    threads: Option<usize>,
) -> Result<()> {
    let mut cfg = load(config)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(n) = n {
        cfg.n_list = n;
    }
    if let Some(s) = sigma {
        cfg.model.sigma = s;
    }
    if let Some(g) = gamma {
        cfg.gamma = g;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    let out = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results.csv"));
    cfg.output = Some(out.clone());
    cfg.validate().context("invalid configuration")?;

    let outcome = run_error_vs_n(&cfg)?;
    let paths = write_outputs(&outcome, &out)?;
    println!("gamma = {} (training best iterate {} of {})", cfg.gamma, outcome.best_index + 1, outcome.training.values.len());
    println!("N,mean_error,std_error,mean_error_sqrtN");
    if !outcome.result.rows.is_empty() {
        for s in summarize(&outcome.result.rows)? {
            println!("{},{:.6},{:.6},{:.6}", s.n, s.mean_error, s.std_error, s.mean_error_sqrt_n);
        }
    }
    for skip in &outcome.result.skipped {
        println!("skipped N = {} seed = {}: {}", skip.n, skip.seed, skip.reason);
    }
    match theorem_bound_report(&cfg, &outcome.policy) {
        Ok(report) => print_bound(&report, Some(&outcome.result.rows)),
        Err(Error::AffineRequired) => println!("bound: not reported (reward is not affine)"),
        Err(e) => return Err(e.into()),
    }
    println!("results: {}", paths.results.display());
    println!("summary: {}", paths.summary.display());
    println!("metadata: {}", paths.metadata.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seeds,
            n,
            sigma,
            gamma,
            threads,
        } => run(&config, out, seeds, n, sigma, gamma, threads),
        Command::Bound { config, checkpoint } => {
            let cfg = load(&config)?;
            let policy = match checkpoint {
                Some(path) => SoftmaxPolicy::read_checkpoint(&path)
                    .with_context(|| format!("reading checkpoint {}", path.display()))?,
                None => train_policy(&cfg)?.0,
            };
            print_bound(&theorem_bound_report(&cfg, &policy)?, None);
            Ok(())
        }
        Command::Train { config, checkpoint } => {
            let cfg = load(&config)?;
            let (policy, run, best, mean) = train_policy(&cfg)?;
            policy.write_checkpoint(&checkpoint)?;
            let log_path = checkpoint.with_extension("training.csv");
            run.write_log_csv(&log_path)?;
            println!(
                "v_mf(Phi_0) = {:.6}; best iterate {} with v_mf = {:.6}; iterate mean {:.6}",
                run.initial_value,
                best + 1,
                run.values[best],
                mean
            );
            println!("checkpoint: {}", checkpoint.display());
            println!("training log: {}", log_path.display());
            Ok(())
        }
    }
}
