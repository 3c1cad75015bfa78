//! Error-versus-population-size experiments on the firm network.
//!
//! One policy is trained on the mean-field problem. For each population size
//! `N` and seed, initial states are drawn, the N-agent value is estimated by
//! Monte Carlo and compared with the mean-field value started from the
//! empirical distribution of those same states.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interaction::InteractionMatrix;
use crate::meanfield::{mf_value, theorem1_bound, BoundInputs};
use crate::model::{build_firm_env, EnvModel, FirmEnv, FirmModelConfig, SAFETY_FACTOR};
use crate::nagent::{estimate_v_marl, AgentSystemState};
use crate::npg::{npg_train, select_policy, NpgConfig, TrainingRun};
use crate::policy::{estimate_lipschitz_lq, PolicyConfig, SoftmaxPolicy, DEFAULT_HIDDEN_WIDTH};
use crate::rng::{mix_seed, seeded};
use crate::simplex::Simplex;

/// Smallest `|v_mf|` for which a percentage error is reported.
pub const DIVISION_GUARD: f64 = 1e-9;
/// Random pairs used to estimate the trained policy's Lipschitz constant.
pub const LQ_TRIALS: usize = 10_000;

/// Interaction structure of the N-agent system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    /// Each agent weighs its `k` successors on a ring equally.
    #[default]
    Ring,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: FirmModelConfig,
    pub gamma: f64,
    pub n_list: Vec<usize>,
    pub seeds: usize,
    pub episodes_per_seed: usize,
    pub horizon_tol: f64,
    pub npg: NpgConfig,
    pub hidden_width: usize,
    /// Initial state distribution; uniform when absent.
    pub mu0: Option<Vec<f64>>,
    pub interaction: InteractionKind,
    pub base_seed: u64,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: FirmModelConfig::default(),
            gamma: 0.9,
            n_list: vec![10, 20, 50, 100, 200],
            seeds: 25,
            episodes_per_seed: 10,
            horizon_tol: 1e-3,
            npg: NpgConfig::default(),
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            mu0: None,
            interaction: InteractionKind::Ring,
            base_seed: 0,
            threads: None,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.npg.validate()?;
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::invalid("n_list must be nonempty with every N >= 1"));
        }
        if self.seeds == 0 || self.episodes_per_seed == 0 {
            return Err(Error::invalid("seeds and episodes_per_seed must be at least 1"));
        }
        if self.horizon_tol.is_nan() || self.horizon_tol <= 0.0 {
            return Err(Error::invalid("horizon_tol must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be at least 1"));
        }
        self.policy_config()?;
        self.initial_distribution()?;
        build_firm_env(&self.model, self.gamma).map(|_| ())
    }

    pub fn policy_config(&self) -> Result<PolicyConfig> {
        PolicyConfig::new(self.model.q, 2, self.hidden_width)
    }

    pub fn initial_distribution(&self) -> Result<Simplex> {
        match &self.mu0 {
            None => Simplex::uniform(self.model.q),
            Some(w) => {
                if w.len() != self.model.q {
                    return Err(Error::DimensionMismatch {
                        context: "mu0",
                        expected: self.model.q,
                        actual: w.len(),
                    });
                }
                Simplex::new(w.clone())
            }
        }
    }

    pub fn interaction_matrix(&self, n: usize) -> Result<InteractionMatrix> {
        match self.interaction {
            InteractionKind::Ring => InteractionMatrix::ring_k_neighbor(n, self.model.k.min(n)),
            InteractionKind::Uniform => InteractionMatrix::uniform(n),
        }
    }
}

/// One `(N, seed)` cell of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: usize,
    pub v_marl_mean: f64,
    pub v_marl_stderr: f64,
    pub v_mf: f64,
    pub error_pct: f64,
}

pub fn percentage_error(v_marl: f64, v_mf: f64) -> f64 {
    (v_marl - v_mf).abs() / v_mf.abs() * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedCell {
    pub n: usize,
    pub seed: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    /// Sorted by `(N, seed)`.
    pub rows: Vec<ExperimentRow>,
    pub skipped: Vec<SkippedCell>,
}

impl ExperimentResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        if self.rows.is_empty() {
            wtr.write_record(["N", "seed", "v_marl_mean", "v_marl_stderr", "v_mf", "error_pct"])?;
        }
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<ExperimentRow>, _>>()?;
        Ok(Self {
            rows,
            skipped: Vec::new(),
        })
    }
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub result: ExperimentResult,
    pub training: TrainingRun,
    pub policy: SoftmaxPolicy,
    pub best_index: usize,
    pub mean_iterate_value: f64,
    pub train_ms: f64,
    pub eval_ms: f64,
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Trains the mean-field policy and returns the best iterate.
pub fn train_policy(cfg: &ExperimentConfig) -> Result<(SoftmaxPolicy, TrainingRun, usize, f64)> {
    cfg.validate()?;
    let env = build_firm_env(&cfg.model, cfg.gamma)?;
    let pcfg = cfg.policy_config()?;
    let mu0 = cfg.initial_distribution()?;
    let phi0 = SoftmaxPolicy::initialize(pcfg, cfg.npg.seed)?.into_params();
    let run = npg_train(&env, &pcfg, &phi0, &mu0, &cfg.npg)?;
    let (best, mean) = select_policy(&run.values)?;
    let policy = SoftmaxPolicy::new(pcfg, run.iterates[best].clone())?;
    log::info!(
        "trained policy: v_mf(Phi_0) = {:.6}, best iterate {} with v_mf = {:.6}, iterate mean {:.6}",
        run.initial_value,
        best + 1,
        run.values[best],
        mean
    );
    Ok((policy, run, best, mean))
}

/// Fills every `(N, seed)` cell for a fixed policy.
pub fn evaluate_cells(cfg: &ExperimentConfig, env: &FirmEnv, policy: &SoftmaxPolicy) -> Result<ExperimentResult> {
    let mu0 = cfg.initial_distribution()?;
    let cells: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| (0..cfg.seeds).map(move |s| (n, s)))
        .collect();
    let outcomes: Vec<Result<std::result::Result<ExperimentRow, SkippedCell>>> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let mut rng = seeded(mix_seed(&[cfg.base_seed, n as u64, seed as u64]));
            let w = cfg.interaction_matrix(n)?;
            let init = AgentSystemState::sample(n, &mu0, &mut rng)?;
            let empirical = init.empirical_states(env.n_states())?;
            let (v_mf, traj) = mf_value(env, policy, &empirical, cfg.horizon_tol)?;
            let (mean, stderr) =
                estimate_v_marl(env, &w, policy, &init.states, traj.horizon, cfg.episodes_per_seed, &mut rng)?;
            if v_mf.abs() < DIVISION_GUARD {
                let err = Error::DivisionGuard { v_mf };
                log::warn!("N={n} seed={seed}: {err}");
                return Ok(Err(SkippedCell {
                    n,
                    seed,
                    reason: err.to_string(),
                }));
            }
            Ok(Ok(ExperimentRow {
                n,
                seed,
                v_marl_mean: mean,
                v_marl_stderr: stderr,
                v_mf,
                error_pct: percentage_error(mean, v_mf),
            }))
        })
        .collect();
    let mut result = ExperimentResult::default();
    for o in outcomes {
        match o? {
            Ok(row) => result.rows.push(row),
            Err(skip) => result.skipped.push(skip),
        }
    }
    result.rows.sort_by_key(|r| (r.n, r.seed));
    Ok(result)
}

pub fn run_error_vs_n(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    with_threads(cfg.threads, || {
        let env = build_firm_env(&cfg.model, cfg.gamma)?;
        let started = Instant::now();
        let (policy, training, best_index, mean_iterate_value) = train_policy(cfg)?;
        let train_ms = started.elapsed().as_secs_f64() * 1e3;
        let started = Instant::now();
        let result = evaluate_cells(cfg, &env, &policy)?;
        let eval_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(ExperimentOutcome {
            config: cfg.clone(),
            result,
            training,
            policy,
            best_index,
            mean_iterate_value,
            train_ms,
            eval_ms,
        })
    })?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_error: f64,
    /// Population standard deviation over seeds.
    pub std_error: f64,
    #[serde(rename = "mean_error_sqrtN")]
    pub mean_error_sqrt_n: f64,
}

/// Per-`N` mean, population standard deviation and `mean * sqrt(N)` of the
/// percentage errors, in increasing `N`.
pub fn summarize(rows: &[ExperimentRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::invalid("nothing to summarize"));
    }
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    Ok(ns
        .into_iter()
        .map(|n| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.error_pct).collect();
            let k = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / k;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / k;
            SummaryRow {
                n,
                mean_error: mean,
                std_error: var.sqrt(),
                mean_error_sqrt_n: mean * (n as f64).sqrt(),
            }
        })
        .collect())
}

pub fn write_summary_csv(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for row in summary {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Approximation bound evaluated for the trained policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub l_p: f64,
    pub l_q: f64,
    pub s_p: f64,
    pub gamma_sp: f64,
    /// `(N, bound)`; the bound is absent when `gamma * S_P >= 1`.
    pub bounds: Vec<(usize, Option<f64>)>,
}

impl BoundReport {
    pub fn applicable(&self) -> bool {
        self.gamma_sp < 1.0
    }
}

impl std::fmt::Display for BoundReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "L_P = {:.6}, L_Q = {:.6}, S_P = {:.6}, gamma*S_P = {:.6}", self.l_p, self.l_q, self.s_p, self.gamma_sp)?;
        for (n, b) in &self.bounds {
            match b {
                Some(b) => writeln!(f, "N = {n}: bound = {b:.6}")?,
                None => writeln!(f, "N = {n}: bound inapplicable (gamma*S_P >= 1)")?,
            }
        }
        Ok(())
    }
}

/// Evaluates the approximation bound for `policy` at every `N` of the config.
pub fn theorem_bound_report(cfg: &ExperimentConfig, policy: &SoftmaxPolicy) -> Result<BoundReport> {
    cfg.validate()?;
    let env = build_firm_env(&cfg.model, cfg.gamma)?;
    let l_q = estimate_lipschitz_lq(policy, LQ_TRIALS, &mut seeded(mix_seed(&[cfg.base_seed, 0x1a])))
        * SAFETY_FACTOR;
    let first = BoundInputs::from_env(&env, l_q, 1)?;
    let gamma_sp = first.gamma * first.s_p();
    let bounds = cfg
        .n_list
        .iter()
        .map(|&n| match theorem1_bound(&BoundInputs { n_agents: n, ..first }) {
            Ok(b) => Ok((n, Some(b))),
            Err(Error::BoundInapplicable { .. }) => Ok((n, None)),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport {
        l_p: first.l_p,
        l_q,
        s_p: first.s_p(),
        gamma_sp,
        bounds,
    })
}

/// Git-style content hash: SHA-256 over `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub config: ExperimentConfig,
    pub gamma: f64,
    pub checkpoint_sha256: String,
    pub best_iterate: usize,
    pub best_value: f64,
    pub initial_value: f64,
    pub mean_iterate_value: f64,
    pub skipped: Vec<SkippedCell>,
    pub train_ms: f64,
    pub eval_ms: f64,
    pub version: &'static str,
}

/// Paths of every artifact written next to the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub metadata: PathBuf,
    pub checkpoint: PathBuf,
    pub training_log: PathBuf,
}

impl OutputPaths {
    pub fn for_results(results: &Path) -> Self {
        let stem = results.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
        let sibling = |suffix: &str| results.with_file_name(format!("{stem}_{suffix}"));
        Self {
            results: results.to_path_buf(),
            summary: sibling("summary.csv"),
            metadata: sibling("metadata.json"),
            checkpoint: sibling("policy.txt"),
            training_log: sibling("training.csv"),
        }
    }
}

/// Writes results, summary, checkpoint, training log and metadata.
pub fn write_outputs(outcome: &ExperimentOutcome, results: &Path) -> Result<OutputPaths> {
    let paths = OutputPaths::for_results(results);
    if let Some(dir) = results.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    outcome.result.write_csv(&paths.results)?;
    if !outcome.result.rows.is_empty() {
        write_summary_csv(&summarize(&outcome.result.rows)?, &paths.summary)?;
    }
    let ckpt = outcome.policy.to_checkpoint_bytes();
    std::fs::write(&paths.checkpoint, &ckpt).map_err(|e| Error::io(&paths.checkpoint, e))?;
    outcome.training.write_log_csv(&paths.training_log)?;
    let meta = RunMetadata {
        config: outcome.config.clone(),
        gamma: outcome.config.gamma,
        checkpoint_sha256: content_hash(&ckpt),
        best_iterate: outcome.best_index + 1,
        best_value: outcome.training.values[outcome.best_index],
        initial_value: outcome.training.initial_value,
        mean_iterate_value: outcome.mean_iterate_value,
        skipped: outcome.result.skipped.clone(),
        train_ms: outcome.train_ms,
        eval_ms: outcome.eval_ms,
        version: env!("CARGO_PKG_VERSION"),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&paths.metadata, json).map_err(|e| Error::io(&paths.metadata, e))?;
    Ok(paths)
}
