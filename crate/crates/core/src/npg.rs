//! Natural policy gradient on the mean-field control problem.
//!
//! Each outer iteration fits the compatible-function-approximation weights
//! `w` by SGD on samples from the discounted occupancy measure, then moves
//! the policy parameters along `w`.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::meanfield::{mf_value, step_unchecked};
use crate::model::EnvModel;
use crate::policy::{Policy, PolicyConfig, PolicyParams, SoftmaxPolicy};
use crate::rng::seeded;
use crate::simplex::{dot, Simplex};

/// How the advantage estimate is formed from the continuation rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageEstimator {
    /// Coin flipped before the continuation; the V-branch resamples the
    /// action. Unbiased for `Q - V`.
    #[default]
    Reconstructed,
    /// Both branches continue from the accepted action, with rewards counted
    /// after each transition. Has zero mean; kept for comparison.
    Literal,
}

fn default_value_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpgConfig {
    /// Outer step size.
    pub eta: f64,
    /// Inner SGD step size.
    pub alpha: f64,
    /// Outer iterations.
    pub j_steps: usize,
    /// Inner SGD iterations per outer iteration.
    pub l_steps: usize,
    /// Inner starting point; zero when absent.
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
    pub seed: u64,
    #[serde(default)]
    pub estimator: AdvantageEstimator,
    /// Truncation tolerance for the per-iterate value evaluations.
    #[serde(default = "default_value_tol")]
    pub value_tol: f64,
}

impl Default for NpgConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            alpha: 1e-3,
            j_steps: 100,
            l_steps: 100,
            w0: None,
            seed: 0,
            estimator: AdvantageEstimator::Reconstructed,
            value_tol: default_value_tol(),
        }
    }
}

impl NpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.j_steps == 0 || self.l_steps == 0 {
            return Err(Error::invalid("j_steps and l_steps must be at least 1"));
        }
        if self.value_tol.is_nan() || self.value_tol <= 0.0 {
            return Err(Error::invalid("value_tol must be positive"));
        }
        if let Some(w0) = &self.w0 {
            if w0.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("w0 has non-finite entries"));
            }
        }
        Ok(())
    }

    fn start(&self, dim: usize) -> Result<Vec<f64>> {
        match &self.w0 {
            Some(w0) => {
                check_len("w0", dim, w0.len())?;
                Ok(w0.clone())
            }
            None => Ok(vec![0.0; dim]),
        }
    }
}

/// One draw from the occupancy measure with its advantage estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySample {
    pub x: usize,
    /// Index of `mu` along the mean-field path.
    pub time: usize,
    pub mu: Simplex,
    pub u: usize,
    pub a_hat: f64,
}

/// `T` with `P(T = t) = (1 - gamma) gamma^t`, `t >= 0`.
pub fn sample_geometric<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> usize {
    if gamma <= 0.0 {
        return 0;
    }
    let u: f64 = rng.gen();
    ((1.0 - u).ln() / gamma.ln()).floor() as usize
}

/// Samples from the occupancy measure of a fixed policy. The deterministic
/// mean-field path and the per-state action distributions along it are
/// computed lazily and cached.
pub struct OccupancySampler<'a, E: ?Sized, P: ?Sized> {
    env: &'a E,
    policy: &'a P,
    mu0: Simplex,
    estimator: AdvantageEstimator,
    mus: Vec<Simplex>,
    nus: Vec<Simplex>,
    pis: Vec<Vec<Simplex>>,
}

impl<'a, E, P> OccupancySampler<'a, E, P>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    pub fn new(env: &'a E, policy: &'a P, mu0: &Simplex, estimator: AdvantageEstimator) -> Result<Self> {
        check_len("policy states", env.n_states(), policy.n_states())?;
        check_len("policy actions", env.n_actions(), policy.n_actions())?;
        check_len("initial distribution", env.n_states(), mu0.len())?;
        let mut s = Self {
            env,
            policy,
            mu0: mu0.clone(),
            estimator,
            mus: Vec::new(),
            nus: Vec::new(),
            pis: Vec::new(),
        };
        s.push(mu0.clone());
        Ok(s)
    }

    fn push(&mut self, mu: Simplex) {
        let pis = (0..self.env.n_states())
            .map(|x| self.policy.action_distribution(x, &mu))
            .collect::<Vec<_>>();
        let mut nu = vec![0.0; self.env.n_actions()];
        for (pi_x, &m) in pis.iter().zip(mu.as_slice()) {
            nu.iter_mut().zip(pi_x.as_slice()).for_each(|(n, p)| *n += m * p);
        }
        self.nus.push(Simplex::new(nu).expect("mixture of distributions"));
        self.mus.push(mu);
        self.pis.push(pis);
    }

    fn ensure(&mut self, t: usize) {
        while self.mus.len() <= t {
            let last = self.mus.last().expect("path starts at mu0");
            let next = step_unchecked(self.env, self.policy, last).next_mu;
            self.push(next);
        }
    }

    /// Mean-field state distribution at time `t`.
    pub fn mu_at(&mut self, t: usize) -> &Simplex {
        self.ensure(t);
        &self.mus[t]
    }

    fn act<R: Rng + ?Sized>(&mut self, x: usize, t: usize, rng: &mut R) -> usize {
        self.ensure(t);
        self.pis[t][x].sample(rng)
    }

    fn reward(&self, x: usize, u: usize, t: usize) -> f64 {
        self.env.reward(x, u, &self.mus[t], &self.nus[t])
    }

    fn next_state<R: Rng + ?Sized>(&mut self, x: usize, u: usize, t: usize, rng: &mut R) -> usize {
        self.ensure(t + 1);
        self.env.transition(x, u, &self.mus[t], &self.nus[t]).sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> OccupancySample {
        match self.estimator {
            AdvantageEstimator::Reconstructed => self.sample_reconstructed(rng),
            AdvantageEstimator::Literal => self.sample_literal(rng),
        }
    }

    fn sample_reconstructed<R: Rng + ?Sized>(&mut self, rng: &mut R) -> OccupancySample {
        let gamma = self.env.gamma();
        let horizon = sample_geometric(gamma, rng);
        let mut x = self.mu0.sample(rng);
        let mut u = self.act(x, 0, rng);
        for t in 0..horizon {
            x = self.next_state(x, u, t, rng);
            u = self.act(x, t + 1, rng);
        }
        let (x_acc, u_acc) = (x, u);
        let q_branch = rng.gen::<bool>();
        if !q_branch {
            u = self.act(x, horizon, rng);
        }
        let extra = sample_geometric(gamma, rng);
        let mut sum = 0.0;
        for t in horizon..=horizon + extra {
            sum += self.reward(x, u, t);
            if t < horizon + extra {
                x = self.next_state(x, u, t, rng);
                u = self.act(x, t + 1, rng);
            }
        }
        OccupancySample {
            x: x_acc,
            time: horizon,
            mu: self.mus[horizon].clone(),
            u: u_acc,
            a_hat: if q_branch { 2.0 * sum } else { -2.0 * sum },
        }
    }

    fn sample_literal<R: Rng + ?Sized>(&mut self, rng: &mut R) -> OccupancySample {
        let gamma = self.env.gamma();
        let mut t = 0;
        let mut x = self.mu0.sample(rng);
        let mut u = self.act(x, 0, rng);
        loop {
            let stop = rng.gen::<f64>() < 1.0 - gamma;
            x = self.next_state(x, u, t, rng);
            u = self.act(x, t + 1, rng);
            t += 1;
            if stop {
                break;
            }
        }
        let (x_acc, u_acc, horizon) = (x, u, t);
        let mut sum = 0.0;
        loop {
            let stop = rng.gen::<f64>() < 1.0 - gamma;
            x = self.next_state(x, u, t, rng);
            u = self.act(x, t + 1, rng);
            t += 1;
            sum += self.reward(x, u, t);
            if stop {
                break;
            }
        }
        let v_branch = rng.gen::<bool>();
        OccupancySample {
            x: x_acc,
            time: horizon,
            mu: self.mus[horizon].clone(),
            u: u_acc,
            a_hat: if v_branch { -2.0 * sum } else { 2.0 * sum },
        }
    }
}

/// One occupancy sample from a fresh sampler.
pub fn sample_occupancy<E, R>(
    env: &E,
    policy_cfg: &PolicyConfig,
    phi: &PolicyParams,
    mu0: &Simplex,
    estimator: AdvantageEstimator,
    rng: &mut R,
) -> Result<OccupancySample>
where
    E: EnvModel + ?Sized,
    R: Rng + ?Sized,
{
    let policy = SoftmaxPolicy::new(*policy_cfg, phi.clone())?;
    let mut sampler = OccupancySampler::new(env, &policy, mu0, estimator)?;
    Ok(sampler.sample(rng))
}

/// SGD on `(w . g - a / (1 - gamma))^2 / 2` over a sequence of
/// `(feature g, target a)` pairs. Returns the average of the iterates after
/// each update.
pub fn sgd_on_samples<I>(samples: I, w0: &[f64], alpha: f64, gamma: f64, outer: usize) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = (Vec<f64>, f64)>,
{
    let mut w = w0.to_vec();
    let mut avg = vec![0.0; w.len()];
    let mut count = 0usize;
    for (l, (g, a_hat)) in samples.into_iter().enumerate() {
        check_len("score feature", w.len(), g.len())?;
        let coeff = dot(&w, &g) - a_hat / (1.0 - gamma);
        if !coeff.is_finite() {
            return Err(Error::TrainingDivergence { outer, inner: l });
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= alpha * coeff * gi;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDivergence { outer, inner: l });
        }
        avg.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("SGD needs at least one sample"));
    }
    avg.iter_mut().for_each(|a| *a /= count as f64);
    Ok(avg)
}

fn inner_sgd_at<E, R>(
    env: &E,
    policy: &SoftmaxPolicy,
    mu0: &Simplex,
    cfg: &NpgConfig,
    outer: usize,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    E: EnvModel + ?Sized,
    R: Rng + ?Sized,
{
    let w0 = cfg.start(policy.config().dim())?;
    let mut sampler = OccupancySampler::new(env, policy, mu0, cfg.estimator)?;
    let samples = (0..cfg.l_steps).map(|_| {
        let s = sampler.sample(rng);
        (policy.log_prob_gradient_unchecked(s.x, &s.mu, s.u), s.a_hat)
    });
    sgd_on_samples(samples, &w0, cfg.alpha, env.gamma(), outer)
}

/// Averaged inner SGD iterate for the policy `phi`.
pub fn inner_sgd<E, R>(
    env: &E,
    policy_cfg: &PolicyConfig,
    phi: &PolicyParams,
    mu0: &Simplex,
    cfg: &NpgConfig,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    E: EnvModel + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let policy = SoftmaxPolicy::new(*policy_cfg, phi.clone())?;
    inner_sgd_at(env, &policy, mu0, cfg, 0, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingLogRow {
    pub j: usize,
    pub v_mf: f64,
    pub w_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    /// `Phi_1..Phi_J`.
    pub iterates: Vec<PolicyParams>,
    /// Mean-field value of each iterate.
    pub values: Vec<f64>,
    /// Mean-field value of `Phi_0`.
    pub initial_value: f64,
    pub log: Vec<TrainingLogRow>,
}

impl TrainingRun {
    /// Columns `j, v_mf, w_norm, wall_ms`.
    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        for row in &self.log {
            wtr.serialize(row)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Runs `cfg.j_steps` outer iterations from `phi0`, evaluating the
/// mean-field value from `mu0` after each.
pub fn npg_train<E>(
    env: &E,
    policy_cfg: &PolicyConfig,
    phi0: &PolicyParams,
    mu0: &Simplex,
    cfg: &NpgConfig,
) -> Result<TrainingRun>
where
    E: EnvModel + ?Sized,
{
    cfg.validate()?;
    policy_cfg.validate()?;
    let mut policy = SoftmaxPolicy::new(*policy_cfg, phi0.clone())?;
    let mut rng = seeded(cfg.seed);
    let (initial_value, _) = mf_value(env, &policy, mu0, cfg.value_tol)?;
    let mut run = TrainingRun {
        iterates: Vec::with_capacity(cfg.j_steps),
        values: Vec::with_capacity(cfg.j_steps),
        initial_value,
        log: Vec::with_capacity(cfg.j_steps),
    };
    for j in 0..cfg.j_steps {
        let started = Instant::now();
        let w = inner_sgd_at(env, &policy, mu0, cfg, j, &mut rng)?;
        let next = policy.params().stepped(&w, cfg.eta)?;
        if !next.is_finite() {
            return Err(Error::TrainingDivergence {
                outer: j,
                inner: cfg.l_steps,
            });
        }
        policy = policy.with_params(next)?;
        let (value, _) = mf_value(env, &policy, mu0, cfg.value_tol)?;
        let w_norm = dot(&w, &w).sqrt();
        log::debug!("npg iteration {j}: v_mf = {value:.6}, |w| = {w_norm:.4e}");
        run.log.push(TrainingLogRow {
            j: j + 1,
            v_mf: value,
            w_norm,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        run.values.push(value);
        run.iterates.push(policy.params().clone());
    }
    Ok(run)
}

/// Index of the best value (smallest index on ties) and the mean value.
pub fn select_policy(values: &[f64]) -> Result<(usize, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("no iterates to select from"));
    }
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    Ok((best, values.iter().sum::<f64>() / values.len() as f64))
}
