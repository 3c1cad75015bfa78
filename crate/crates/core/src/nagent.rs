//! Finite N-agent system with weighted population views.
//!
//! Each step has three phases. Every agent draws its action from the policy
//! at its own state and its weighted state view. Action views are then formed
//! from the realized actions and rewards are paid. Finally every agent draws
//! its next state. Random draws are consumed in agent order within each phase.

use std::path::Path;

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::interaction::InteractionMatrix;
use crate::model::EnvModel;
use crate::policy::Policy;
use crate::rng::substream;
use crate::simplex::{empirical_distribution, Simplex};

/// Joint state of the population. `actions` is empty until the decision
/// phase of a step has run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentSystemState {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl AgentSystemState {
    pub fn new(states: Vec<usize>, n_states: usize) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::invalid("agent system needs at least one agent"));
        }
        if let Some(bad) = states.iter().find(|&&x| x >= n_states) {
            return Err(Error::invalid(format!("state {bad} out of range 0..{n_states}")));
        }
        Ok(Self {
            states,
            actions: Vec::new(),
        })
    }

    /// `n_agents` i.i.d. draws from `mu0`.
    pub fn sample<R: Rng + ?Sized>(n_agents: usize, mu0: &Simplex, rng: &mut R) -> Result<Self> {
        Self::new((0..n_agents).map(|_| mu0.sample(rng)).collect(), mu0.len())
    }

    pub fn n_agents(&self) -> usize {
        self.states.len()
    }

    /// Unweighted empirical state distribution `mu^N`.
    pub fn empirical_states(&self, n_states: usize) -> Result<Simplex> {
        empirical_distribution(&self.states, n_states)
    }
}

fn check_system<E, P>(env: &E, w: &InteractionMatrix, policy: &P, states: &[usize]) -> Result<()>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    check_len("policy states", env.n_states(), policy.n_states())?;
    check_len("policy actions", env.n_actions(), policy.n_actions())?;
    check_len("interaction matrix size", states.len(), w.n_agents())?;
    if let Some(bad) = states.iter().find(|&&x| x >= env.n_states()) {
        return Err(Error::invalid(format!("state {bad} out of range 0..{}", env.n_states())));
    }
    Ok(())
}

/// Actions, rewards and next states of one step.
struct StepDraw {
    actions: Vec<usize>,
    rewards: Vec<f64>,
    next: Vec<usize>,
}

fn step_unchecked<E, P, R>(env: &E, w: &InteractionMatrix, policy: &P, states: &[usize], rng: &mut R) -> StepDraw
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    let mu_views = w.all_views(states, env.n_states());
    let actions: Vec<usize> = states
        .iter()
        .zip(&mu_views)
        .map(|(&x, mu)| policy.action_distribution(x, mu).sample(rng))
        .collect();
    let nu_views = w.all_views(&actions, env.n_actions());
    let mut rewards = Vec::with_capacity(states.len());
    let mut next = Vec::with_capacity(states.len());
    for (i, (&x, &u)) in states.iter().zip(&actions).enumerate() {
        rewards.push(env.reward(x, u, &mu_views[i], &nu_views[i]));
    }
    for (i, (&x, &u)) in states.iter().zip(&actions).enumerate() {
        next.push(env.transition(x, u, &mu_views[i], &nu_views[i]).sample(rng));
    }
    StepDraw {
        actions,
        rewards,
        next,
    }
}

/// Advances the system one step. Fills `sys.actions` with the actions taken
/// and returns the next state (actions empty) and per-agent rewards.
pub fn step<E, P, R>(
    env: &E,
    w: &InteractionMatrix,
    policy: &P,
    sys: &mut AgentSystemState,
    rng: &mut R,
) -> Result<(AgentSystemState, Vec<f64>)>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    check_system(env, w, policy, &sys.states)?;
    let draw = step_unchecked(env, w, policy, &sys.states, rng);
    sys.actions = draw.actions;
    Ok((
        AgentSystemState {
            states: draw.next,
            actions: Vec::new(),
        },
        draw.rewards,
    ))
}

/// Per-step record of a rollout over steps `0..=horizon`.
#[derive(Debug, Clone)]
pub struct RolloutRecord {
    pub states: Vec<Vec<usize>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    /// Unweighted empirical state distribution at each step.
    pub mu_n: Vec<Simplex>,
    /// Unweighted empirical action distribution at each step.
    pub nu_n: Vec<Simplex>,
    pub gamma: f64,
    /// `sum_t gamma^t * mean_i r_t^i`
    pub discounted_return: f64,
}

impl RolloutRecord {
    pub fn horizon(&self) -> usize {
        self.rewards.len().saturating_sub(1)
    }

    pub fn mean_rewards(&self) -> Vec<f64> {
        self.rewards
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }

    pub fn recompute_return(&self) -> f64 {
        discounted_sum(&self.mean_rewards(), self.gamma)
    }

    /// Columns `t, agent, x, u, reward`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["t", "agent", "x", "u", "reward"])?;
        for (t, ((xs, us), rs)) in self.states.iter().zip(&self.actions).zip(&self.rewards).enumerate() {
            for (i, ((x, u), r)) in xs.iter().zip(us).zip(rs).enumerate() {
                wtr.write_record(&[t.to_string(), i.to_string(), x.to_string(), u.to_string(), r.to_string()])?;
            }
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn discounted_sum(values: &[f64], gamma: f64) -> f64 {
    let mut disc = 1.0;
    let mut total = 0.0;
    for v in values {
        total += disc * v;
        disc *= gamma;
    }
    total
}

/// Runs steps `0..=horizon` from `initial_states`, recording everything.
pub fn rollout<E, P, R>(
    env: &E,
    w: &InteractionMatrix,
    policy: &P,
    initial_states: &[usize],
    horizon: usize,
    rng: &mut R,
) -> Result<RolloutRecord>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    check_system(env, w, policy, initial_states)?;
    let (n_states, n_actions) = (env.n_states(), env.n_actions());
    let mut rec = RolloutRecord {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon + 1),
        rewards: Vec::with_capacity(horizon + 1),
        mu_n: Vec::with_capacity(horizon + 1),
        nu_n: Vec::with_capacity(horizon + 1),
        gamma: env.gamma(),
        discounted_return: 0.0,
    };
    let mut states = initial_states.to_vec();
    for _ in 0..=horizon {
        let draw = step_unchecked(env, w, policy, &states, rng);
        rec.mu_n.push(empirical_distribution(&states, n_states)?);
        rec.nu_n.push(empirical_distribution(&draw.actions, n_actions)?);
        rec.states.push(std::mem::replace(&mut states, draw.next));
        rec.actions.push(draw.actions);
        rec.rewards.push(draw.rewards);
    }
    rec.discounted_return = rec.recompute_return();
    Ok(rec)
}

/// Discounted population-average return of one episode, without recording.
fn episode_return<E, P, R>(
    env: &E,
    w: &InteractionMatrix,
    policy: &P,
    initial_states: &[usize],
    horizon: usize,
    rng: &mut R,
) -> f64
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    let gamma = env.gamma();
    let n = initial_states.len() as f64;
    let mut states = initial_states.to_vec();
    let mut disc = 1.0;
    let mut total = 0.0;
    for _ in 0..=horizon {
        let draw = step_unchecked(env, w, policy, &states, rng);
        total += disc * draw.rewards.iter().sum::<f64>() / n;
        disc *= gamma;
        states = draw.next;
    }
    total
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of the population value from fixed initial states.
///
/// One base seed is drawn from `rng`; episode `k` runs on substream `k` of
/// that seed, so the result does not depend on the thread count.
pub fn estimate_v_marl<E, P, R>(
    env: &E,
    w: &InteractionMatrix,
    policy: &P,
    initial_states: &[usize],
    horizon: usize,
    episodes: usize,
    rng: &mut R,
) -> Result<(f64, f64)>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
    R: RngCore + ?Sized,
{
    if episodes == 0 {
        return Err(Error::invalid("need at least one episode"));
    }
    check_system(env, w, policy, initial_states)?;
    let base = rng.next_u64();
    let returns: Vec<f64> = (0..episodes as u64)
        .into_par_iter()
        .map(|k| episode_return(env, w, policy, initial_states, horizon, &mut substream(base, k)))
        .collect();
    Ok(mean_and_stderr(&returns))
}
