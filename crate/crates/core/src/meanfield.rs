//! Deterministic mean-field dynamics and the MARL-vs-MFC error bound.
//!
//! Under a stationary policy the population state distribution evolves as
//! `mu' = sum_x sum_u P(x, u, mu, nu) pi(x, mu)(u) mu(x)` with
//! `nu = sum_x pi(x, mu) mu(x)`, and earns `r_mf(mu) = E[r(x, u, mu, nu)]`.

use std::path::Path;

use crate::error::{check_len, Error, Result};
use crate::model::{check_gamma, EnvModel};
use crate::policy::Policy;
use crate::simplex::Simplex;

/// One step of the mean-field system evaluated at `mu`.
#[derive(Debug, Clone)]
pub struct MfStep {
    pub nu: Simplex,
    pub next_mu: Simplex,
    pub reward: f64,
}

fn check_dims<E, P>(env: &E, policy: &P, mu: &Simplex) -> Result<()>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    check_len("policy states", env.n_states(), policy.n_states())?;
    check_len("policy actions", env.n_actions(), policy.n_actions())?;
    check_len("mean-field state distribution", env.n_states(), mu.len())
}

fn action_mixture(per_state: &[Simplex], mu: &Simplex, n_actions: usize) -> Simplex {
    let mut nu = vec![0.0; n_actions];
    for (pi_x, &m) in per_state.iter().zip(mu.as_slice()) {
        if m == 0.0 {
            continue;
        }
        nu.iter_mut().zip(pi_x.as_slice()).for_each(|(n, p)| *n += m * p);
    }
    Simplex::new(nu).expect("mixture of distributions is a distribution")
}

/// `nu_mf(mu) = sum_x pi(x, mu) mu(x)`.
pub fn mf_action_distribution<E, P>(env: &E, policy: &P, mu: &Simplex) -> Result<Simplex>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    check_dims(env, policy, mu)?;
    let per_state: Vec<Simplex> = (0..env.n_states())
        .map(|x| policy.action_distribution(x, mu))
        .collect();
    Ok(action_mixture(&per_state, mu, env.n_actions()))
}

/// `nu`, next `mu` and `r_mf` at `mu`, sharing the policy evaluations.
pub(crate) fn step_unchecked<E, P>(env: &E, policy: &P, mu: &Simplex) -> MfStep
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    let n_states = env.n_states();
    let per_state: Vec<Simplex> = (0..n_states)
        .map(|x| policy.action_distribution(x, mu))
        .collect();
    let nu = action_mixture(&per_state, mu, env.n_actions());
    let mut next = vec![0.0; n_states];
    let mut reward = 0.0;
    for (x, pi_x) in per_state.iter().enumerate() {
        let m = mu.get(x);
        if m == 0.0 {
            continue;
        }
        for (u, &pu) in pi_x.as_slice().iter().enumerate() {
            let w = m * pu;
            if w == 0.0 {
                continue;
            }
            reward += w * env.reward(x, u, mu, &nu);
            let p = env.transition(x, u, mu, &nu);
            next.iter_mut().zip(p.as_slice()).for_each(|(n, q)| *n += w * q);
        }
    }
    MfStep {
        nu,
        next_mu: Simplex::new(next).expect("mixture of transition laws is a distribution"),
        reward,
    }
}

pub fn mf_step<E, P>(env: &E, policy: &P, mu: &Simplex) -> Result<MfStep>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    check_dims(env, policy, mu)?;
    Ok(step_unchecked(env, policy, mu))
}

pub fn mf_transition<E, P>(env: &E, policy: &P, mu: &Simplex) -> Result<Simplex>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    Ok(mf_step(env, policy, mu)?.next_mu)
}

pub fn mf_reward<E, P>(env: &E, policy: &P, mu: &Simplex) -> Result<f64>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    Ok(mf_step(env, policy, mu)?.reward)
}

/// Smallest `T` with `gamma^T * m_r / (1 - gamma) <= tol`, i.e. the
/// discounted tail beyond step `T` is at most `tol`.
pub fn truncation_horizon(gamma: f64, m_r: f64, tol: f64) -> Result<usize> {
    check_gamma(gamma)?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid(format!("truncation tolerance must be positive, got {tol}")));
    }
    if gamma == 0.0 || m_r <= 0.0 {
        return Ok(0);
    }
    let ratio = tol * (1.0 - gamma) / m_r;
    if ratio >= 1.0 {
        return Ok(0);
    }
    Ok((ratio.ln() / gamma.ln()).ceil() as usize)
}

/// Mean-field path `mu_0..mu_T` with per-step `nu_t` and `r_mf(mu_t)`.
#[derive(Debug, Clone)]
pub struct MfTrajectory {
    pub mus: Vec<Simplex>,
    pub nus: Vec<Simplex>,
    pub rewards: Vec<f64>,
    pub horizon: usize,
}

impl MfTrajectory {
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut disc = 1.0;
        let mut total = 0.0;
        for r in &self.rewards {
            total += disc * r;
            disc *= gamma;
        }
        total
    }

    /// Columns `t, mu_0.., nu_0.., r_mf`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let n_states = self.mus.first().map_or(0, Simplex::len);
        let n_actions = self.nus.first().map_or(0, Simplex::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..n_states).map(|k| format!("mu_{k}")));
        header.extend((0..n_actions).map(|k| format!("nu_{k}")));
        header.push("r_mf".into());
        wtr.write_record(&header)?;
        for (t, ((mu, nu), r)) in self.mus.iter().zip(&self.nus).zip(&self.rewards).enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(mu.as_slice().iter().map(f64::to_string));
            rec.extend(nu.as_slice().iter().map(f64::to_string));
            rec.push(r.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Runs the mean-field system for `horizon` steps from `mu0`.
pub fn mf_rollout<E, P>(env: &E, policy: &P, mu0: &Simplex, horizon: usize) -> Result<MfTrajectory>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    check_dims(env, policy, mu0)?;
    let mut mus = Vec::with_capacity(horizon + 1);
    let mut nus = Vec::with_capacity(horizon + 1);
    let mut rewards = Vec::with_capacity(horizon + 1);
    let mut mu = mu0.clone();
    for t in 0..=horizon {
        let step = step_unchecked(env, policy, &mu);
        nus.push(step.nu);
        rewards.push(step.reward);
        let next = step.next_mu;
        mus.push(std::mem::replace(&mut mu, next));
        if t == horizon {
            break;
        }
    }
    Ok(MfTrajectory {
        mus,
        nus,
        rewards,
        horizon,
    })
}

/// Discounted mean-field value, truncated where the tail is below `tol`.
pub fn mf_value<E, P>(env: &E, policy: &P, mu0: &Simplex, tol: f64) -> Result<(f64, MfTrajectory)>
where
    E: EnvModel + ?Sized,
    P: Policy + ?Sized,
{
    let horizon = truncation_horizon(env.gamma(), env.reward_bound(), tol)?;
    let traj = mf_rollout(env, policy, mu0, horizon)?;
    Ok((traj.discounted_return(env.gamma()), traj))
}

/// Constants entering the approximation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub l_p: f64,
    pub l_q: f64,
    pub l_r: f64,
    pub m_r: f64,
    pub m_f: f64,
    pub b_l1: f64,
    pub gamma: f64,
    pub n_agents: usize,
    pub n_states: usize,
    pub n_actions: usize,
}

impl BoundInputs {
    /// Collects constants from an affine env. `l_q` is supplied by the
    /// caller, usually from [`crate::policy::estimate_lipschitz_lq`].
    pub fn from_env<E: EnvModel + ?Sized>(env: &E, l_q: f64, n_agents: usize) -> Result<Self> {
        let spec = env.affine_spec().ok_or(Error::AffineRequired)?;
        let c = spec.constants();
        Ok(Self {
            l_p: env.lipschitz_p(),
            l_q,
            l_r: c.l_r,
            m_r: c.m_r,
            m_f: c.m_f,
            b_l1: spec.b_l1(),
            gamma: env.gamma(),
            n_agents,
            n_states: env.n_states(),
            n_actions: env.n_actions(),
        })
    }

    /// `S_P = (1 + L_Q) + L_P (2 + L_Q)`
    pub fn s_p(&self) -> f64 {
        (1.0 + self.l_q) + self.l_p * (2.0 + self.l_q)
    }

    /// `S_R = M_R (1 + L_Q) + L_R (2 + L_Q)`
    pub fn s_r(&self) -> f64 {
        self.m_r * (1.0 + self.l_q) + self.l_r * (2.0 + self.l_q)
    }

    /// `C_P = 2 + L_P`
    pub fn c_p(&self) -> f64 {
        2.0 + self.l_p
    }

    /// `C_R = |b|_1 + M_F`
    pub fn c_r(&self) -> f64 {
        self.b_l1 + self.m_f
    }

    fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        let reals = [self.l_p, self.l_q, self.l_r, self.m_r, self.m_f, self.b_l1];
        if reals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("bound constants must be finite and >= 0: {self:?}")));
        }
        if self.n_agents == 0 || self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::invalid("bound needs positive N, |X| and |U|"));
        }
        Ok(())
    }
}

/// Upper bound on `|v_MARL - v_MF|`, valid when `gamma * S_P < 1`:
///
/// `C_R sqrt(|U|/N) / (1 - gamma)
///   + (sqrt|X| + sqrt|U|)/sqrt(N) * S_R C_P / (S_P - 1) * (1/(1 - gamma S_P) - 1/(1 - gamma))`.
///
/// The second factor is evaluated as `gamma / ((1 - gamma S_P)(1 - gamma))`,
/// which is the same quantity without the removable singularity at `S_P = 1`.
pub fn theorem1_bound(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let gamma = inp.gamma;
    let s_p = inp.s_p();
    let gamma_sp = gamma * s_p;
    if gamma_sp >= 1.0 {
        return Err(Error::BoundInapplicable { gamma_sp });
    }
    let sqrt_n = (inp.n_agents as f64).sqrt();
    let sqrt_x = (inp.n_states as f64).sqrt();
    let sqrt_u = (inp.n_actions as f64).sqrt();
    let reward_term = inp.c_r() * sqrt_u / sqrt_n / (1.0 - gamma);
    let growth = gamma / ((1.0 - gamma_sp) * (1.0 - gamma));
    let state_term = (sqrt_x + sqrt_u) / sqrt_n * inp.s_r() * inp.c_p() * growth;
    Ok(reward_term + state_term)
}
