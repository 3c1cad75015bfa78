//! Environment definitions.
//!
//! An [`EnvModel`] is a finite state/action model whose reward and transition
//! depend on the agent's own `(x, u)` and on state/action distributions
//! `(mu, nu)` describing the population as that agent sees it. Mean-field
//! code passes the population distributions; N-agent code passes each
//! agent's weighted view.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::seeded;
use crate::simplex::{dot, l1, Simplex};

/// Samples used for empirical Lipschitz and reward-bound estimates.
pub const ESTIMATION_SAMPLES: usize = 100_000;
/// Multiplier applied to empirical maxima before they are declared.
pub const SAFETY_FACTOR: f64 = 1.1;
const ESTIMATION_SEED: u64 = 0x5eed_1a9c;

pub trait EnvModel: Send + Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Discount factor in `[0, 1)`.
    fn gamma(&self) -> f64;
    fn reward(&self, x: usize, u: usize, mu: &Simplex, nu: &Simplex) -> f64;
    fn transition(&self, x: usize, u: usize, mu: &Simplex, nu: &Simplex) -> Simplex;
    /// Declared Lipschitz constant of the transition in `(mu, nu)`.
    fn lipschitz_p(&self) -> f64;
    /// Bound on `|r|`, used for truncation horizons.
    fn reward_bound(&self) -> f64;
    /// Present iff the reward is affine in the distributions.
    fn affine_spec(&self) -> Option<&AffineRewardSpec> {
        None
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount {gamma} outside [0, 1)")));
    }
    Ok(())
}

/// Reward of the form `a . mu + b . nu + f[x][u]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRewardSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub f: Vec<Vec<f64>>,
}

/// Bound and Lipschitz constants implied by an affine reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConstants {
    /// `|r| <= m_r`
    pub m_r: f64,
    /// `|r1 - r2| <= l_r * (|mu1 - mu2|_1 + |nu1 - nu2|_1)`
    pub l_r: f64,
    /// `|f| <= m_f`
    pub m_f: f64,
}

impl AffineRewardSpec {
    pub fn new(a: Vec<f64>, b: Vec<f64>, f: Vec<Vec<f64>>) -> Result<Self> {
        check_len("affine reward f rows", a.len(), f.len())?;
        for row in &f {
            check_len("affine reward f columns", b.len(), row.len())?;
        }
        if a.iter().chain(&b).chain(f.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine reward entries must be finite"));
        }
        Ok(Self { a, b, f })
    }

    pub fn n_states(&self) -> usize {
        self.a.len()
    }

    pub fn n_actions(&self) -> usize {
        self.b.len()
    }

    pub fn eval(&self, x: usize, u: usize, mu: &Simplex, nu: &Simplex) -> Result<f64> {
        check_len("affine reward mu", self.a.len(), mu.len())?;
        check_len("affine reward nu", self.b.len(), nu.len())?;
        if x >= self.n_states() || u >= self.n_actions() {
            return Err(Error::invalid(format!("(x, u) = ({x}, {u}) out of range")));
        }
        Ok(self.eval_unchecked(x, u, mu, nu))
    }

    pub(crate) fn eval_unchecked(&self, x: usize, u: usize, mu: &Simplex, nu: &Simplex) -> f64 {
        dot(&self.a, mu.as_slice()) + dot(&self.b, nu.as_slice()) + self.f[x][u]
    }

    pub fn b_l1(&self) -> f64 {
        self.b.iter().map(|v| v.abs()).sum()
    }

    pub fn constants(&self) -> RewardConstants {
        reward_constants(self)
    }
}

pub fn affine_reward_eval(
    spec: &AffineRewardSpec,
    x: usize,
    u: usize,
    mu: &Simplex,
    nu: &Simplex,
) -> Result<f64> {
    spec.eval(x, u, mu, nu)
}

pub fn reward_constants(spec: &AffineRewardSpec) -> RewardConstants {
    let a1: f64 = spec.a.iter().map(|v| v.abs()).sum();
    let b1 = spec.b_l1();
    let m_f = spec.f.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    RewardConstants {
        m_r: a1 + b1 + m_f,
        l_r: a1.max(b1),
        m_f,
    }
}

/// Firm network: quality levels `1..=q`, actions `{0 = hold, 1 = invest}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirmModelConfig {
    pub q: usize,
    pub k: usize,
    pub alpha_r: f64,
    pub beta_r: f64,
    pub lambda_r: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

impl Default for FirmModelConfig {
    fn default() -> Self {
        Self {
            q: 10,
            k: 5,
            alpha_r: 1.0,
            beta_r: 0.5,
            lambda_r: 0.5,
            sigma: 1.0,
        }
    }
}

impl FirmModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q < 1 || self.k < 1 {
            return Err(Error::invalid(format!("need q >= 1 and k >= 1, got q={}, k={}", self.q, self.k)));
        }
        if !(self.sigma >= 1.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be >= 1, got {}", self.sigma)));
        }
        if ![self.alpha_r, self.beta_r, self.lambda_r].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("reward coefficients must be finite"));
        }
        Ok(())
    }

    pub fn is_affine(&self) -> bool {
        self.sigma == 1.0
    }

    /// `a = -beta * [1..q]`, `b = 0`, `f[x][u] = alpha * x - lambda * u`
    /// (with `x` the 1-based quality label).
    pub fn affine_spec(&self) -> AffineRewardSpec {
        let a = (1..=self.q).map(|l| -self.beta_r * l as f64).collect();
        let f = (1..=self.q)
            .map(|l| {
                (0..2)
                    .map(|u| self.alpha_r * l as f64 - self.lambda_r * u as f64)
                    .collect()
            })
            .collect();
        AffineRewardSpec {
            a,
            b: vec![0.0; 2],
            f,
        }
    }

    fn check_label(&self, x: usize, u: usize) -> Result<()> {
        if x < 1 || x > self.q {
            return Err(Error::invalid(format!("quality {x} outside 1..={}", self.q)));
        }
        if u > 1 {
            return Err(Error::invalid(format!("firm action {u} is not 0 or 1")));
        }
        Ok(())
    }

    fn mean_quality(&self, mu: &Simplex) -> Result<f64> {
        check_len("firm mean-quality view", self.q, mu.len())?;
        Ok(mean_label(mu))
    }
}

fn mean_label(mu: &Simplex) -> f64 {
    mu.as_slice()
        .iter()
        .enumerate()
        .map(|(k, p)| (k + 1) as f64 * p)
        .sum()
}

/// Next-quality law for a firm at quality `x` (1-based).
///
/// Investing raises quality by `floor(chi * c)` with `chi ~ U[0, 1]` and
/// `c = (1 - mu_bar/q) * (q - x)`. The increment law is computed exactly from
/// interval lengths: `P(m) = min((m + 1)/c, 1) - m/c` for `0 <= m <= floor(c)`.
pub fn firm_transition_distribution(
    cfg: &FirmModelConfig,
    x: usize,
    u: usize,
    mu_bar: f64,
) -> Result<Simplex> {
    cfg.check_label(x, u)?;
    let q = cfg.q as f64;
    if !(mu_bar >= -1e-9 && mu_bar <= q + 1e-9) {
        return Err(Error::invalid(format!("mean quality {mu_bar} outside [0, {q}]")));
    }
    Ok(firm_transition_unchecked(cfg.q, x, u, mu_bar.clamp(0.0, q)))
}

fn firm_transition_unchecked(q: usize, x: usize, u: usize, mu_bar: f64) -> Simplex {
    let mut p = vec![0.0; q];
    let c = (1.0 - mu_bar / q as f64) * (q - x) as f64;
    if u == 0 || c <= 0.0 {
        p[x - 1] = 1.0;
        return Simplex::from_normalized(p);
    }
    let top = c.floor() as usize;
    for m in 0..=top {
        let pm = ((m + 1) as f64 / c).min(1.0) - m as f64 / c;
        p[x - 1 + m] = pm.max(0.0);
    }
    Simplex::new(p).expect("interval lengths sum to one")
}

/// `alpha * x - beta * mu_bar^sigma - lambda * u`, where `mu_bar` is the mean
/// quality of `mu_view`.
pub fn firm_reward(cfg: &FirmModelConfig, x: usize, u: usize, mu_view: &Simplex) -> Result<f64> {
    cfg.check_label(x, u)?;
    let mu_bar = cfg.mean_quality(mu_view)?;
    Ok(firm_reward_unchecked(cfg, x, u, mu_bar))
}

fn firm_reward_unchecked(cfg: &FirmModelConfig, x: usize, u: usize, mu_bar: f64) -> f64 {
    let pressure = if cfg.sigma == 1.0 {
        mu_bar
    } else {
        mu_bar.powf(cfg.sigma)
    };
    cfg.alpha_r * x as f64 - cfg.beta_r * pressure - cfg.lambda_r * u as f64
}

/// The firm network as an [`EnvModel`]. State index `s` is quality `s + 1`.
#[derive(Debug, Clone)]
pub struct FirmEnv {
    cfg: FirmModelConfig,
    gamma: f64,
    lipschitz_p: f64,
    reward_bound: f64,
    affine: Option<AffineRewardSpec>,
}

pub fn build_firm_env(cfg: &FirmModelConfig, gamma: f64) -> Result<FirmEnv> {
    cfg.validate()?;
    check_gamma(gamma)?;
    let q = cfg.q;
    let affine = cfg.is_affine().then(|| cfg.affine_spec());
    let reward_bound = match &affine {
        Some(spec) => spec.constants().m_r,
        None => {
            let c = cfg.clone();
            estimate_reward_bound(
                &|x, u, mu: &Simplex, _nu: &Simplex| {
                    firm_reward_unchecked(&c, x + 1, u, mean_label(mu))
                },
                q,
                2,
                ESTIMATION_SAMPLES,
                ESTIMATION_SEED,
            ) * SAFETY_FACTOR
        }
    };
    let lipschitz_p = estimate_transition_lipschitz(
        &|x, u, mu: &Simplex, _nu: &Simplex| firm_transition_unchecked(q, x + 1, u, mean_label(mu)),
        q,
        2,
        ESTIMATION_SAMPLES,
        ESTIMATION_SEED,
    ) * SAFETY_FACTOR;
    Ok(FirmEnv {
        cfg: cfg.clone(),
        gamma,
        lipschitz_p,
        reward_bound,
        affine,
    })
}

impl FirmEnv {
    pub fn config(&self) -> &FirmModelConfig {
        &self.cfg
    }

    /// Quality labels `1..=q`, indexed by state.
    pub fn quality_levels(&self) -> Vec<f64> {
        (1..=self.cfg.q).map(|l| l as f64).collect()
    }
}

impl EnvModel for FirmEnv {
    fn n_states(&self) -> usize {
        self.cfg.q
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reward(&self, x: usize, u: usize, mu: &Simplex, _nu: &Simplex) -> f64 {
        firm_reward_unchecked(&self.cfg, x + 1, u, mean_label(mu))
    }

    fn transition(&self, x: usize, u: usize, mu: &Simplex, _nu: &Simplex) -> Simplex {
        firm_transition_unchecked(self.cfg.q, x + 1, u, mean_label(mu))
    }

    fn lipschitz_p(&self) -> f64 {
        self.lipschitz_p
    }

    fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    fn affine_spec(&self) -> Option<&AffineRewardSpec> {
        self.affine.as_ref()
    }
}

type RewardFn = dyn Fn(usize, usize, &Simplex, &Simplex) -> f64 + Send + Sync;
type TransitionFn = dyn Fn(usize, usize, &Simplex, &Simplex) -> Simplex + Send + Sync;

/// An [`EnvModel`] assembled from closures, for synthetic models.
pub struct ClosureEnv {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    lipschitz_p: f64,
    reward_bound: f64,
    affine: Option<AffineRewardSpec>,
    reward: Box<RewardFn>,
    transition: Box<TransitionFn>,
}

impl std::fmt::Debug for ClosureEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosureEnv")
            .field("n_states", &self.n_states)
            .field("n_actions", &self.n_actions)
            .field("gamma", &self.gamma)
            .field("lipschitz_p", &self.lipschitz_p)
            .field("reward_bound", &self.reward_bound)
            .finish_non_exhaustive()
    }
}

impl ClosureEnv {
    /// Generic model. `L_P` and the reward bound are estimated empirically
    /// (and inflated by [`SAFETY_FACTOR`]) unless overridden.
    pub fn new<R, T>(n_states: usize, n_actions: usize, gamma: f64, reward: R, transition: T) -> Result<Self>
    where
        R: Fn(usize, usize, &Simplex, &Simplex) -> f64 + Send + Sync + 'static,
        T: Fn(usize, usize, &Simplex, &Simplex) -> Simplex + Send + Sync + 'static,
    {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("state and action spaces must be nonempty"));
        }
        check_gamma(gamma)?;
        let reward_bound =
            estimate_reward_bound(&reward, n_states, n_actions, ESTIMATION_SAMPLES / 10, ESTIMATION_SEED)
                * SAFETY_FACTOR;
        let lipschitz_p = estimate_transition_lipschitz(
            &transition,
            n_states,
            n_actions,
            ESTIMATION_SAMPLES / 10,
            ESTIMATION_SEED,
        ) * SAFETY_FACTOR;
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            lipschitz_p,
            reward_bound,
            affine: None,
            reward: Box::new(reward),
            transition: Box::new(transition),
        })
    }

    /// Model with an affine reward; the bound is the exact `M_R`.
    pub fn affine<T>(spec: AffineRewardSpec, gamma: f64, transition: T) -> Result<Self>
    where
        T: Fn(usize, usize, &Simplex, &Simplex) -> Simplex + Send + Sync + 'static,
    {
        let spec = AffineRewardSpec::new(spec.a, spec.b, spec.f)?;
        let reward_spec = spec.clone();
        let mut env = Self::new(
            spec.n_states(),
            spec.n_actions(),
            gamma,
            move |x, u, mu, nu| reward_spec.eval_unchecked(x, u, mu, nu),
            transition,
        )?;
        env.reward_bound = spec.constants().m_r;
        env.affine = Some(spec);
        Ok(env)
    }

    pub fn with_lipschitz_p(mut self, l_p: f64) -> Self {
        self.lipschitz_p = l_p;
        self
    }

    pub fn with_reward_bound(mut self, m_r: f64) -> Self {
        self.reward_bound = m_r;
        self
    }
}

impl EnvModel for ClosureEnv {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reward(&self, x: usize, u: usize, mu: &Simplex, nu: &Simplex) -> f64 {
        (self.reward)(x, u, mu, nu)
    }

    fn transition(&self, x: usize, u: usize, mu: &Simplex, nu: &Simplex) -> Simplex {
        (self.transition)(x, u, mu, nu)
    }

    fn lipschitz_p(&self) -> f64 {
        self.lipschitz_p
    }

    fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    fn affine_spec(&self) -> Option<&AffineRewardSpec> {
        self.affine.as_ref()
    }
}

/// Random pair of nearby or unrelated distributions, cycling through three
/// shapes: independent draws, a two-coordinate mass transfer, and a partial
/// mix toward a fresh draw. The transfer shape probes the steepest directions.
pub(crate) fn random_pair<R: Rng + ?Sized>(n: usize, shape: usize, rng: &mut R) -> (Simplex, Simplex) {
    let p = Simplex::random(n, rng);
    let q = match shape % 3 {
        0 => Simplex::random(n, rng),
        1 if n > 1 => {
            let from = rng.gen_range(0..n);
            let mut to = rng.gen_range(0..n - 1);
            if to >= from {
                to += 1;
            }
            let scale = 10f64.powf(-4.0 * rng.gen::<f64>());
            let mut w = p.as_slice().to_vec();
            let moved = w[from] * scale;
            w[from] -= moved;
            w[to] += moved;
            Simplex::new(w).expect("mass transfer preserves total")
        }
        _ => {
            let t = 10f64.powf(-4.0 * rng.gen::<f64>());
            p.mix(&Simplex::random(n, rng), t).expect("same length")
        }
    };
    (p, q)
}

/// Largest observed `|P1 - P2|_1 / (|mu1 - mu2|_1 + |nu1 - nu2|_1)`.
///
/// Odd-numbered samples keep `nu` fixed, so dependence on `mu` alone is
/// probed at full strength.
pub fn estimate_transition_lipschitz<T>(
    transition: &T,
    n_states: usize,
    n_actions: usize,
    samples: usize,
    seed: u64,
) -> f64
where
    T: Fn(usize, usize, &Simplex, &Simplex) -> Simplex + ?Sized,
{
    let mut rng = seeded(seed);
    let mut best = 0.0_f64;
    for s in 0..samples {
        let x = rng.gen_range(0..n_states);
        let u = rng.gen_range(0..n_actions);
        let (mu1, mu2) = random_pair(n_states, s / 2, &mut rng);
        let (nu1, nu2) = if s % 2 == 1 {
            let nu = Simplex::random(n_actions, &mut rng);
            (nu.clone(), nu)
        } else {
            random_pair(n_actions, s / 2, &mut rng)
        };
        let denom = l1(mu1.as_slice(), mu2.as_slice()) + l1(nu1.as_slice(), nu2.as_slice());
        if denom < 1e-12 {
            continue;
        }
        let p1 = transition(x, u, &mu1, &nu1);
        let p2 = transition(x, u, &mu2, &nu2);
        best = best.max(l1(p1.as_slice(), p2.as_slice()) / denom);
    }
    best
}

/// Largest observed `|r|` over every `(x, u)` at every pair of point masses,
/// plus `samples` random `(x, u, mu, nu)` draws.
pub fn estimate_reward_bound<R>(
    reward: &R,
    n_states: usize,
    n_actions: usize,
    samples: usize,
    seed: u64,
) -> f64
where
    R: Fn(usize, usize, &Simplex, &Simplex) -> f64 + ?Sized,
{
    let mut best = 0.0_f64;
    let vertices_x: Vec<Simplex> = (0..n_states)
        .map(|k| Simplex::point_mass(n_states, k).expect("in range"))
        .collect();
    let vertices_u: Vec<Simplex> = (0..n_actions)
        .map(|k| Simplex::point_mass(n_actions, k).expect("in range"))
        .collect();
    for x in 0..n_states {
        for u in 0..n_actions {
            for mu in &vertices_x {
                for nu in &vertices_u {
                    best = best.max(reward(x, u, mu, nu).abs());
                }
            }
        }
    }
    let mut rng = seeded(seed);
    for _ in 0..samples {
        let x = rng.gen_range(0..n_states);
        let u = rng.gen_range(0..n_actions);
        let mu = Simplex::random(n_states, &mut rng);
        let nu = Simplex::random(n_actions, &mut rng);
        best = best.max(reward(x, u, &mu, &nu).abs());
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn firm_cfg() -> FirmModelConfig {
        FirmModelConfig::default()
    }

    #[test]
    fn affine_eval_examples() {
        let spec = AffineRewardSpec::new(vec![0.0; 3], vec![0.0; 2], vec![vec![1.0, 2.0]; 3]).unwrap();
        let mut rng = seeded(1);
        for _ in 0..10 {
            let mu = Simplex::random(3, &mut rng);
            let nu = Simplex::random(2, &mut rng);
            assert_eq!(spec.eval(1, 1, &mu, &nu).unwrap(), 2.0);
        }

        let firm = firm_cfg().affine_spec();
        let mu = Simplex::point_mass(10, 1).unwrap();
        let nu = Simplex::uniform(2).unwrap();
        let r = affine_reward_eval(&firm, 3, 1, &mu, &nu).unwrap();
        assert!((r - 2.5).abs() < 1e-12);

        let mu2 = Simplex::random(10, &mut rng);
        let r2 = firm.eval(3, 1, &mu2, &nu).unwrap();
        let shift: f64 = firm
            .a
            .iter()
            .zip(mu2.as_slice().iter().zip(mu.as_slice()))
            .map(|(a, (p, q))| a * (p - q))
            .sum();
        assert!((r2 - r - shift).abs() < 1e-12);

        assert!(firm.eval(0, 0, &Simplex::uniform(3).unwrap(), &nu).is_err());
        assert!(AffineRewardSpec::new(vec![0.0; 2], vec![0.0; 2], vec![vec![0.0; 2]]).is_err());
        assert!(AffineRewardSpec::new(vec![f64::NAN], vec![0.0], vec![vec![0.0]]).is_err());
    }

    #[test]
    fn reward_constant_examples() {
        let zero = AffineRewardSpec::new(vec![0.0; 2], vec![0.0; 2], vec![vec![0.0; 2]; 2]).unwrap();
        assert_eq!(
            reward_constants(&zero),
            RewardConstants {
                m_r: 0.0,
                l_r: 0.0,
                m_f: 0.0
            }
        );

        let c = reward_constants(&firm_cfg().affine_spec());
        assert!((c.m_r - 37.5).abs() < 1e-12);
        assert!((c.l_r - 27.5).abs() < 1e-12);
        assert!((c.m_f - 10.0).abs() < 1e-12);

        let mut scaled = firm_cfg().affine_spec();
        scaled.a.iter_mut().for_each(|v| *v *= -3.0);
        assert!((reward_constants(&scaled).l_r - 3.0 * 27.5).abs() < 1e-9);
    }

    #[test]
    fn transition_examples() {
        let cfg = firm_cfg();
        for x in 1..=10 {
            let p = firm_transition_distribution(&cfg, x, 0, 4.0).unwrap();
            assert_eq!(p, Simplex::point_mass(10, x - 1).unwrap());
        }
        let top = firm_transition_distribution(&cfg, 10, 1, 3.0).unwrap();
        assert_eq!(top, Simplex::point_mass(10, 9).unwrap());

        let p = firm_transition_distribution(&cfg, 1, 1, 5.0).unwrap();
        for m in 0..4 {
            assert!((p.get(m) - 1.0 / 4.5).abs() < 1e-12);
        }
        assert!((p.get(4) - 1.0 / 9.0).abs() < 1e-12);
        assert!(p.as_slice()[5..].iter().all(|v| *v == 0.0));

        assert!(firm_transition_distribution(&cfg, 0, 1, 5.0).is_err());
        assert!(firm_transition_distribution(&cfg, 11, 1, 5.0).is_err());
        assert!(firm_transition_distribution(&cfg, 3, 2, 5.0).is_err());
        assert!(firm_transition_distribution(&cfg, 3, 1, 10.5).is_err());
        assert!(firm_transition_distribution(&cfg, 3, 1, -0.5).is_err());
    }

    #[test]
    fn transition_matches_monte_carlo_of_floor_law() {
        let cfg = firm_cfg();
        let mut rng = seeded(99);
        for &(x, mu_bar) in &[(1usize, 5.0f64), (3, 2.2), (7, 1.0), (2, 9.7)] {
            let exact = firm_transition_distribution(&cfg, x, 1, mu_bar).unwrap();
            assert!((exact.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let c = (1.0 - mu_bar / 10.0) * (10 - x) as f64;
            let mut counts = vec![0.0; 10];
            let draws = 1_000_000;
            for _ in 0..draws {
                let chi: f64 = rng.gen();
                counts[x - 1 + (chi * c).floor() as usize] += 1.0 / draws as f64;
            }
            let d = l1(exact.as_slice(), &counts);
            assert!(d < 0.01, "x={x} mu_bar={mu_bar}: L1 {d}");
        }
    }

    #[test]
    fn firm_reward_examples() {
        let cfg = firm_cfg();
        let spec = cfg.affine_spec();
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let x = rng.gen_range(1..=10);
            let u = rng.gen_range(0..2);
            let mu = Simplex::random(10, &mut rng);
            let nu = Simplex::random(2, &mut rng);
            let a = firm_reward(&cfg, x, u, &mu).unwrap();
            let b = spec.eval(x - 1, u, &mu, &nu).unwrap();
            assert!((a - b).abs() < 1e-12);
            let hold = firm_reward(&cfg, x, 0, &mu).unwrap();
            let invest = firm_reward(&cfg, x, 1, &mu).unwrap();
            assert!((invest - hold + 0.5).abs() < 1e-12);
        }

        let nonlinear = FirmModelConfig {
            sigma: 1.2,
            ..firm_cfg()
        };
        // point mass at quality 2 gives mu_bar = 2
        let mu = Simplex::point_mass(10, 1).unwrap();
        let r = firm_reward(&nonlinear, 3, 0, &mu).unwrap();
        assert!((r - (3.0 - 0.5 * 2f64.powf(1.2))).abs() < 1e-12);
        assert!((r - 1.8513).abs() < 1e-4);
    }

    #[test]
    fn firm_env_builds_and_conserves_probability() {
        let env = build_firm_env(&firm_cfg(), 0.9).unwrap();
        assert_eq!(env.n_states(), 10);
        assert!(env.affine_spec().is_some());
        let mut rng = seeded(5);
        for x in 0..10 {
            for u in 0..2 {
                for _ in 0..50 {
                    let mu = Simplex::random(10, &mut rng);
                    let nu = Simplex::random(2, &mut rng);
                    let p = env.transition(x, u, &mu, &nu);
                    assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(p.as_slice().iter().all(|v| *v >= 0.0));
                }
            }
        }
        assert!(build_firm_env(&firm_cfg(), 1.0).is_err());
        assert!(build_firm_env(&FirmModelConfig { sigma: 0.5, ..firm_cfg() }, 0.9).is_err());
    }

    #[test]
    fn corollary_bounds_hold_for_firm_reward() {
        let env = build_firm_env(&firm_cfg(), 0.9).unwrap();
        let c = env.affine_spec().unwrap().constants();
        assert!((env.reward_bound() - c.m_r).abs() < 1e-12);
        let mut rng = seeded(6);
        for x in 0..10 {
            for u in 0..2 {
                for _ in 0..1000 {
                    let mu = Simplex::random(10, &mut rng);
                    let nu = Simplex::random(2, &mut rng);
                    assert!(env.reward(x, u, &mu, &nu).abs() <= c.m_r);
                }
            }
        }
        for s in 0..10_000 {
            let x = rng.gen_range(0..10);
            let u = rng.gen_range(0..2);
            let (mu1, mu2) = random_pair(10, s, &mut rng);
            let (nu1, nu2) = random_pair(2, s + 1, &mut rng);
            let lhs = (env.reward(x, u, &mu1, &nu1) - env.reward(x, u, &mu2, &nu2)).abs();
            let rhs = c.l_r * (mu1.l1_distance(&mu2).unwrap() + nu1.l1_distance(&nu2).unwrap());
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn declared_transition_lipschitz_dominates_fresh_samples() {
        let env = build_firm_env(&firm_cfg(), 0.9).unwrap();
        let declared = env.lipschitz_p();
        assert!(declared > 0.0 && declared.is_finite());
        let mut rng = seeded(777);
        let mut observed = 0.0_f64;
        for s in 0..10_000 {
            let x = rng.gen_range(0..10);
            let u = rng.gen_range(0..2);
            let (mu1, mu2) = random_pair(10, s, &mut rng);
            let nu = Simplex::random(2, &mut rng);
            let d = mu1.l1_distance(&mu2).unwrap();
            if d < 1e-12 {
                continue;
            }
            let p1 = env.transition(x, u, &mu1, &nu);
            let p2 = env.transition(x, u, &mu2, &nu);
            observed = observed.max(p1.l1_distance(&p2).unwrap() / d);
        }
        assert!(observed <= declared, "observed {observed} > declared {declared}");
    }

    #[test]
    fn nonlinear_env_has_no_affine_spec_and_a_sane_bound() {
        let cfg = FirmModelConfig {
            sigma: 1.2,
            ..firm_cfg()
        };
        let env = build_firm_env(&cfg, 0.9).unwrap();
        assert!(env.affine_spec().is_none());
        // extremes: x = 10, u = 0, mu_bar = 1 and x = 1, u = 1, mu_bar = 10
        let true_max = (10.0 - 0.5f64).max((1.0 - 0.5 * 10f64.powf(1.2) - 0.5).abs());
        assert!(env.reward_bound() >= true_max);
        assert!(env.reward_bound() <= true_max * SAFETY_FACTOR + 1e-9);
    }

    #[test]
    fn closure_env_affine_uses_exact_bound() {
        let spec = AffineRewardSpec::new(vec![1.0, -1.0], vec![0.5, 0.0], vec![vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let env = ClosureEnv::affine(spec, 0.5, |x, _u, _mu, _nu| Simplex::point_mass(2, x).unwrap()).unwrap();
        assert!((env.reward_bound() - 4.5).abs() < 1e-12);
        assert_eq!(env.lipschitz_p(), 0.0);
        assert!(ClosureEnv::new(0, 2, 0.5, |_, _, _, _| 0.0, |_, _, _, _| Simplex::uniform(1).unwrap()).is_err());
    }
}
