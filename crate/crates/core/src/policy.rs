//! Stochastic policies `pi(x, mu)` over a finite action set.
//!
//! The trainable policy is a one-hidden-layer tanh network fed with
//! `[onehot(x), mu]` and followed by a softmax. Parameters live in one flat
//! vector laid out as hidden weights (row-major, `H x 2|X|`), hidden biases,
//! output weights (row-major, `|U| x H`), output biases.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::random_pair;
use crate::rng::seeded;
use crate::simplex::{l1, Simplex};

pub const DEFAULT_HIDDEN_WIDTH: usize = 32;
/// Half-width of the uniform weight initialization.
pub const INIT_SCALE: f64 = 0.1;

pub trait Policy: Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn action_distribution(&self, x: usize, mu: &Simplex) -> Simplex;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub hidden_width: usize,
}

impl PolicyConfig {
    pub fn new(n_states: usize, n_actions: usize, hidden_width: usize) -> Result<Self> {
        let cfg = Self {
            n_states,
            n_actions,
            hidden_width,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 || self.hidden_width == 0 {
            return Err(Error::invalid(format!("degenerate policy config {self:?}")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.n_states
    }

    /// Total parameter count `H*2|X| + H + |U|*H + |U|`.
    pub fn dim(&self) -> usize {
        let h = self.hidden_width;
        h * self.input_dim() + h + self.n_actions * h + self.n_actions
    }

    fn offsets(&self) -> Offsets {
        let h = self.hidden_width;
        let b1 = h * self.input_dim();
        let w2 = b1 + h;
        let b2 = w2 + self.n_actions * h;
        Offsets { b1, w2, b2 }
    }
}

struct Offsets {
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Flat parameter vector of a [`SoftmaxPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams(Vec<f64>);

impl PolicyParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("policy parameters must be finite"));
        }
        Ok(Self(values))
    }

    pub fn zeros(cfg: &PolicyConfig) -> Self {
        Self(vec![0.0; cfg.dim()])
    }

    /// Weights uniform on `[-scale, scale]`, biases zero.
    pub fn init<R: Rng + ?Sized>(cfg: &PolicyConfig, scale: f64, rng: &mut R) -> Self {
        let mut v = vec![0.0; cfg.dim()];
        let off = cfg.offsets();
        for w in (0..off.b1).chain(off.w2..off.b2) {
            v[w] = rng.gen_range(-scale..=scale);
        }
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self + step * direction`
    pub fn stepped(&self, direction: &[f64], step: f64) -> Result<Self> {
        check_len("parameter step", self.len(), direction.len())?;
        Ok(Self(
            self.0.iter().zip(direction).map(|(p, d)| p + step * d).collect(),
        ))
    }
}

/// One-hidden-layer softmax policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    cfg: PolicyConfig,
    params: PolicyParams,
}

struct Forward {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(cfg: PolicyConfig, params: PolicyParams) -> Result<Self> {
        cfg.validate()?;
        check_len("policy parameters", cfg.dim(), params.len())?;
        Ok(Self { cfg, params })
    }

    /// Default initialization from a seed.
    pub fn initialize(cfg: PolicyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = PolicyParams::init(&cfg, INIT_SCALE, &mut seeded(seed));
        Self::new(cfg, params)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn into_params(self) -> PolicyParams {
        self.params
    }

    pub fn with_params(&self, params: PolicyParams) -> Result<Self> {
        Self::new(self.cfg, params)
    }

    fn check_inputs(&self, x: usize, mu: &Simplex) -> Result<()> {
        if x >= self.cfg.n_states {
            return Err(Error::invalid(format!("state {x} out of range 0..{}", self.cfg.n_states)));
        }
        check_len("policy mean-field input", self.cfg.n_states, mu.len())
    }

    fn forward(&self, x: usize, mu: &Simplex) -> Forward {
        let PolicyConfig {
            n_states,
            n_actions,
            hidden_width,
        } = self.cfg;
        let input = self.cfg.input_dim();
        let p = self.params.as_slice();
        let off = self.cfg.offsets();
        let mu = mu.as_slice();

        let hidden: Vec<f64> = (0..hidden_width)
            .map(|h| {
                let row = &p[h * input..(h + 1) * input];
                let pre = p[off.b1 + h]
                    + row[x]
                    + row[n_states..].iter().zip(mu).map(|(w, m)| w * m).sum::<f64>();
                pre.tanh()
            })
            .collect();

        let mut logits: Vec<f64> = (0..n_actions)
            .map(|a| {
                let row = &p[off.w2 + a * hidden_width..off.w2 + (a + 1) * hidden_width];
                p[off.b2 + a] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        softmax_in_place(&mut logits);
        Forward {
            hidden,
            probs: logits,
        }
    }

    pub fn probabilities(&self, x: usize, mu: &Simplex) -> Result<Simplex> {
        self.check_inputs(x, mu)?;
        Ok(Policy::action_distribution(self, x, mu))
    }

    /// Gradient of `log pi(x, mu)(u)` with respect to every parameter.
    pub fn log_prob_gradient(&self, x: usize, mu: &Simplex, u: usize) -> Result<Vec<f64>> {
        self.check_inputs(x, mu)?;
        if u >= self.cfg.n_actions {
            return Err(Error::invalid(format!("action {u} out of range 0..{}", self.cfg.n_actions)));
        }
        Ok(self.log_prob_gradient_unchecked(x, mu, u))
    }

    pub(crate) fn log_prob_gradient_unchecked(&self, x: usize, mu: &Simplex, u: usize) -> Vec<f64> {
        let PolicyConfig {
            n_states,
            n_actions,
            hidden_width,
        } = self.cfg;
        let input = self.cfg.input_dim();
        let off = self.cfg.offsets();
        let p = self.params.as_slice();
        let fwd = self.forward(x, mu);
        let mut g = vec![0.0; self.cfg.dim()];

        // d log softmax(z)_u / d z_a = [a == u] - pi_a
        let delta: Vec<f64> = (0..n_actions)
            .map(|a| f64::from(u8::from(a == u)) - fwd.probs[a])
            .collect();
        for a in 0..n_actions {
            g[off.b2 + a] = delta[a];
            for h in 0..hidden_width {
                g[off.w2 + a * hidden_width + h] = delta[a] * fwd.hidden[h];
            }
        }
        let mu = mu.as_slice();
        for h in 0..hidden_width {
            let back: f64 = (0..n_actions)
                .map(|a| p[off.w2 + a * hidden_width + h] * delta[a])
                .sum();
            let pre = back * (1.0 - fwd.hidden[h] * fwd.hidden[h]);
            g[off.b1 + h] = pre;
            let row = &mut g[h * input..(h + 1) * input];
            row[x] = pre;
            for (k, m) in mu.iter().enumerate() {
                row[n_states + k] = pre * m;
            }
        }
        g
    }

    /// Checkpoint layout: one JSON header line, then one parameter per line.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            n_states: self.cfg.n_states,
            n_actions: self.cfg.n_actions,
            hidden_width: self.cfg.hidden_width,
            d: self.cfg.dim(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for v in self.params.as_slice() {
            out.extend_from_slice(v.to_string().as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_checkpoint_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::invalid("empty checkpoint"))?
            .map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader = serde_json::from_str(&header_line)?;
        let cfg = PolicyConfig::new(header.n_states, header.n_actions, header.hidden_width)?;
        check_len("checkpoint header d", cfg.dim(), header.d)?;
        let mut values = Vec::with_capacity(header.d);
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            values.push(
                t.parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad checkpoint value {t:?}: {e}")))?,
            );
        }
        Self::new(cfg, PolicyParams::new(values)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    n_states: usize,
    n_actions: usize,
    hidden_width: usize,
    d: usize,
}

impl Policy for SoftmaxPolicy {
    fn n_states(&self) -> usize {
        self.cfg.n_states
    }

    fn n_actions(&self) -> usize {
        self.cfg.n_actions
    }

    fn action_distribution(&self, x: usize, mu: &Simplex) -> Simplex {
        Simplex::from_normalized(self.forward(x, mu).probs)
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

pub fn action_distribution(cfg: &PolicyConfig, phi: &PolicyParams, x: usize, mu: &Simplex) -> Result<Simplex> {
    SoftmaxPolicy::new(*cfg, phi.clone())?.probabilities(x, mu)
}

pub fn log_policy_gradient(
    cfg: &PolicyConfig,
    phi: &PolicyParams,
    x: usize,
    mu: &Simplex,
    u: usize,
) -> Result<Vec<f64>> {
    SoftmaxPolicy::new(*cfg, phi.clone())?.log_prob_gradient(x, mu, u)
}

/// Running maximum of `|pi(x, mu1) - pi(x, mu2)|_1 / |mu1 - mu2|_1` over
/// random states and distribution pairs: an empirical lower bound on the
/// policy's Lipschitz constant in `mu`.
pub fn estimate_lipschitz_lq<P, R>(policy: &P, trials: usize, rng: &mut R) -> f64
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    let n = policy.n_states();
    let mut best = 0.0_f64;
    for t in 0..trials.max(1) {
        let x = rng.gen_range(0..n);
        let (mu1, mu2) = random_pair(n, t, rng);
        let d = l1(mu1.as_slice(), mu2.as_slice());
        if d < 1e-12 {
            continue;
        }
        let p1 = policy.action_distribution(x, &mu1);
        let p2 = policy.action_distribution(x, &mu2);
        best = best.max(l1(p1.as_slice(), p2.as_slice()) / d);
    }
    best
}

/// Policy given by a fixed action distribution per state; ignores `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    table: Vec<Simplex>,
}

impl TabularPolicy {
    pub fn new(table: Vec<Simplex>) -> Result<Self> {
        let n_actions = table
            .first()
            .map(Simplex::len)
            .ok_or_else(|| Error::invalid("tabular policy needs at least one state"))?;
        for row in &table {
            check_len("tabular policy row", n_actions, row.len())?;
        }
        Ok(Self {
            n_states: table.len(),
            table,
        })
    }

    /// Same distribution in every state.
    pub fn constant(n_states: usize, dist: Simplex) -> Result<Self> {
        Self::new(vec![dist; n_states])
    }

    /// Deterministic action per state.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        Self::new(
            actions
                .iter()
                .map(|&a| Simplex::point_mass(n_actions, a))
                .collect::<Result<_>>()?,
        )
    }
}

impl Policy for TabularPolicy {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.table[0].len()
    }

    fn action_distribution(&self, x: usize, _mu: &Simplex) -> Simplex {
        self.table[x].clone()
    }
}
