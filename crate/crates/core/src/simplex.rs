//! Probability vectors over finite index sets.

use rand::Rng;

use crate::error::{check_len, Error, Result};

/// Absolute tolerance on the total mass of a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    weights: Vec<f64>,
}

impl Simplex {
    /// Validates `weights` and renormalizes away rounding drift of at most
    /// [`SIMPLEX_TOL`]. Larger drift is an error.
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("simplex must have at least one entry"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("simplex entry {w} is negative or non-finite")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("simplex mass {total} differs from 1")));
        }
        if total != 1.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Self { weights })
    }

    /// Skips validation. Only for vectors normalized by construction.
    pub(crate) fn from_normalized(weights: Vec<f64>) -> Self {
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
        Self { weights }
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("uniform simplex over an empty set"));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn point_mass(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::invalid(format!("point mass index {k} out of range 0..{n}")));
        }
        let mut weights = vec![0.0; n];
        weights[k] = 1.0;
        Ok(Self { weights })
    }

    /// Uniform draw from the simplex (flat Dirichlet).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        assert!(n > 0, "random simplex over an empty set");
        let mut w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        Self { weights: w }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub fn get(&self, k: usize) -> f64 {
        self.weights[k]
    }

    /// Draws index `k` with probability `p_k` by inverting the CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_positive = k;
                if u < acc {
                    return k;
                }
            }
        }
        last_positive
    }

    pub fn expectation(&self, values: &[f64]) -> Result<f64> {
        check_len("expectation", self.len(), values.len())?;
        Ok(dot(&self.weights, values))
    }

    pub fn l1_distance(&self, other: &Simplex) -> Result<f64> {
        check_len("l1_distance", self.len(), other.len())?;
        Ok(l1(&self.weights, &other.weights))
    }

    /// `(1 - t) * self + t * other`, for `t` in `[0, 1]`.
    pub fn mix(&self, other: &Simplex, t: f64) -> Result<Simplex> {
        check_len("mix", self.len(), other.len())?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("mixing weight {t} outside [0, 1]")));
        }
        Simplex::new(
            self.weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        )
    }
}

/// Empirical distribution of `samples` over `0..set_size`.
pub fn empirical_distribution(samples: &[usize], set_size: usize) -> Result<Simplex> {
    if samples.is_empty() {
        return Err(Error::invalid("empirical distribution of an empty sample"));
    }
    if set_size == 0 {
        return Err(Error::invalid("empirical distribution over an empty set"));
    }
    let mut counts = vec![0usize; set_size];
    for &s in samples {
        if s >= set_size {
            return Err(Error::invalid(format!("sample {s} out of range 0..{set_size}")));
        }
        counts[s] += 1;
    }
    let n = samples.len() as f64;
    Ok(Simplex::from_normalized(
        counts.into_iter().map(|c| c as f64 / n).collect(),
    ))
}

pub fn l1_distance(p: &Simplex, q: &Simplex) -> Result<f64> {
    p.l1_distance(q)
}

pub fn expectation(p: &Simplex, values: &[f64]) -> Result<f64> {
    p.expectation(values)
}

pub fn sample<R: Rng + ?Sized>(p: &Simplex, rng: &mut R) -> usize {
    p.sample(rng)
}

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
