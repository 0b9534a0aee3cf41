use crate::error::{Error, Result};
use crate::rng::RandomStream;

const MOMENT_TOL: f64 = 1e-12;

/// Finite offspring distribution `p_k`, `k = 1..=K_max`, with mean two.
#[derive(Clone, Debug, PartialEq)]
pub struct OffspringLaw {
    /// `probs[k - 1] = p_k`.
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    factorial_moment: f64,
}

impl OffspringLaw {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::build(probs, true)
    }

    /// Binary splitting, `p_2 = 1`.
    pub fn binary() -> Self {
        Self::build(vec![0.0, 1.0], true).expect("binary law is valid")
    }

    /// Skips the mean-two check. Only the sum-to-one check applies; used for
    /// degenerate laws in tests of formulas that take `K` as a prefactor.
    pub fn unchecked_mean(probs: Vec<f64>) -> Result<Self> {
        Self::build(probs, false)
    }

    fn build(probs: Vec<f64>, check_mean: bool) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("offspring law needs at least one probability"));
        }
        if probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::param("offspring probabilities must be finite and >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MOMENT_TOL {
            return Err(Error::param(format!("offspring probabilities sum to {total}, not 1")));
        }
        let mean: f64 = probs.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
        if check_mean && (mean - 2.0).abs() > MOMENT_TOL {
            return Err(Error::param(format!("offspring mean is {mean}, must be 2")));
        }
        let factorial_moment = probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let k = (i + 1) as f64;
                k * (k - 1.0) * p
            })
            .sum();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            probs,
            cumulative,
            factorial_moment,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_offspring(&self) -> usize {
        self.probs.len()
    }

    /// `K = sum_k k (k - 1) p_k`.
    pub fn factorial_moment(&self) -> f64 {
        self.factorial_moment
    }

    pub fn is_binary(&self) -> bool {
        self.probs.len() == 2 && self.probs[1] == 1.0
    }

    /// `sum_k p_k u^k` in Horner form.
    pub fn generating(&self, u: f64) -> f64 {
        self.probs.iter().rev().fold(0.0, |acc, p| (acc + p) * u)
    }

    /// Number of children at a branching event.
    #[inline]
    pub fn sample(&self, stream: &mut RandomStream) -> usize {
        if self.probs.len() == 2 && self.probs[1] == 1.0 {
            return 2;
        }
        let u = stream.uniform();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .map_or(self.probs.len(), |i| i + 1)
    }
}

impl Default for OffspringLaw {
    fn default() -> Self {
        Self::binary()
    }
}
