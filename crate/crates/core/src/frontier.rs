//! Front centering, recentred maximum, martingales and empirical laws of the maximum.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;

use crate::engine::{Population, PruneConfig};
use crate::error::{Error, Result};
use crate::offspring::OffspringLaw;
use crate::rng::RandomStream;
use crate::table::Table;

/// `3 / (2 sqrt 2)`.
pub const LOG_COEFFICIENT: f64 = 1.060_660_171_779_821_3;

/// `m(t) = sqrt2 t - 3/(2 sqrt2) ln t`.
pub fn front_centering(t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param(format!("front centering needs t > 0, got {t}")));
    }
    Ok(m(t))
}

#[inline]
pub(crate) fn m(t: f64) -> f64 {
    SQRT_2 * t - LOG_COEFFICIENT * t.ln()
}

/// `(y_k, z_k)` with `y_k = sqrt2 t - x_k` and `z_k = y_k exp(-sqrt2 y_k)`, in storage order.
pub fn relative_heights(pop: &Population) -> Result<Vec<(f64, f64)>> {
    if pop.is_empty() {
        return Err(Error::State("relative heights of an empty population".into()));
    }
    let lead = SQRT_2 * pop.time();
    Ok(pop
        .positions()
        .map(|x| {
            let y = lead - x;
            (y, y * (-SQRT_2 * y).exp())
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MartingaleSnapshot {
    pub t: f64,
    pub y: f64,
    pub z: f64,
    pub z2: f64,
    pub min_y: f64,
}

impl MartingaleSnapshot {
    /// Accumulates the sums over positions at time `t`.
    pub fn from_positions(t: f64, positions: impl IntoIterator<Item = f64>) -> Self {
        let lead = SQRT_2 * t;
        let mut snap = Self {
            t,
            y: 0.0,
            z: 0.0,
            z2: 0.0,
            min_y: f64::INFINITY,
        };
        for x in positions {
            let y = lead - x;
            let e = (-SQRT_2 * y).exp();
            snap.y += e;
            snap.z += y * e;
            snap.z2 += y * y * e * e;
            snap.min_y = snap.min_y.min(y);
        }
        snap
    }
}

pub fn martingale_snapshot(pop: &Population) -> Result<MartingaleSnapshot> {
    if pop.is_empty() {
        return Err(Error::State("martingales of an empty population".into()));
    }
    Ok(MartingaleSnapshot::from_positions(pop.time(), pop.positions()))
}

/// `M(t) = max_k x_k(t) - m(t)`.
pub fn max_displacement(pop: &Population) -> Result<f64> {
    let t = pop.time();
    if t <= 0.0 {
        return Err(Error::param("M(t) is undefined at t = 0"));
    }
    let max = pop
        .max_position()
        .ok_or_else(|| Error::State("maximum of an empty population".into()))?;
    Ok(max - m(t))
}

/// A distribution function tabulated on an increasing grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    x_grid: Vec<f64>,
    values: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(x_grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_grid(&x_grid)?;
        if values.len() != x_grid.len() {
            return Err(Error::param("CDF values and grid differ in length"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Numerical("CDF value outside [0, 1]".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Numerical("CDF values decrease along the grid".into()));
        }
        Ok(Self { x_grid, values })
    }

    /// Fraction of `samples` at or below each grid point.
    pub fn from_samples(samples: &[f64], x_grid: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::param("empirical CDF of no samples"));
        }
        if samples.iter().any(|s| s.is_nan()) {
            return Err(Error::Numerical("NaN sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let values = x_grid
            .iter()
            .map(|&x| sorted.partition_point(|&s| s <= x) as f64 / n)
            .collect();
        Self::new(x_grid, values)
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `sup_x |F(x) - g(x)|` over the grid.
    pub fn sup_distance_to<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        self.x_grid
            .iter()
            .zip(&self.values)
            .map(|(&x, &f)| (f - g(x)).abs())
            .fold(0.0, f64::max)
    }

    /// Sup distance to another CDF on the same grid.
    pub fn sup_distance(&self, other: &EmpiricalCdf) -> Result<f64> {
        if self.x_grid != other.x_grid {
            return Err(Error::param("CDFs are tabulated on different grids"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn check_grid(x_grid: &[f64]) -> Result<()> {
    if x_grid.is_empty() {
        return Err(Error::param("empty x grid"));
    }
    if x_grid.iter().any(|x| !x.is_finite()) || x_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("x grid must be finite and strictly increasing"));
    }
    Ok(())
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Time-averaged law of a path `(s_i, M(s_i))` sampled on a uniform grid:
/// each sample stands for the interval `[s_i, s_i + ds)`, so
/// `F(x) = (1/n) sum_i 1{M(s_i) <= x}` (left Riemann sum).
pub fn empirical_cdf(m_path: &[(f64, f64)], x_grid: Vec<f64>) -> Result<EmpiricalCdf> {
    if m_path.is_empty() {
        return Err(Error::param("empty path"));
    }
    if m_path.len() > 1 {
        let ds = m_path[1].0 - m_path[0].0;
        if !(ds > 0.0) {
            return Err(Error::param("path times must increase"));
        }
        let uneven = m_path
            .windows(2)
            .any(|w| ((w[1].0 - w[0].0) - ds).abs() > 1e-9 * ds.max(w[1].0.abs()));
        if uneven {
            return Err(Error::param("path times must be uniformly spaced"));
        }
    }
    let samples: Vec<f64> = m_path.iter().map(|p| p.1).collect();
    EmpiricalCdf::from_samples(&samples, x_grid)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GumbelParams {
    c: f64,
    z: f64,
}

impl GumbelParams {
    pub fn new(c: f64, z: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && z > 0.0 && z.is_finite()) {
            return Err(Error::param(format!("Gumbel parameters must be positive, got C={c}, Z={z}")));
        }
        Ok(Self { c, z })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn z(&self) -> f64 {
        self.z
    }
}

/// `exp(-C Z exp(-sqrt2 x))`.
pub fn gumbel_predict(params: &GumbelParams, x: f64) -> f64 {
    (-params.c * params.z * (-SQRT_2 * x).exp()).exp()
}

/// Recentred maxima at `horizon` of `n_cont` independent continuations of `early`.
///
/// Each continuation gets fresh branch clocks and its own stream derived from
/// a key drawn from `stream`.
pub fn conditional_max_samples(
    early: &Population,
    horizon: f64,
    n_cont: usize,
    law: &OffspringLaw,
    prune: &PruneConfig,
    stream: &mut RandomStream,
) -> Result<Vec<f64>> {
    if !(horizon > early.time()) {
        return Err(Error::param(format!(
            "horizon {horizon} must exceed the frozen time {}",
            early.time()
        )));
    }
    if n_cont == 0 {
        return Err(Error::param("need at least one continuation"));
    }
    let key = stream.next_u64();
    (0..n_cont)
        .into_par_iter()
        .map(|i| {
            let mut s = RandomStream::derive(key, i as u64, "continuation");
            let mut pop = early.clone();
            pop.redraw_clocks(&mut s);
            pop.advance(horizon, law, prune, &mut s)?;
            max_displacement(&pop)
        })
        .collect()
}

/// Conditional law of `M(horizon)` given the frozen population, by continuation.
#[allow(clippy::too_many_arguments)]
pub fn conditional_max_cdf(
    early: &Population,
    horizon: f64,
    x_grid: Vec<f64>,
    n_cont: usize,
    law: &OffspringLaw,
    prune: &PruneConfig,
    stream: &mut RandomStream,
) -> Result<EmpiricalCdf> {
    if n_cont < 100 {
        return Err(Error::param(format!("need at least 100 continuations, got {n_cont}")));
    }
    check_grid(&x_grid)?;
    let samples = conditional_max_samples(early, horizon, n_cont, law, prune, stream)?;
    EmpiricalCdf::from_samples(&samples, x_grid)
}

/// One long path: martingales frozen at `R` and the recentred maximum on the
/// checkpoint grid of `[εT, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicRun {
    pub horizon: f64,
    pub epsilon: f64,
    pub at_r: MartingaleSnapshot,
    /// `(s, M(s))`, left endpoints of the averaging grid.
    pub m_path: Vec<(f64, f64)>,
    pub prune: crate::engine::PruneReport,
}

impl ErgodicRun {
    /// `F_T` on `x_grid`: the fraction of grid times with `M(s) <= x`.
    pub fn cdf(&self, x_grid: Vec<f64>) -> Result<EmpiricalCdf> {
        empirical_cdf(&self.m_path, x_grid)
    }

    /// `sup_x |F_T(x) - exp(-C Z(R) e^{-sqrt2 x})|` on `x_grid`.
    pub fn sup_distance(&self, c: f64, x_grid: Vec<f64>) -> Result<f64> {
        let params = GumbelParams::new(c, self.at_r.z)?;
        Ok(self.cdf(x_grid)?.sup_distance_to(|x| gumbel_predict(&params, x)))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ergodic_run(
    horizon: f64,
    epsilon: f64,
    big_r: f64,
    law: &OffspringLaw,
    prune: &PruneConfig,
    checkpoint_step: f64,
    stream: &mut RandomStream,
) -> Result<ErgodicRun> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(big_r > 0.0 && big_r <= epsilon * horizon && horizon.is_finite()) {
        return Err(Error::param(format!(
            "need 0 < R <= epsilon T, got R={big_r}, epsilon T={}",
            epsilon * horizon
        )));
    }
    let mut pop = Population::new(checkpoint_step, stream)?;
    pop.advance(big_r, law, prune, stream)?;
    let at_r = martingale_snapshot(&pop)?;
    let first = (epsilon * horizon / checkpoint_step - 1e-9).ceil() as u64;
    let last = (horizon / checkpoint_step + 1e-9).floor() as u64;
    if last <= first {
        return Err(Error::param("averaging interval holds no checkpoint"));
    }
    let mut m_path = Vec::with_capacity((last - first) as usize);
    for k in first..last {
        let s = k as f64 * checkpoint_step;
        if s > pop.time() {
            pop.advance(s, law, prune, stream)?;
        }
        m_path.push((s, max_displacement(&pop)?));
    }
    Ok(ErgodicRun {
        horizon,
        epsilon,
        at_r,
        m_path,
        prune: pop.prune_report(),
    })
}

pub fn martingale_table(series: &[MartingaleSnapshot]) -> Table {
    let mut t = Table::new("martingales", &["t", "Y", "Z", "Z2", "min_y"]);
    for s in series {
        t.push(vec![s.t, s.y, s.z, s.z2, s.min_y]);
    }
    t
}

/// `(x, F(x), gumbel_predict(x))`.
pub fn ergodic_table(cdf: &EmpiricalCdf, params: &GumbelParams) -> Table {
    let mut t = Table::new("ergodic", &["x", "F_T", "gumbel"]);
    for (&x, &f) in cdf.x_grid().iter().zip(cdf.values()) {
        t.push(vec![x, f, gumbel_predict(params, x)]);
    }
    t
}
