//! Explicit finite-difference solver for `u_t = u_xx / 2 + sum_k p_k u^k - u`
//! started from Heaviside data, on a window that follows the front.
//!
//! `u(t, x)` is the probability that the maximum at time `t` is at most `x`,
//! so `u` increases from 0 (left) to 1 (right) and the front moves right.
//!
//! The solver stores `v = 1 - u`. The front is pulled by its leading edge,
//! where `v` is tiny; storing `u` would round `v < 1e-16` to zero, which acts
//! as a cutoff and slows the front by about 0.005 per unit time.

use crate::error::{Error, Result};
use crate::frontier::{front_centering, EmpiricalCdf};
use crate::offspring::OffspringLaw;
use crate::stats::linear_fit;
use crate::table::Table;

const RANGE_TOL: f64 = 1e-8;
const MONOTONE_TOL: f64 = 1e-12;
const CHECK_EVERY: u64 = 100;

/// Spatial step, time step and the initial window `[x_min, x_max]`.
/// The window keeps its width and is shifted by whole cells as the front moves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub dt: f64,
}

impl Grid1D {
    pub const DEFAULT_DX: f64 = 0.05;
    pub const DEFAULT_DT: f64 = 0.001;
    /// The left tail of the profile decays like `exp((2 - sqrt 2) x)`, so it
    /// needs ~40 units to reach 1e-10; the right tail decays faster.
    pub const LEFT_MARGIN: f64 = 50.0;
    pub const RIGHT_MARGIN: f64 = 40.0;

    pub fn new(x_min: f64, x_max: f64, dx: f64, dt: f64) -> Result<Self> {
        let g = Self { x_min, x_max, dx, dt };
        g.validate()?;
        Ok(g)
    }

    /// Window `[-50, 40]` around the initial jump.
    pub fn with_steps(dx: f64, dt: f64) -> Result<Self> {
        Self::new(-Self::LEFT_MARGIN, Self::RIGHT_MARGIN, dx, dt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0 && self.dx.is_finite()) || !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("grid steps must be positive"));
        }
        if self.dt > self.dx * self.dx / 2.0 * (1.0 + 1e-12) {
            return Err(Error::param(format!(
                "unstable grid: dt = {} exceeds dx^2/2 = {}",
                self.dt,
                self.dx * self.dx / 2.0
            )));
        }
        if !(self.x_max - self.x_min >= 20.0 + 2.0 * self.dx) {
            return Err(Error::param("grid window must be at least 20 units wide"));
        }
        if self.x_min > -10.0 || self.x_max < 10.0 {
            return Err(Error::param("initial window must extend 10 units either side of 0"));
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        ((self.x_max - self.x_min) / self.dx).round() as usize + 1
    }
}

impl Default for Grid1D {
    fn default() -> Self {
        Self::with_steps(Self::DEFAULT_DX, Self::DEFAULT_DT).expect("default grid is valid")
    }
}

/// Initial data. `Constant` exists to exercise the fixed points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Initial {
    /// `1{x >= 0}`, with the node at 0 set to 1/2.
    Heaviside,
    Constant(f64),
}

/// The field at time `t` on nodes `x_i = (offset + i) dx`, and the front history.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveSolution {
    pub t: f64,
    pub dx: f64,
    pub dt: f64,
    offset: i64,
    /// `1 - u` at the nodes.
    pub tail: Vec<f64>,
    pub front_history: Vec<(f64, f64)>,
    pub law: OffspringLaw,
}

impl WaveSolution {
    /// A solution-shaped value from explicit `u` node values (for tests and tools).
    pub fn from_values(t: f64, dx: f64, offset: i64, u: Vec<f64>, law: OffspringLaw) -> Self {
        Self {
            t,
            dx,
            dt: f64::NAN,
            offset,
            tail: u.iter().map(|v| 1.0 - v).collect(),
            front_history: Vec::new(),
            law,
        }
    }

    pub fn len(&self) -> usize {
        self.tail.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tail.is_empty()
    }

    /// `u` at node `i`.
    pub fn u(&self, i: usize) -> f64 {
        1.0 - self.tail[i]
    }

    pub fn u_values(&self) -> Vec<f64> {
        self.tail.iter().map(|v| 1.0 - v).collect()
    }

    pub fn x(&self, i: usize) -> f64 {
        (self.offset + i as i64) as f64 * self.dx
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x(0), self.x(self.tail.len() - 1))
    }

    /// `u(x)` by linear interpolation; constant extension beyond the window.
    pub fn value_at(&self, x: f64) -> f64 {
        1.0 - interpolate(&self.tail, x / self.dx - self.offset as f64)
    }
}

fn interpolate(values: &[f64], pos: f64) -> f64 {
    if pos <= 0.0 {
        return values[0];
    }
    let last = values.len() - 1;
    if pos >= last as f64 {
        return values[last];
    }
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// `1 - v - g(1 - v) = sum_k p_k (1 - (1 - v)^k) - v`, accurate for small `v`.
#[inline]
fn reaction(law: &OffspringLaw, v: f64) -> f64 {
    let l = (-v).ln_1p();
    law.probabilities()
        .iter()
        .enumerate()
        .map(|(i, p)| if *p == 0.0 { 0.0 } else { -p * ((i + 1) as f64 * l).exp_m1() })
        .sum::<f64>()
        - v
}

/// Stepper state; `kpp_solve` is the one-shot entry point.
#[derive(Clone, Debug)]
pub struct KppSolver {
    grid: Grid1D,
    law: OffspringLaw,
    /// `1 - u`.
    v: Vec<f64>,
    next: Vec<f64>,
    offset: i64,
    steps: u64,
    left: f64,
    right: f64,
    record_every: u64,
    track: bool,
    front_history: Vec<(f64, f64)>,
}

impl KppSolver {
    pub fn new(law: &OffspringLaw, grid: Grid1D, initial: Initial) -> Result<Self> {
        grid.validate()?;
        let n = grid.cells();
        let offset = (grid.x_min / grid.dx).round() as i64;
        let (v, left, right, track) = match initial {
            Initial::Heaviside => {
                let v: Vec<f64> = (0..n as i64)
                    .map(|i| match (offset + i).cmp(&0) {
                        std::cmp::Ordering::Less => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Greater => 0.0,
                    })
                    .collect();
                (v, 1.0, 0.0, true)
            }
            Initial::Constant(c) => {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::param("constant initial value must lie in [0, 1]"));
                }
                (vec![1.0 - c; n], 1.0 - c, 1.0 - c, false)
            }
        };
        // record the front every 0.1 time units
        let record_every = ((0.1 / grid.dt).round() as u64).max(1);
        let mut solver = Self {
            grid,
            law: law.clone(),
            next: vec![0.0; n],
            v,
            offset,
            steps: 0,
            left,
            right,
            record_every,
            track,
            front_history: Vec::new(),
        };
        if solver.track {
            let f = solver.front(0.5)?;
            solver.front_history.push((0.0, f));
        }
        Ok(solver)
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.grid.dt
    }

    fn front(&self, level: f64) -> Result<f64> {
        crossing(&self.v, self.offset, self.grid.dx, level)
    }

    /// Advances to `t`, which must be a whole number of steps ahead.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let target = (t / self.grid.dt).round();
        if !(target >= self.steps as f64) || ((target * self.grid.dt) - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::param(format!(
                "target time {t} is not a whole number of steps dt={} ahead of {}",
                self.grid.dt,
                self.time()
            )));
        }
        let target = target as u64;
        while self.steps < target {
            self.step();
            self.steps += 1;
            if cfg!(debug_assertions) || self.steps % CHECK_EVERY == 0 || self.steps == target {
                self.check()?;
            }
            if self.track && self.steps % self.record_every == 0 {
                let f = self.front(0.5)?;
                self.front_history.push((self.time(), f));
                self.recentre(f);
            }
        }
        Ok(())
    }

    fn step(&mut self) {
        let n = self.v.len();
        let lambda = 0.5 * self.grid.dt / (self.grid.dx * self.grid.dx);
        let dt = self.grid.dt;
        let v = &self.v;
        let next = &mut self.next;
        if self.law.is_binary() {
            for i in 1..n - 1 {
                let c = v[i];
                next[i] = c + lambda * (v[i + 1] - 2.0 * c + v[i - 1]) + dt * (c - c * c);
            }
        } else {
            for i in 1..n - 1 {
                let c = v[i];
                next[i] = c + lambda * (v[i + 1] - 2.0 * c + v[i - 1]) + dt * reaction(&self.law, c);
            }
        }
        next[0] = self.left;
        next[n - 1] = self.right;
        std::mem::swap(&mut self.v, &mut self.next);
    }

    fn check(&self) -> Result<()> {
        for (i, &v) in self.v.iter().enumerate() {
            if !(v >= -RANGE_TOL && v <= 1.0 + RANGE_TOL) {
                return Err(Error::Numerical(format!(
                    "u left [0,1] at t={}, x={}: {}",
                    self.time(),
                    (self.offset + i as i64) as f64 * self.grid.dx,
                    1.0 - v
                )));
            }
        }
        if let Some(i) = self.v.windows(2).position(|w| w[1] > w[0] + MONOTONE_TOL) {
            return Err(Error::Numerical(format!(
                "u lost monotonicity at t={}, x={}",
                self.time(),
                (self.offset + i as i64) as f64 * self.grid.dx
            )));
        }
        Ok(())
    }

    /// Keeps the front at its initial place inside the window, shifting by whole cells.
    fn recentre(&mut self, front: f64) {
        let anchor = (self.offset as f64) * self.grid.dx - self.grid.x_min;
        let shift = ((front - anchor) / self.grid.dx).floor() as i64;
        // shift once the front has moved a full unit
        if (shift as f64) * self.grid.dx < 1.0 {
            return;
        }
        let k = shift as usize;
        let n = self.v.len();
        self.v.copy_within(k.., 0);
        for c in &mut self.v[n - k..] {
            *c = self.right;
        }
        self.offset += shift;
    }

    pub fn solution(&self) -> WaveSolution {
        WaveSolution {
            t: self.time(),
            dx: self.grid.dx,
            dt: self.grid.dt,
            offset: self.offset,
            tail: self.v.clone(),
            front_history: self.front_history.clone(),
            law: self.law.clone(),
        }
    }
}

/// Solves to time `t` from Heaviside data.
pub fn kpp_solve(law: &OffspringLaw, t: f64, grid: Grid1D) -> Result<WaveSolution> {
    let mut solver = KppSolver::new(law, grid, Initial::Heaviside)?;
    solver.advance_to(t)?;
    Ok(solver.solution())
}

/// Crossing of `u = level` from the tail values `v = 1 - u` (nonincreasing).
fn crossing(v: &[f64], offset: i64, dx: f64, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param("front level must lie in (0, 1)"));
    }
    let target = 1.0 - level;
    match v.iter().position(|&c| c <= target) {
        Some(i) if i > 0 => {
            let (a, b) = (v[i - 1], v[i]);
            let x0 = (offset + i as i64 - 1) as f64 * dx;
            Ok(x0 + (a - target) / (a - b) * dx)
        }
        _ => Err(Error::State(format!("u does not cross level {level} inside the window"))),
    }
}

/// Position where `u` crosses `level`, by linear interpolation between nodes.
pub fn front_position(sol: &WaveSolution, level: f64) -> Result<f64> {
    crossing(&sol.tail, sol.offset, sol.dx, level)
}

/// Least-squares fits of the front history over `[t_lo, t_hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrontFit {
    /// Slope of a straight-line fit.
    pub linear_speed: f64,
    /// `x = v t + c ln t + b`.
    pub speed: f64,
    pub log_coefficient: f64,
    pub intercept: f64,
    /// `c` with `v` held at sqrt 2.
    pub log_coefficient_fixed_speed: f64,
}

pub fn fit_front(history: &[(f64, f64)], t_lo: f64, t_hi: f64) -> Result<FrontFit> {
    let pts: Vec<(f64, f64)> = history
        .iter()
        .copied()
        .filter(|&(t, _)| t >= t_lo - 1e-9 && t <= t_hi + 1e-9)
        .collect();
    if pts.len() < 4 || t_lo <= 0.0 {
        return Err(Error::Data("front history does not cover the fit interval".into()));
    }
    let ts: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let lin = linear_fit(&ts, &xs).ok_or_else(|| Error::Numerical("degenerate front fit".into()))?;
    let logs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let beta = crate::stats::least_squares(&[ts.clone(), logs.clone(), vec![1.0; ts.len()]], &xs)
        .ok_or_else(|| Error::Numerical("singular front fit".into()))?;
    let resid: Vec<f64> = ts
        .iter()
        .zip(&xs)
        .map(|(t, x)| x - std::f64::consts::SQRT_2 * t)
        .collect();
    let fixed = linear_fit(&logs, &resid).ok_or_else(|| Error::Numerical("degenerate front fit".into()))?;
    Ok(FrontFit {
        linear_speed: lin.slope,
        speed: beta[0],
        log_coefficient: beta[1],
        intercept: beta[2],
        log_coefficient_fixed_speed: fixed.slope,
    })
}

/// `omega(x) = u(t, m(t) + x)` on the recentred nodes, stored as `1 - omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveProfile {
    pub t: f64,
    pub dx: f64,
    pub x: Vec<f64>,
    pub tail: Vec<f64>,
}

impl WaveProfile {
    /// From `omega` values on a uniform grid `x` with spacing `dx`.
    pub fn from_omega(t: f64, dx: f64, x: Vec<f64>, omega: &[f64]) -> Self {
        Self {
            t,
            dx,
            x,
            tail: omega.iter().map(|w| 1.0 - w).collect(),
        }
    }

    pub fn omega(&self) -> Vec<f64> {
        self.tail.iter().map(|v| 1.0 - v).collect()
    }

    /// `omega(x)` by linear interpolation; constant extension.
    pub fn value_at(&self, x: f64) -> f64 {
        1.0 - self.tail_at(x)
    }

    /// `1 - omega(x)` by linear interpolation; constant extension.
    pub fn tail_at(&self, x: f64) -> f64 {
        interpolate(&self.tail, (x - self.x[0]) / self.dx)
    }
}

pub fn wave_profile(sol: &WaveSolution) -> Result<WaveProfile> {
    let m = front_centering(sol.t)?;
    Ok(WaveProfile {
        t: sol.t,
        dx: sol.dx,
        x: (0..sol.len()).map(|i| sol.x(i) - m).collect(),
        tail: sol.tail.clone(),
    })
}

/// Smallest sup-norm distance between two profiles over translations of `b`
/// within `[-max_shift, max_shift]`, evaluated on `a`'s nodes in `[x_lo, x_hi]`.
/// Returns `(shift, distance)`.
pub fn translation_distance(
    a: &WaveProfile,
    b: &WaveProfile,
    x_lo: f64,
    x_hi: f64,
    max_shift: f64,
) -> (f64, f64) {
    let dist = |shift: f64| {
        a.x.iter()
            .zip(&a.tail)
            .filter(|(x, _)| **x >= x_lo && **x <= x_hi)
            .map(|(x, v)| (v - b.tail_at(x + shift)).abs())
            .fold(0.0, f64::max)
    };
    // coarse scan, then golden-section refinement
    let n = 200;
    let mut best = (0.0, dist(0.0));
    for k in 0..=n {
        let s = -max_shift + 2.0 * max_shift * k as f64 / n as f64;
        let d = dist(s);
        if d < best.1 {
            best = (s, d);
        }
    }
    let h = 2.0 * max_shift / n as f64;
    let (mut lo, mut hi) = (best.0 - h, best.0 + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = hi - g * (hi - lo);
        let d = lo + g * (hi - lo);
        if dist(c) < dist(d) {
            hi = d;
        } else {
            lo = c;
        }
    }
    let s = 0.5 * (lo + hi);
    let d = dist(s);
    if d < best.1 {
        (s, d)
    } else {
        best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualTable {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    /// Sup of |residual| over nodes with omega in [0.01, 0.99].
    pub sup_interior: f64,
    /// Set when dx > 0.1: the central differences are too coarse to trust.
    pub coarse: bool,
}

/// `omega''/2 + sqrt2 omega' + omega^2 - omega` by central differences,
/// evaluated on `v = 1 - omega` as `-(v''/2 + sqrt2 v' + v - v^2)`.
pub fn wave_ode_residual(profile: &WaveProfile) -> Result<ResidualTable> {
    let n = profile.tail.len();
    if n < 3 {
        return Err(Error::Data("profile needs at least three nodes".into()));
    }
    let h = profile.dx;
    let v = &profile.tail;
    let mut x = Vec::with_capacity(n - 2);
    let mut residual = Vec::with_capacity(n - 2);
    let mut sup: f64 = 0.0;
    for i in 1..n - 1 {
        let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
        let d1 = (v[i + 1] - v[i - 1]) / (2.0 * h);
        let r = -(0.5 * d2 + std::f64::consts::SQRT_2 * d1 + v[i] - v[i] * v[i]);
        if (0.01..=0.99).contains(&v[i]) {
            sup = sup.max(r.abs());
        }
        x.push(profile.x[i]);
        residual.push(r);
    }
    Ok(ResidualTable {
        x,
        residual,
        sup_interior: sup,
        coarse: h > 0.1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CFit {
    pub c_hat: f64,
    /// R² of the model `ln(1 - omega) = ln x - sqrt2 x + ln C`.
    pub r_squared: f64,
    /// Slope of a free fit of `ln(1 - omega)` on `ln x - sqrt2 x`, for diagnosis.
    pub free_slope: f64,
    pub points: usize,
}

/// Fits `1 - omega(x) = C x exp(-sqrt2 x)` over `[x_lo, x_hi]`.
pub fn estimate_c(profile: &WaveProfile, x_lo: f64, x_hi: f64) -> Result<CFit> {
    if !(x_lo > 0.0 && x_hi > x_lo) {
        return Err(Error::param("fit range must satisfy 0 < x_lo < x_hi"));
    }
    let mut reg = Vec::new();
    let mut target = Vec::new();
    for (&x, &tail) in profile.x.iter().zip(&profile.tail) {
        if x < x_lo || x > x_hi {
            continue;
        }
        if !(tail > 1e-6 && tail < 1e-2) {
            return Err(Error::Accuracy(format!(
                "1 - omega = {tail:e} at x = {x:.3}: fit range leaves the tail region (1e-6, 1e-2)"
            )));
        }
        reg.push(x.ln() - std::f64::consts::SQRT_2 * x);
        target.push(tail.ln());
    }
    if reg.len() < 3 {
        return Err(Error::Data("fewer than three profile nodes in the fit range".into()));
    }
    let n = reg.len() as f64;
    let ln_c = target.iter().zip(&reg).map(|(y, r)| y - r).sum::<f64>() / n;
    let mean_y = target.iter().sum::<f64>() / n;
    let ss_res: f64 = target.iter().zip(&reg).map(|(y, r)| (y - r - ln_c).powi(2)).sum();
    let ss_tot: f64 = target.iter().map(|y| (y - mean_y).powi(2)).sum();
    let r_squared = 1.0 - ss_res / ss_tot;
    let free_slope = linear_fit(&reg, &target).map_or(f64::NAN, |f| f.slope);
    let fit = CFit {
        c_hat: ln_c.exp(),
        r_squared,
        free_slope,
        points: reg.len(),
    };
    if !(r_squared >= 0.99) {
        return Err(Error::Accuracy(format!("poor tail fit: R^2 = {r_squared:.4}")));
    }
    Ok(fit)
}

/// Sup over the CDF grid of `|F_mc(x) - u(t, m(t) + x)|`.
pub fn crosscheck_mc_vs_pde(
    mc_cdf: &EmpiricalCdf,
    mc_t: f64,
    mc_law: &OffspringLaw,
    sol: &WaveSolution,
) -> Result<f64> {
    if (mc_t - sol.t).abs() > 1e-9 * mc_t.max(1.0) {
        return Err(Error::param(format!("Monte Carlo time {mc_t} differs from PDE time {}", sol.t)));
    }
    if mc_law != &sol.law {
        return Err(Error::param("Monte Carlo and PDE use different offspring laws"));
    }
    let m = front_centering(sol.t)?;
    Ok(mc_cdf
        .x_grid()
        .iter()
        .zip(mc_cdf.values())
        .map(|(x, f)| (f - sol.value_at(m + x)).abs())
        .fold(0.0, f64::max))
}

fn law_label(law: &OffspringLaw) -> String {
    law.probabilities()
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn metadata(sol: &WaveSolution) -> Vec<(String, String)> {
    vec![
        ("t".into(), sol.t.to_string()),
        ("dx".into(), sol.dx.to_string()),
        ("dt".into(), sol.dt.to_string()),
        ("law".into(), law_label(&sol.law)),
    ]
}

pub fn front_history_table(sol: &WaveSolution) -> Table {
    let mut t = Table::new("kpp_front", &["t", "x_front"]).with_meta(metadata(sol));
    for &(s, x) in &sol.front_history {
        t.push(vec![s, x]);
    }
    t
}

pub fn profile_table(sol: &WaveSolution, profile: &WaveProfile) -> Table {
    let mut t = Table::new("kpp_profile", &["x", "omega", "one_minus_omega"]).with_meta(metadata(sol));
    for (x, v) in profile.x.iter().zip(&profile.tail) {
        t.push(vec![*x, 1.0 - v, *v]);
    }
    t
}

pub fn residual_table(sol: &WaveSolution, res: &ResidualTable) -> Table {
    let mut t = Table::new("kpp_residual", &["x", "residual"]).with_meta(metadata(sol));
    for (x, r) in res.x.iter().zip(&res.residual) {
        t.push(vec![*x, *r]);
    }
    t
}
