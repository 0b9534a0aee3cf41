//! Brownian bridges and the bridge-below-a-line bound.

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// A Brownian bridge of length `length` from `start` to `end`, observed on `grid`.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSpec {
    length: f64,
    start: f64,
    end: f64,
    grid: Vec<f64>,
}

impl BridgeSpec {
    pub fn new(length: f64, start: f64, end: f64, grid: Vec<f64>) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::param(format!("bridge length must be > 0, got {length}")));
        }
        if !(start.is_finite() && end.is_finite()) {
            return Err(Error::param("bridge endpoints must be finite"));
        }
        if grid.len() < 2 || grid[0] != 0.0 || *grid.last().unwrap() != length {
            return Err(Error::param("bridge grid must start at 0 and end at the bridge length"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("bridge grid must be strictly increasing"));
        }
        Ok(Self {
            length,
            start,
            end,
            grid,
        })
    }

    /// Uniform grid with `steps` intervals.
    pub fn uniform(length: f64, start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("bridge grid needs at least one step"));
        }
        let mut grid: Vec<f64> = (0..=steps)
            .map(|i| length * i as f64 / steps as f64)
            .collect();
        grid[steps] = length;
        Self::new(length, start, end, grid)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

/// Samples a bridge path at the grid times.
///
/// Forward conditioning: from value `v` at time `s`, the value at `s + h` is
/// Gaussian with mean `v + (b - v) h / (t - s)` and variance `h (t - s - h) / (t - s)`.
/// The first and last entries are set to the endpoints exactly.
pub fn bridge_sample_path(stream: &mut RandomStream, spec: &BridgeSpec) -> Vec<f64> {
    let mut path = Vec::with_capacity(spec.grid.len());
    sample_bridge_into(stream, spec, &mut path);
    path
}

pub(crate) fn sample_bridge_into(stream: &mut RandomStream, spec: &BridgeSpec, out: &mut Vec<f64>) {
    out.clear();
    let t = spec.length;
    let n = spec.grid.len();
    let mut value = spec.start;
    out.push(value);
    for i in 1..n - 1 {
        let s = spec.grid[i - 1];
        let h = spec.grid[i] - s;
        let remaining = t - s;
        let mean = value + (spec.end - value) * h / remaining;
        let var = h * (remaining - h) / remaining;
        value = mean + var.max(0.0).sqrt() * stream.standard_normal();
        out.push(value);
    }
    out.push(spec.end);
}

/// Upper bound on the probability that a pinned bridge of length `t` stays
/// below the chord from `z1` to `z2` during `[r1, t - r2]`:
/// `2 / (t - r1 - r2) * (z(r1) + sqrt(r1)) * (z(r2) + sqrt(r2))`
/// with `z(r1) = (1 - r1/t) z1 + (r1/t) z2`, `z(r2) = (r2/t) z1 + (1 - r2/t) z2`.
///
/// The value can exceed one.
pub fn bridge_below_line_bound(z1: f64, z2: f64, r1: f64, r2: f64, t: f64) -> Result<f64> {
    if [z1, z2, r1, r2].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::param("z1, z2, r1, r2 must be finite and nonnegative"));
    }
    if !(t > r1 + r2) || !t.is_finite() {
        return Err(Error::param(format!("need t > r1 + r2, got t={t}, r1={r1}, r2={r2}")));
    }
    let z_r1 = (1.0 - r1 / t) * z1 + (r1 / t) * z2;
    let z_r2 = (r2 / t) * z1 + (1.0 - r2 / t) * z2;
    Ok(2.0 / (t - r1 - r2) * (z_r1 + r1.sqrt()) * (z_r2 + r2.sqrt()))
}

/// Grid-level Monte Carlo estimate of the event bounded by
/// [`bridge_below_line_bound`]: a bridge pinned at 0 on both ends stays below
/// `(1 - s/t) z1 + (s/t) z2` at every grid time in `[r1, t - r2]`.
///
/// Returns `(probability, standard error)`.
#[allow(clippy::too_many_arguments)]
pub fn bridge_below_line_mc(
    z1: f64,
    z2: f64,
    r1: f64,
    r2: f64,
    t: f64,
    steps: usize,
    paths: usize,
    stream: &mut RandomStream,
) -> Result<(f64, f64)> {
    bridge_below_line_bound(z1, z2, r1, r2, t)?;
    if paths == 0 {
        return Err(Error::param("need at least one path"));
    }
    let spec = BridgeSpec::uniform(t, 0.0, 0.0, steps)?;
    let lo = r1;
    let hi = t - r2;
    let checked: Vec<(usize, f64)> = spec
        .grid()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= lo && s <= hi)
        .map(|(i, &s)| (i, (1.0 - s / t) * z1 + (s / t) * z2))
        .collect();
    let mut path = Vec::with_capacity(steps + 1);
    let mut hits = 0usize;
    for _ in 0..paths {
        sample_bridge_into(stream, &spec, &mut path);
        if checked.iter().all(|&(i, line)| path[i] <= line) {
            hits += 1;
        }
    }
    let p = hits as f64 / paths as f64;
    Ok((p, (p * (1.0 - p) / paths as f64).sqrt()))
}
