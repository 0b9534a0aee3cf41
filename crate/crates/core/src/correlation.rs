//! Frontier–frontier correlations, the summability check built on them, and
//! the expected number of particle pairs from the many-to-two formula.
//!
//! The correlation of `X_s = 1{M_loc(s) <= D} - P[M_loc(s) <= D | F_R]` at two
//! times is the mean over early segments (run to `R`) of the conditional
//! covariance of the two indicators. The conditional covariance is estimated
//! from continuations of the frozen segment; with paired continuations the
//! unbiased sample covariance is used, so a vanishing conditional covariance
//! gives a mean-zero estimate.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::bridge::{sample_bridge_into, BridgeSpec};
use crate::engine::{Population, PruneConfig, PruneReport};
use crate::error::{Error, Result};
use crate::frontier::max_displacement;
use crate::localization::{self, localized_max, EnvelopeSpec};
use crate::offspring::OffspringLaw;
use crate::replicas::run_replicas;
use crate::rng::RandomStream;
use crate::stats::{mean_se, normal_cdf};
use crate::table::Table;

const TIME_TOL: f64 = 1e-9;

/// How the two indicators of one continuation set are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairing {
    /// Both times read off the same continuation.
    Paired,
    /// The later time uses its own, independent continuations. Test hook: the
    /// conditional covariance is then zero by construction.
    Independent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationConfig {
    pub horizon: f64,
    pub epsilon: f64,
    pub xi: f64,
    /// `[d, D]`; the indicators use the upper end `D`.
    pub window: (f64, f64),
    /// End of the frozen early segment.
    pub big_r: f64,
    /// Tube margin `r` for the localized maximum.
    pub r_tube: f64,
    pub alpha: f64,
    pub beta: f64,
    pub outer_replicas: usize,
    pub inner_continuations: usize,
    pub checkpoint_step: f64,
    /// Branching rate of the process; 0 gives pure Brownian motion.
    pub branch_rate: f64,
    pub pairing: Pairing,
    /// Record paths and evaluate `M_loc`; off, only the plain maximum is read.
    pub track_localized: bool,
}

impl CorrelationConfig {
    pub const DEFAULT_OUTER: usize = 200;
    pub const DEFAULT_INNER: usize = 200;
    pub const MIN_INNER: usize = 50;

    /// Defaults for the given horizon and early-segment length; the tube margin
    /// is `R / 40`.
    pub fn new(horizon: f64, epsilon: f64, big_r: f64) -> Self {
        Self {
            horizon,
            epsilon,
            xi: 0.8,
            window: (-1.0, 2.0),
            big_r,
            r_tube: big_r / 40.0,
            alpha: EnvelopeSpec::DEFAULT_ALPHA,
            beta: EnvelopeSpec::DEFAULT_BETA,
            outer_replicas: Self::DEFAULT_OUTER,
            inner_continuations: Self::DEFAULT_INNER,
            checkpoint_step: 0.1,
            branch_rate: 1.0,
            pairing: Pairing::Paired,
            track_localized: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::param(format!("horizon must be > 0, got {t}")));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::param(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::param(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        if !(self.window.0 < self.window.1) {
            return Err(Error::param(format!(
                "window needs d < D, got [{}, {}]",
                self.window.0, self.window.1
            )));
        }
        if !(self.big_r >= 0.0) {
            return Err(Error::param(format!("R must be >= 0, got {}", self.big_r)));
        }
        if !(self.epsilon * t > self.big_r) {
            return Err(Error::InfeasibleSchedule {
                big_r: self.big_r,
                horizon: self.epsilon * t,
            });
        }
        if !(self.r_tube >= 0.0 && self.r_tube.is_finite()) {
            return Err(Error::param(format!("tube margin must be >= 0, got {}", self.r_tube)));
        }
        EnvelopeSpec::new(self.alpha, self.beta, t)?;
        if self.outer_replicas < 2 {
            return Err(Error::param("need at least 2 outer replicas"));
        }
        if self.inner_continuations < Self::MIN_INNER {
            return Err(Error::param(format!(
                "need at least {} inner continuations, got {}",
                Self::MIN_INNER,
                self.inner_continuations
            )));
        }
        if !(self.checkpoint_step > 0.0) {
            return Err(Error::param("checkpoint step must be > 0"));
        }
        if !(self.branch_rate >= 0.0 && self.branch_rate.is_finite()) {
            return Err(Error::param("branch rate must be >= 0"));
        }
        Ok(())
    }

    /// Separation `T^ξ` beyond which times count as well separated.
    pub fn separation(&self) -> f64 {
        self.horizon.powf(self.xi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationSample {
    pub s: f64,
    pub s_prime: f64,
    pub estimate: f64,
    pub std_error: f64,
}

/// Estimates for one early time `s` against several later times, from shared
/// early segments and continuations.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationProfile {
    /// Indicators of the localized maximum (all zero when not tracked).
    pub localized: Vec<CorrelationSample>,
    /// Same with the plain maximum `M(s)` in place of `M_loc(s)`.
    pub plain: Vec<CorrelationSample>,
    /// Mean of `P[M_loc(s) <= D | F_R]` over early segments.
    pub mean_prob_localized: f64,
    pub mean_prob_plain: f64,
    /// Summed over early segments and all continuations.
    pub prune: PruneReport,
}

/// Indicators `(M_loc(t) <= D, M(t) <= D)` of a population at time `t`.
fn indicators(pop: &Population, cfg: &CorrelationConfig, level: f64) -> Result<(bool, bool)> {
    let t = pop.time();
    let plain = max_displacement(pop)? <= level;
    if !cfg.track_localized {
        return Ok((true, plain));
    }
    let spec = EnvelopeSpec::new(cfg.alpha, cfg.beta, t)?;
    let r = cfg.r_tube.min(0.5 * t * (1.0 - 1e-9));
    let loc = localized_max(pop, &spec, r)?.at_most(level);
    Ok((loc, plain))
}

/// Runs one continuation of `early` through `times`, reading the indicators.
fn continuation(
    early: &Population,
    times: &[f64],
    cfg: &CorrelationConfig,
    law: &OffspringLaw,
    prune: &PruneConfig,
    stream: &mut RandomStream,
) -> Result<(Vec<(bool, bool)>, PruneReport)> {
    let level = cfg.window.1;
    let mut pop = early.clone();
    pop.redraw_clocks(stream);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t > pop.time() + TIME_TOL {
            pop.advance(t, law, prune, stream)?;
        }
        out.push(indicators(&pop, cfg, level)?);
    }
    Ok((out, pop.prune_report().since(early.prune_report())))
}

/// Unbiased sample covariance of two 0/1 sequences.
fn covariance(a: &[bool], b: &[bool]) -> f64 {
    let n = a.len() as f64;
    let sa = a.iter().filter(|&&x| x).count() as f64;
    let sb = b.iter().filter(|&&x| x).count() as f64;
    let sab = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    (sab - sa * sb / n) / (n - 1.0)
}

fn check_times(cfg: &CorrelationConfig, s: f64, later: &[f64]) -> Result<()> {
    let t = cfg.horizon;
    let lo = cfg.epsilon * t;
    if !(s >= lo - TIME_TOL && s <= t + TIME_TOL) {
        return Err(Error::param(format!("s = {s} outside [{lo}, {t}]")));
    }
    for &sp in later {
        if !(sp > s && sp <= t + TIME_TOL) {
            return Err(Error::param(format!("need s < s' <= T, got s={s}, s'={sp}")));
        }
    }
    Ok(())
}

/// Correlation estimates at `(s, s')` for every `s'` in `later`.
pub fn correlation_profile(
    cfg: &CorrelationConfig,
    s: f64,
    later: &[f64],
    law: &OffspringLaw,
    prune: &PruneConfig,
    stream: &mut RandomStream,
) -> Result<CorrelationProfile> {
    cfg.validate()?;
    if later.is_empty() {
        return Err(Error::param("need at least one later time"));
    }
    check_times(cfg, s, later)?;
    if later.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("later times must be increasing"));
    }
    let mut times = vec![s];
    times.extend_from_slice(later);
    let n_inner = cfg.inner_continuations;
    let key = stream.next_u64();
    // per outer replica: per later time, (loc cov, plain cov), plus P(s) estimates
    let per_outer = run_replicas(key, "outer", cfg.outer_replicas, |_, os| {
        let mut early = Population::new(cfg.checkpoint_step, os)?;
        if cfg.track_localized {
            early = early.with_paths();
        }
        let mut early = early.with_branch_rate(cfg.branch_rate, os)?;
        if cfg.big_r > 0.0 {
            early.advance(cfg.big_r, law, prune, os)?;
        }
        let inner_key = os.next_u64();
        let mut first: Vec<Vec<(bool, bool)>> = Vec::with_capacity(n_inner);
        let mut second: Vec<Vec<(bool, bool)>> = Vec::with_capacity(n_inner);
        let mut report = early.prune_report();
        for j in 0..n_inner {
            let mut cs = RandomStream::derive(inner_key, j as u64, "continuation");
            match cfg.pairing {
                Pairing::Paired => {
                    let (ind, rep) = continuation(&early, &times, cfg, law, prune, &mut cs)?;
                    first.push(vec![ind[0]]);
                    second.push(ind[1..].to_vec());
                    report = report.merged(rep);
                }
                Pairing::Independent => {
                    let (a, rep_a) = continuation(&early, &times[..1], cfg, law, prune, &mut cs)?;
                    let mut cs2 = RandomStream::derive(inner_key, j as u64, "second");
                    let (b, rep_b) = continuation(&early, later, cfg, law, prune, &mut cs2)?;
                    first.push(a);
                    second.push(b);
                    report = report.merged(rep_a).merged(rep_b);
                }
            }
        }
        let a_loc: Vec<bool> = first.iter().map(|v| v[0].0).collect();
        let a_plain: Vec<bool> = first.iter().map(|v| v[0].1).collect();
        let mut covs = Vec::with_capacity(later.len());
        for k in 0..later.len() {
            let b_loc: Vec<bool> = second.iter().map(|v| v[k].0).collect();
            let b_plain: Vec<bool> = second.iter().map(|v| v[k].1).collect();
            // with independent sequences this is unbiased for zero
            covs.push((covariance(&a_loc, &b_loc), covariance(&a_plain, &b_plain)));
        }
        let p = |v: &[bool]| v.iter().filter(|&&x| x).count() as f64 / v.len() as f64;
        Ok((covs, p(&a_loc), p(&a_plain), report))
    })?;
    let mut localized = Vec::with_capacity(later.len());
    let mut plain = Vec::with_capacity(later.len());
    for (k, &sp) in later.iter().enumerate() {
        let (e, se) = mean_se(&per_outer.iter().map(|o| o.0[k].0).collect::<Vec<_>>());
        localized.push(CorrelationSample { s, s_prime: sp, estimate: e, std_error: se });
        let (e, se) = mean_se(&per_outer.iter().map(|o| o.0[k].1).collect::<Vec<_>>());
        plain.push(CorrelationSample { s, s_prime: sp, estimate: e, std_error: se });
    }
    let n = per_outer.len() as f64;
    Ok(CorrelationProfile {
        localized,
        plain,
        mean_prob_localized: per_outer.iter().map(|o| o.1).sum::<f64>() / n,
        mean_prob_plain: per_outer.iter().map(|o| o.2).sum::<f64>() / n,
        prune: per_outer.iter().map(|o| o.3).sum(),
    })
}

/// Nested Monte Carlo estimate of the correlation of the localized
/// indicators at `s < s'`.
pub fn correlation_estimator(
    cfg: &CorrelationConfig,
    s: f64,
    s_prime: f64,
    law: &OffspringLaw,
    prune: &PruneConfig,
    stream: &mut RandomStream,
) -> Result<CorrelationSample> {
    let prof = correlation_profile(cfg, s, &[s_prime], law, prune, stream)?;
    Ok(prof.localized[0])
}

pub fn correlation_table(samples: &[CorrelationSample], cfg: &CorrelationConfig) -> Table {
    let mut t = Table::new("correlation", &["s", "s_prime", "estimate", "std_error"]).with_meta(vec![
        ("T".into(), cfg.horizon.to_string()),
        ("epsilon".into(), cfg.epsilon.to_string()),
        ("R".into(), cfg.big_r.to_string()),
        ("D".into(), cfg.window.1.to_string()),
        ("outer".into(), cfg.outer_replicas.to_string()),
        ("inner".into(), cfg.inner_continuations.to_string()),
    ]);
    for c in samples {
        t.push(vec![c.s, c.s_prime, c.estimate, c.std_error]);
    }
    t
}

/// Composite Simpson rule on `n` (rounded up to even) intervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

/// Which part of `{εT <= s < s' <= T}` enters the summability term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LyonsRegion {
    Triangle,
    /// Only `s' - s > T^ξ`.
    Separated,
}

/// `(2/T^3) ∫_{εT}^T ds ∫_s^T ds' C(s, s')` over the chosen region, by
/// iterated Simpson with `n` intervals per direction.
pub fn lyons_term<F: Fn(f64, f64) -> f64 + Sync>(
    horizon: f64,
    epsilon: f64,
    xi: f64,
    region: LyonsRegion,
    n: usize,
    corr: F,
) -> Result<f64> {
    if !(horizon > 0.0 && epsilon > 0.0 && epsilon < 1.0 && xi > 0.0 && xi < 1.0) {
        return Err(Error::param("need T > 0 and epsilon, xi in (0, 1)"));
    }
    let gap = match region {
        LyonsRegion::Triangle => 0.0,
        LyonsRegion::Separated => horizon.powf(xi),
    };
    let lo = epsilon * horizon;
    // the inner range vanishes past T - gap; integrate only up to that kink
    let hi = horizon - gap;
    let inner = |s: f64| simpson(|sp| corr(s, sp), s + gap, horizon, n);
    let total = simpson(inner, lo, hi.max(lo), n);
    Ok(2.0 * total / horizon.powi(3))
}

/// Bilinear surface over a tensor grid of `(s, s' - s)` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSurface {
    s_nodes: Vec<f64>,
    gap_nodes: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl CorrelationSurface {
    /// Samples must cover every combination of their distinct `s` and
    /// `s' - s` values exactly once.
    pub fn from_samples(samples: &[CorrelationSample]) -> Result<Self> {
        let key = |v: f64| (v * 1e6).round() as i64;
        let mut s_nodes: Vec<f64> = samples.iter().map(|c| c.s).collect();
        let mut gap_nodes: Vec<f64> = samples.iter().map(|c| c.s_prime - c.s).collect();
        for v in [&mut s_nodes, &mut gap_nodes] {
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| key(*a) == key(*b));
        }
        if s_nodes.len() * gap_nodes.len() != samples.len() {
            return Err(Error::Data("correlation samples do not form a tensor grid".into()));
        }
        let mut values = vec![vec![f64::NAN; gap_nodes.len()]; s_nodes.len()];
        for c in samples {
            let i = s_nodes.iter().position(|&v| key(v) == key(c.s));
            let j = gap_nodes.iter().position(|&v| key(v) == key(c.s_prime - c.s));
            match (i, j) {
                (Some(i), Some(j)) if values[i][j].is_nan() => values[i][j] = c.estimate,
                _ => return Err(Error::Data("duplicate correlation sample".into())),
            }
        }
        Ok(Self {
            s_nodes,
            gap_nodes,
            values,
        })
    }

    /// Bilinear interpolation, constant beyond the outermost nodes.
    pub fn value(&self, s: f64, s_prime: f64) -> f64 {
        let (i, fi) = locate(&self.s_nodes, s);
        let (j, fj) = locate(&self.gap_nodes, s_prime - s);
        let v = &self.values;
        let at = |a: usize, b: usize| v[a.min(v.len() - 1)][b.min(v[0].len() - 1)];
        (1.0 - fi) * ((1.0 - fj) * at(i, j) + fj * at(i, j + 1))
            + fi * ((1.0 - fj) * at(i + 1, j) + fj * at(i + 1, j + 1))
    }
}

fn locate(nodes: &[f64], x: f64) -> (usize, f64) {
    if nodes.len() == 1 || x <= nodes[0] {
        return (0, 0.0);
    }
    let last = nodes.len() - 1;
    if x >= nodes[last] {
        return (last, 0.0);
    }
    let k = nodes.partition_point(|&v| v <= x) - 1;
    (k, (x - nodes[k]) / (nodes[k + 1] - nodes[k]))
}

/// `(T, term, partial_sum)` for increasing horizons, each term from its own
/// sample surface over the chosen region.
pub fn lyons_summability_report(
    inputs: &[(f64, Vec<CorrelationSample>)],
    epsilon: f64,
    xi: f64,
    region: LyonsRegion,
    n: usize,
) -> Result<Table> {
    let mut table = Table::new("lyons", &["T", "term", "partial_sum"]).with_meta(vec![
        ("epsilon".into(), epsilon.to_string()),
        ("xi".into(), xi.to_string()),
        ("region".into(), format!("{region:?}").to_lowercase()),
    ]);
    let mut sum = 0.0;
    let mut prev = f64::NEG_INFINITY;
    for (t, samples) in inputs {
        if !(*t > prev) {
            return Err(Error::param("horizons must be increasing"));
        }
        prev = *t;
        let surface = CorrelationSurface::from_samples(samples)?;
        let term = lyons_term(*t, epsilon, xi, region, n, |s, sp| surface.value(s, sp))?;
        sum += term;
        table.push(vec![*t, term, sum]);
    }
    Ok(table)
}

/// Tube condition on a path: between the envelopes of `spec` on `(r, t - r)`
/// where `t = spec.t()`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeCondition {
    pub spec: EnvelopeSpec,
    pub r: f64,
}

/// Condition on one particle of the pair: its position at its own time is
/// at least `threshold`, and optionally its path stays in a tube.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairCondition {
    pub threshold: f64,
    pub tube: Option<TubeCondition>,
}

impl PairCondition {
    pub fn none() -> Self {
        Self {
            threshold: f64::NEG_INFINITY,
            tube: None,
        }
    }

    pub fn above(threshold: f64) -> Self {
        Self {
            threshold,
            tube: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SawyerConfig {
    /// Initial Simpson intervals over the branch time (doubled on refinement)
    /// and per Gaussian integral.
    pub quad_points: usize,
    /// Paths per Monte Carlo path probability (tube conditions only).
    pub bridge_mc: usize,
    /// Grid step for tube checks.
    pub grid_step: f64,
    /// Branch times are integrated over `[0, I - r_cut]`.
    pub r_cut: f64,
    /// Successive refinements must agree to this relative tolerance.
    pub rel_tol: f64,
    pub max_doublings: u32,
}

impl Default for SawyerConfig {
    fn default() -> Self {
        Self {
            quad_points: 32,
            bridge_mc: 2000,
            grid_step: 0.1,
            r_cut: 0.0,
            rel_tol: 0.05,
            max_doublings: 6,
        }
    }
}

/// Gaussian integral `∫ g(y) dN(0, var)(y)` by Simpson over ±8 standard deviations.
fn gauss_integral<G: FnMut(f64) -> Result<f64>>(var: f64, n: usize, mut g: G) -> Result<f64> {
    if var <= 1e-14 {
        return g(0.0);
    }
    let sd = var.sqrt();
    let n = (n.max(2) + 1) & !1;
    let (a, h) = (-8.0 * sd, 16.0 * sd / n as f64);
    let mut acc = 0.0;
    for i in 0..=n {
        let y = a + h * i as f64;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let dens = (-0.5 * y * y / var).exp() / (2.0 * PI * var).sqrt();
        acc += w * dens * g(y)?;
    }
    Ok(acc * h / 3.0)
}

/// Times of grid points strictly inside `(a, b)` on the global grid `k * step`.
fn grid_inside(a: f64, b: f64, step: f64) -> Vec<f64> {
    let mut k = (a / step).floor() as i64 + 1;
    let mut out = Vec::new();
    loop {
        let t = k as f64 * step;
        if t >= b - TIME_TOL {
            break;
        }
        if t > a + TIME_TOL {
            out.push(t);
        }
        k += 1;
    }
    out
}

fn in_tube(c: &TubeCondition, s: f64, x: f64) -> Result<bool> {
    let t = c.spec.t();
    if s <= c.r + TIME_TOL || s >= t - c.r - TIME_TOL {
        return Ok(true);
    }
    localization::in_tube(&c.spec, s, x)
}

/// `P[x in tube on (s, t) and x(t) >= threshold | x(s) = y]` for a Brownian
/// motion; closed form without a tube.
fn forward_prob(
    cond: &PairCondition,
    s: f64,
    t: f64,
    y: f64,
    cfg: &SawyerConfig,
    stream: &mut RandomStream,
) -> Result<f64> {
    let h = t - s;
    let end_prob = |from: f64, dt: f64| {
        if cond.threshold == f64::NEG_INFINITY {
            1.0
        } else if dt <= 0.0 {
            f64::from(u8::from(from >= cond.threshold))
        } else {
            1.0 - normal_cdf((cond.threshold - from) / dt.sqrt())
        }
    };
    let Some(tube) = cond.tube else {
        return Ok(end_prob(y, h));
    };
    let grid = grid_inside(s, t, cfg.grid_step);
    let mut acc = 0.0;
    for _ in 0..cfg.bridge_mc {
        let (mut x, mut now) = (y, s);
        let mut ok = true;
        for &g in &grid {
            x += (g - now).sqrt() * stream.standard_normal();
            now = g;
            if !in_tube(&tube, g, x)? {
                ok = false;
                break;
            }
        }
        if ok {
            // the last leg to t is integrated exactly
            acc += end_prob(x, t - now);
        }
    }
    Ok(acc / cfg.bridge_mc as f64)
}

/// `P[x in both tubes on (0, s) | x(0) = 0, x(s) = y]` by bridge sampling.
fn bridge_prob(
    c1: &PairCondition,
    c2: &PairCondition,
    s: f64,
    y: f64,
    cfg: &SawyerConfig,
    stream: &mut RandomStream,
) -> Result<f64> {
    let tubes: Vec<&TubeCondition> = [c1.tube.as_ref(), c2.tube.as_ref()].into_iter().flatten().collect();
    if tubes.is_empty() || s <= TIME_TOL {
        return Ok(1.0);
    }
    let inner = grid_inside(0.0, s, cfg.grid_step);
    if inner.is_empty() {
        return Ok(1.0);
    }
    let mut grid = vec![0.0];
    grid.extend(&inner);
    grid.push(s);
    let spec = BridgeSpec::new(s, 0.0, y, grid)?;
    let mut path = Vec::new();
    let mut hits = 0usize;
    'paths: for _ in 0..cfg.bridge_mc {
        sample_bridge_into(stream, &spec, &mut path);
        for (k, &g) in inner.iter().enumerate() {
            for tube in &tubes {
                if !in_tube(tube, g, path[k + 1])? {
                    continue 'paths;
                }
            }
        }
        hits += 1;
    }
    Ok(hits as f64 / cfg.bridge_mc as f64)
}

/// Expected number of ordered pairs of distinct particles, one alive at `I`
/// satisfying `c1` and one alive at `J` satisfying `c2`, whose common
/// ancestor branched before `I - r_cut`:
///
/// `K e^I ∫_0^{I - r_cut} e^{J-s} ∫ μ_s(dy) P_0(y) P_1(y) P_2(y) ds`
///
/// with `K = Σ p_j j(j-1)`. Without tubes the path probabilities are Gaussian
/// tails; with tubes they are Monte Carlo estimates.
pub fn sawyer_pair_expectation(
    i_t: f64,
    j_t: f64,
    c1: &PairCondition,
    c2: &PairCondition,
    law: &OffspringLaw,
    cfg: &SawyerConfig,
    stream: &mut RandomStream,
) -> Result<f64> {
    if !(i_t > 0.0 && j_t >= i_t && j_t.is_finite()) {
        return Err(Error::param(format!("need 0 < I <= J, got I={i_t}, J={j_t}")));
    }
    if !(cfg.r_cut >= 0.0 && cfg.r_cut <= i_t) {
        return Err(Error::param(format!("need 0 <= r_cut <= I, got {}", cfg.r_cut)));
    }
    if cfg.quad_points < 2 || cfg.bridge_mc == 0 || !(cfg.grid_step > 0.0) {
        return Err(Error::param("need quad_points >= 2, bridge_mc >= 1, grid_step > 0"));
    }
    for c in [c1, c2] {
        if c.threshold.is_nan() || c.threshold == f64::INFINITY {
            return Err(Error::param("threshold must be -inf or finite"));
        }
    }
    let k = law.factorial_moment();
    if k == 0.0 {
        return Ok(0.0);
    }
    let upper = i_t - cfg.r_cut;
    let key = stream.next_u64();
    let nq = cfg.quad_points;
    let integrand = |s: f64, node: u64| -> Result<f64> {
        let mut st = RandomStream::derive(key, node, "sawyer");
        let val = gauss_integral(s, nq, |y| {
            let p0 = bridge_prob(c1, c2, s, y, cfg, &mut st)?;
            if p0 == 0.0 {
                return Ok(0.0);
            }
            let p1 = forward_prob(c1, s, i_t, y, cfg, &mut st)?;
            let p2 = forward_prob(c2, s, j_t, y, cfg, &mut st)?;
            Ok(p0 * p1 * p2)
        })?;
        Ok((j_t - s).exp() * val)
    };
    let estimate = |n: usize| -> Result<f64> {
        let n = (n + 1) & !1;
        let h = upper / n as f64;
        let vals = (0..=n)
            .into_par_iter()
            .map(|i| integrand(h * i as f64, i as u64))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = vals[0] + vals[n];
        for (i, v) in vals.iter().enumerate().take(n).skip(1) {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * v;
        }
        Ok(k * i_t.exp() * acc * h / 3.0)
    };
    if upper <= 0.0 {
        return Ok(0.0);
    }
    let mut n = nq;
    let mut prev = estimate(n)?;
    for _ in 0..cfg.max_doublings {
        n *= 2;
        let next = estimate(n)?;
        let scale = next.abs().max(prev.abs());
        if scale == 0.0 || (next - prev).abs() <= cfg.rel_tol * scale {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Accuracy(format!(
        "pair-count quadrature did not settle within {} doublings",
        cfg.max_doublings
    )))
}

/// Direct Monte Carlo of the ordered pair count `n_1 (n_2 - [same])` at
/// `I = J = t` for plain thresholds: `(mean, standard error)`.
pub fn direct_pair_count(
    t: f64,
    threshold_1: f64,
    threshold_2: f64,
    law: &OffspringLaw,
    replicas: usize,
    stream: &mut RandomStream,
) -> Result<(f64, f64)> {
    if replicas < 2 {
        return Err(Error::param("need at least 2 replicas"));
    }
    let key = stream.next_u64();
    let counts = run_replicas(key, "pairs", replicas, |_, s| {
        let mut pop = Population::new(t, s)?;
        pop.advance(t, law, &PruneConfig::disabled(), s)?;
        let (mut a, mut b, mut both) = (0.0, 0.0, 0.0);
        for x in pop.positions() {
            let (u, v) = (x >= threshold_1, x >= threshold_2);
            a += f64::from(u8::from(u));
            b += f64::from(u8::from(v));
            both += f64::from(u8::from(u && v));
        }
        Ok(a * b - both)
    })?;
    Ok(mean_se(&counts))
}
