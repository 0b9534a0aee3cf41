//! Envelopes, tube membership, the localized maximum, the tube schedule and
//! the tail-bound formulas together with their Monte Carlo counterparts.
//!
//! Tube membership is only checked at checkpoint times, so the checkpoint
//! step of the population is the fidelity knob.

use std::f64::consts::SQRT_2;

use crate::engine::{Particle, Population, PruneConfig, PruneReport};
use crate::error::{Error, Result};
use crate::frontier::{m, max_displacement};
use crate::offspring::OffspringLaw;
use crate::replicas::run_replicas;
use crate::rng::RandomStream;
use crate::stats::{linear_fit, wilson_interval, LinearFit};
use crate::table::Table;

/// Slack when comparing checkpoint times against interval ends.
const TIME_TOL: f64 = 1e-9;

/// `s^γ` on the first half of `[0, t]`, `(t-s)^γ` on the second.
pub fn f_gamma(gamma: f64, t: f64, s: f64) -> Result<f64> {
    if !(gamma > 0.0 && t > 0.0 && t.is_finite()) {
        return Err(Error::param(format!("f_gamma needs gamma > 0 and t > 0, got {gamma}, {t}")));
    }
    if !(0.0..=t).contains(&s) {
        return Err(Error::param(format!("s = {s} outside [0, {t}]")));
    }
    Ok(if s <= 0.5 * t { s.powf(gamma) } else { (t - s).powf(gamma) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeSpec {
    alpha: f64,
    beta: f64,
    t: f64,
}

impl EnvelopeSpec {
    pub const DEFAULT_ALPHA: f64 = 0.4;
    pub const DEFAULT_BETA: f64 = 0.6;

    pub fn new(alpha: f64, beta: f64, t: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5 && beta > 0.5 && beta < 1.0) {
            return Err(Error::param(format!(
                "need 0 < alpha < 1/2 < beta < 1, got alpha={alpha}, beta={beta}"
            )));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::param(format!("envelope horizon must be > 0, got {t}")));
        }
        Ok(Self { alpha, beta, t })
    }

    pub fn with_defaults(t: f64) -> Result<Self> {
        Self::new(Self::DEFAULT_ALPHA, Self::DEFAULT_BETA, t)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    fn chord(&self, s: f64) -> f64 {
        s / self.t * m(self.t)
    }
}

/// Upper edge of the tube: `(s/t) m(t) - f_{α,t}(s)`.
pub fn entropic_envelope(spec: &EnvelopeSpec, s: f64) -> Result<f64> {
    Ok(spec.chord(s) - f_gamma(spec.alpha, spec.t, s)?)
}

/// Lower edge of the tube: `(s/t) m(t) - f_{β,t}(s)`.
pub fn lower_envelope(spec: &EnvelopeSpec, s: f64) -> Result<f64> {
    Ok(spec.chord(s) - f_gamma(spec.beta, spec.t, s)?)
}

/// `(s, F_alpha, F_beta)` on `n + 1` evenly spaced times in `[0, t]`.
pub fn envelope_table(spec: &EnvelopeSpec, n: usize) -> Result<Table> {
    if n == 0 {
        return Err(Error::param("envelope table needs n >= 1"));
    }
    let mut table = Table::new("envelopes", &["s", "F_alpha", "F_beta"]).with_meta(vec![
        ("alpha".into(), spec.alpha.to_string()),
        ("beta".into(), spec.beta.to_string()),
        ("t".into(), spec.t.to_string()),
    ]);
    for i in 0..=n {
        let s = (spec.t * i as f64 / n as f64).min(spec.t);
        table.push(vec![s, entropic_envelope(spec, s)?, lower_envelope(spec, s)?]);
    }
    Ok(table)
}

/// Whether a checkpointed path stays between the envelopes at every checkpoint
/// strictly inside `(r, t - r)`.
///
/// `path` holds `(time, position)` pairs in time order; it must reach back to
/// time `r` and forward to `t - r`.
pub fn is_localized(path: &[(f64, f64)], spec: &EnvelopeSpec, r: f64) -> Result<bool> {
    let t = spec.t;
    if !(r >= 0.0 && 2.0 * r < t) {
        return Err(Error::param(format!("need 0 <= r < t/2, got r={r}, t={t}")));
    }
    let (lo, hi) = (r, t - r);
    let covered = match (path.first(), path.last()) {
        (Some(a), Some(b)) => a.0 <= lo + TIME_TOL && b.0 >= hi - TIME_TOL,
        _ => false,
    };
    if !covered {
        return Err(Error::Data(format!("path does not cover the interval ({lo}, {hi})")));
    }
    for &(s, x) in path {
        if s <= lo + TIME_TOL || s >= hi - TIME_TOL {
            continue;
        }
        if !in_tube(spec, s, x)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `F_β(s) <= x <= F_α(s)`.
pub fn in_tube(spec: &EnvelopeSpec, s: f64, x: f64) -> Result<bool> {
    Ok(x <= entropic_envelope(spec, s)? && x >= lower_envelope(spec, s)?)
}

fn particle_localized(
    pop: &Population,
    p: &Particle,
    spec: &EnvelopeSpec,
    r: f64,
) -> Result<bool> {
    is_localized(&pop.checkpoints(p), spec, r)
}

/// Outcome of [`localized_max`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LocalizedMax {
    /// `max x_k(t) - m(t)` over localized particles.
    Value(f64),
    /// No particle is localized.
    Empty,
}

impl LocalizedMax {
    pub fn value(self) -> Option<f64> {
        match self {
            LocalizedMax::Value(v) => Some(v),
            LocalizedMax::Empty => None,
        }
    }

    /// `M_loc <= level`, counting an empty localized set as `-inf`.
    pub fn at_most(self, level: f64) -> bool {
        self.value().map_or(true, |v| v <= level)
    }
}

/// Maximum over particles localized in the time-`spec.t` tube on `(r, t - r)`.
///
/// The population must be at time `spec.t` and record paths. Particles are
/// examined from the top down, so typically only a handful of paths are read.
pub fn localized_max(pop: &Population, spec: &EnvelopeSpec, r: f64) -> Result<LocalizedMax> {
    if pop.is_empty() {
        return Err(Error::State("localized maximum of an empty population".into()));
    }
    check_paths(pop, spec)?;
    let mut order: Vec<&Particle> = pop.particles().iter().collect();
    order.sort_by(|a, b| b.position.total_cmp(&a.position));
    for p in order {
        if particle_localized(pop, p, spec, r)? {
            return Ok(LocalizedMax::Value(p.position - m(spec.t)));
        }
    }
    Ok(LocalizedMax::Empty)
}

fn check_paths(pop: &Population, spec: &EnvelopeSpec) -> Result<()> {
    if !pop.records_paths() {
        return Err(Error::Data("population does not record paths".into()));
    }
    if (pop.time() - spec.t).abs() > TIME_TOL * spec.t.max(1.0) {
        return Err(Error::param(format!(
            "population is at t={} but the tube is for t={}",
            pop.time(),
            spec.t
        )));
    }
    Ok(())
}

/// Per `r`: whether some particle with `x_k(t) - m(t)` in `[d, D]` is not
/// localized, and whether the leader is in `[d, D]` but not localized.
pub fn window_nonlocalization(
    pop: &Population,
    spec: &EnvelopeSpec,
    rs: &[f64],
    window: (f64, f64),
) -> Result<Vec<(bool, bool)>> {
    check_paths(pop, spec)?;
    let (d, big_d) = window;
    let centre = m(spec.t);
    let lead = pop
        .particles()
        .iter()
        .max_by(|a, b| a.position.total_cmp(&b.position))
        .ok_or_else(|| Error::State("empty population".into()))?;
    let mut out = vec![(false, false); rs.len()];
    for p in pop.particles() {
        let rel = p.position - centre;
        if rel < d || rel > big_d {
            continue;
        }
        let path = pop.checkpoints(p);
        let is_lead = p.id == lead.id;
        for (j, &r) in rs.iter().enumerate() {
            if !is_localized(&path, spec, r)? {
                out[j].0 = true;
                out[j].1 |= is_lead;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeSchedule {
    pub delta: f64,
    pub horizon: f64,
    pub r_t: f64,
    pub big_r_t: f64,
}

/// `r_T = (20 ln T)^{1/δ}`, `R_T = 40 r_T`; infeasible unless `R_T < T`.
pub fn tube_schedule(horizon: f64, delta: f64) -> Result<TubeSchedule> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::param(format!("delta must be > 0, got {delta}")));
    }
    // ln T >= 1, with T = e itself accepted
    if !(horizon.is_finite() && horizon.ln() >= 1.0 - 1e-12) {
        return Err(Error::param(format!("schedule needs T >= e, got {horizon}")));
    }
    let r_t = (20.0 * horizon.ln()).powf(1.0 / delta);
    let big_r_t = 40.0 * r_t;
    if big_r_t >= horizon {
        return Err(Error::InfeasibleSchedule {
            big_r: big_r_t,
            horizon,
        });
    }
    Ok(TubeSchedule {
        delta,
        horizon,
        r_t,
        big_r_t,
    })
}

/// A bound value together with whether the lemma asserts it at these inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    pub asserted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailBoundParams {
    c: f64,
    gamma_r: f64,
    r: f64,
}

impl TailBoundParams {
    pub fn new(c: f64, gamma_r: f64, r: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::param(format!("C must be > 0, got {c}")));
        }
        if !(gamma_r >= 1.0 && gamma_r.is_finite()) {
            return Err(Error::param(format!("gamma(r) must be >= 1, got {gamma_r}")));
        }
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::param(format!("r must be >= 0, got {r}")));
        }
        Ok(Self { c, gamma_r, r })
    }
}

fn check_x(x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::param(format!("X must be > 0, got {x}")));
    }
    Ok(())
}

/// `C γ X e^{-√2 X}`; asserted when `X > 8r`.
pub fn tail_bound_upper(x: f64, params: &TailBoundParams) -> Result<BoundValue> {
    check_x(x)?;
    Ok(BoundValue {
        value: params.c * params.gamma_r * x * (-SQRT_2 * x).exp(),
        asserted: x > 8.0 * params.r,
    })
}

/// `C γ^{-1} X e^{-√2 X} (1 - X/(t-r))`, or 0 unasserted once the factor vanishes.
pub fn tail_bound_lower(x: f64, t: f64, params: &TailBoundParams) -> Result<BoundValue> {
    check_x(x)?;
    if !(t > params.r && t.is_finite()) {
        return Err(Error::param(format!("need t > r, got t={t}, r={}", params.r)));
    }
    let frac = x / (t - params.r);
    if frac >= 1.0 {
        return Ok(BoundValue {
            value: 0.0,
            asserted: false,
        });
    }
    Ok(BoundValue {
        value: params.c / params.gamma_r * x * (-SQRT_2 * x).exp() * (1.0 - frac),
        asserted: x > 8.0 * params.r && t > 8.0 * params.r,
    })
}

/// `γ (y+1)^2 e^{-√2 y}`; asserted for `0 <= y <= √t`.
pub fn simple_tail_bound(y: f64, t: f64, gamma: f64) -> Result<BoundValue> {
    if !(t >= 2.0 && t.is_finite()) {
        return Err(Error::param(format!("simple tail bound needs t >= 2, got {t}")));
    }
    if !(gamma > 0.0 && gamma.is_finite() && y.is_finite()) {
        return Err(Error::param(format!("need finite y and gamma > 0, got y={y}, gamma={gamma}")));
    }
    Ok(BoundValue {
        value: gamma * (y + 1.0).powi(2) * (-SQRT_2 * y).exp(),
        asserted: (0.0..=t.sqrt()).contains(&y),
    })
}

/// Smallest `γ` with `P̂ <= γ (y+1)^2 e^{-√2 y}` at every tabulated `y` in the
/// lemma's domain.
pub fn fit_simple_gamma(tail: &Table, t: f64) -> Result<f64> {
    let (xs, ps) = tail_columns(tail)?;
    let mut g: f64 = 0.0;
    for (&y, &p) in xs.iter().zip(&ps) {
        let b = simple_tail_bound(y, t, 1.0)?;
        if b.asserted {
            g = g.max(p / b.value);
        }
    }
    Ok(g)
}

/// Recentred maxima `M(t)` of independent replicas, with the summed pruning totals.
pub fn sample_max(
    t: f64,
    replicas: usize,
    law: &OffspringLaw,
    prune: &PruneConfig,
    checkpoint_step: f64,
    stream: &mut RandomStream,
) -> Result<(Vec<f64>, PruneReport)> {
    let key = stream.next_u64();
    let runs = run_replicas(key, "max", replicas, |_, s| {
        let mut pop = Population::new(checkpoint_step, s)?;
        pop.advance(t, law, prune, s)?;
        Ok((max_displacement(&pop)?, pop.prune_report()))
    })?;
    let report = runs.iter().map(|r| r.1).sum();
    Ok((runs.into_iter().map(|r| r.0).collect(), report))
}

/// `(x, p_hat, ci_lo, ci_hi)` from samples of `M(t)`; 95% Wilson intervals.
pub fn tail_table(samples: &[f64], x_grid: &[f64], t: f64) -> Result<Table> {
    if samples.is_empty() {
        return Err(Error::param("tail table needs samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut table = Table::new("tails", &["x", "p_hat", "ci_lo", "ci_hi"]).with_meta(vec![
        ("t".into(), t.to_string()),
        ("replicas".into(), n.to_string()),
    ]);
    for &x in x_grid {
        let hits = n - sorted.partition_point(|&v| v < x);
        let (lo, hi) = wilson_interval(hits, n);
        table.push(vec![x, hits as f64 / n as f64, lo, hi]);
    }
    Ok(table)
}

/// Empirical `P[M(t) >= x]` on `x_grid` from `replicas` simulations.
#[allow(clippy::too_many_arguments)]
pub fn tail_estimate(
    t: f64,
    x_grid: &[f64],
    replicas: usize,
    law: &OffspringLaw,
    prune: &PruneConfig,
    checkpoint_step: f64,
    stream: &mut RandomStream,
) -> Result<(Table, PruneReport)> {
    if replicas < 1000 {
        return Err(Error::param(format!("tail estimate needs >= 1000 replicas, got {replicas}")));
    }
    let (samples, report) = sample_max(t, replicas, law, prune, checkpoint_step, stream)?;
    Ok((tail_table(&samples, x_grid, t)?, report))
}

fn tail_columns(tail: &Table) -> Result<(Vec<f64>, Vec<f64>)> {
    match (tail.column("x"), tail.column("p_hat")) {
        (Some(x), Some(p)) => Ok((x, p)),
        _ => Err(Error::Data("table lacks x / p_hat columns".into())),
    }
}

/// Regression of `ln P̂` on `ln x - √2 x` over `[lo, hi]`; the lemma's form
/// predicts slope 1.
pub fn tail_slope(tail: &Table, lo: f64, hi: f64) -> Result<LinearFit> {
    let (xs, ps) = tail_columns(tail)?;
    let (mut reg, mut y) = (Vec::new(), Vec::new());
    for (&x, &p) in xs.iter().zip(&ps) {
        if x >= lo && x <= hi {
            if !(p > 0.0 && x > 0.0) {
                return Err(Error::Data(format!("no exceedances at x={x}")));
            }
            reg.push(x.ln() - SQRT_2 * x);
            y.push(p.ln());
        }
    }
    linear_fit(&reg, &y).ok_or_else(|| Error::Data(format!("fewer than 2 points in [{lo}, {hi}]")))
}

/// Settings for the nonlocalization study.
#[derive(Clone, Debug)]
pub struct LocalizationStudy {
    pub spec: EnvelopeSpec,
    pub rs: Vec<f64>,
    /// `[d, D]`: only leaders with `M(t)` in this window count.
    pub window: (f64, f64),
    pub replicas: usize,
    pub checkpoint_step: f64,
}

/// `(r, nonlocalization_rate, ci_lo, ci_hi, leader_rate)`.
///
/// The rate is the frequency of some particle ending in `m(t) + [d, D]` with a
/// path that leaves the tube on `(r, t - r)`; `leader_rate` restricts this to
/// the leader. The same replicas serve every `r`.
pub fn nonlocalization_rates(
    study: &LocalizationStudy,
    law: &OffspringLaw,
    prune: &PruneConfig,
    stream: &mut RandomStream,
) -> Result<(Table, PruneReport)> {
    let (d, big_d) = study.window;
    if !(d < big_d) {
        return Err(Error::param(format!("window needs d < D, got [{d}, {big_d}]")));
    }
    if study.replicas == 0 || study.rs.is_empty() {
        return Err(Error::param("need replicas and at least one r"));
    }
    let t = study.spec.t;
    let key = stream.next_u64();
    let outcomes = run_replicas(key, "localize", study.replicas, |_, s| {
        let mut pop = Population::new(study.checkpoint_step, s)?.with_paths();
        pop.advance(t, law, prune, s)?;
        Ok((window_nonlocalization(&pop, &study.spec, &study.rs, study.window)?, pop.prune_report()))
    })?;
    let report = outcomes.iter().map(|o| o.1).sum();
    let outcomes: Vec<_> = outcomes.into_iter().map(|o| o.0).collect();
    let mut table = Table::new(
        "nonlocalization",
        &["r", "nonlocalization_rate", "ci_lo", "ci_hi", "leader_rate"],
    )
        .with_meta(vec![
            ("t".into(), t.to_string()),
            ("alpha".into(), study.spec.alpha.to_string()),
            ("beta".into(), study.spec.beta.to_string()),
            ("d".into(), d.to_string()),
            ("D".into(), big_d.to_string()),
            ("replicas".into(), study.replicas.to_string()),
        ]);
    for (j, &r) in study.rs.iter().enumerate() {
        let n = study.replicas as f64;
        let hits = outcomes.iter().filter(|o| o[j].0).count();
        let lead = outcomes.iter().filter(|o| o[j].1).count();
        let (lo, hi) = wilson_interval(hits, study.replicas);
        table.push(vec![r, hits as f64 / n, lo, hi, lead as f64 / n]);
    }
    Ok((table, report))
}
