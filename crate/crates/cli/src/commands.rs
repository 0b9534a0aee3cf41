use std::path::Path;
use std::time::Instant;

use bbm_core::correlation::correlation_profile;
use bbm_core::frontier::{ergodic_run, ergodic_table, uniform_grid};
use bbm_core::kpp::{
    estimate_c, fit_front, front_history_table, profile_table, residual_table, wave_ode_residual,
    wave_profile,
};
use bbm_core::localization::{
    envelope_table, nonlocalization_rates, sample_max, tail_slope, tail_table, EnvelopeSpec,
    LocalizationStudy,
};
use bbm_core::stats::{mean, median};
use bbm_core::{
    dump, kpp_solve, martingale_snapshot, max_displacement, run_replicas, Grid1D, GumbelParams,
    Population, PruneReport, RandomStream, Result, Table,
};

use crate::config::ExperimentConfig;

/// Everything a subcommand produces besides side files.
#[derive(Debug, Default)]
pub struct Outcome {
    /// `(file name, table)`, written in this order.
    pub tables: Vec<(String, Table)>,
    pub stages: Vec<(String, f64)>,
    pub prune: PruneReport,
    /// Headline numbers, printed and copied into the manifest.
    pub summary: Vec<(String, f64)>,
    /// Extra files written directly by the command.
    pub extra_files: Vec<String>,
}

impl Outcome {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let v = f()?;
        self.stages.push((name.to_string(), start.elapsed().as_secs_f64()));
        Ok(v)
    }

    fn note(&mut self, key: &str, value: f64) {
        self.summary.push((key.to_string(), value));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Ergodic,
    Tails,
    Kpp,
    Corr,
    Localize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ergodic => "ergodic",
            Command::Tails => "tails",
            Command::Kpp => "kpp",
            Command::Corr => "corr",
            Command::Localize => "localize",
        }
    }
}

/// Runs `cmd`; `seed` is already resolved. Side files go to `out`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Outcome> {
    match cmd {
        Command::Simulate => simulate(cfg, seed, out),
        Command::Ergodic => ergodic(cfg, seed),
        Command::Tails => tails(cfg, seed),
        Command::Kpp => kpp(cfg),
        Command::Corr => corr(cfg, seed),
        Command::Localize => localize(cfg, seed),
    }
}

fn simulate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Outcome> {
    let sc = &cfg.simulate;
    let law = cfg.law()?;
    let prune = cfg.prune()?;
    let mut times = sc.times.clone();
    if times.last().map_or(true, |&t| t < sc.horizon) {
        times.push(sc.horizon);
    }
    let mut o = Outcome::default();
    let dump_path = out.join("population.bbmp");
    let runs = o.stage("simulate", || {
        run_replicas(seed, "simulate", sc.replicas, |i, s| {
            let mut pop = Population::new(cfg.checkpoint_step, s)?;
            let mut snaps = Vec::with_capacity(times.len());
            for &t in &times {
                pop.advance(t, &law, &prune, s)?;
                snaps.push((martingale_snapshot(&pop)?, pop.len()));
            }
            if i == 0 && sc.dump {
                dump::save(&pop, &dump_path)?;
            }
            Ok((snaps, max_displacement(&pop)?, pop.prune_report()))
        })
    })?;
    if sc.dump {
        o.extra_files.push("population.bbmp".into());
    }
    let mut mart = Table::new("martingales", &["replica", "t", "Y", "Z", "Z2", "min_y", "particles"]);
    let mut maxima = Table::new("maxima", &["replica", "t", "M"]);
    for (i, (snaps, m, _)) in runs.iter().enumerate() {
        for (snap, n) in snaps {
            mart.push(vec![i as f64, snap.t, snap.y, snap.z, snap.z2, snap.min_y, *n as f64]);
        }
        maxima.push(vec![i as f64, sc.horizon, *m]);
    }
    o.prune = runs.iter().map(|r| r.2).sum();
    let last = |f: fn(&bbm_core::MartingaleSnapshot) -> f64| -> Vec<f64> {
        runs.iter().map(|r| f(&r.0.last().expect("one snapshot").0)).collect()
    };
    o.note("median_Y", median(&last(|s| s.y)));
    o.note("median_Z", median(&last(|s| s.z)));
    o.note("mean_M", mean(&runs.iter().map(|r| r.1).collect::<Vec<_>>()));
    o.tables.push(("martingales.csv".into(), mart));
    o.tables.push(("maxima.csv".into(), maxima));
    Ok(o)
}

/// `C` from the tail of the PDE profile at `pde_horizon`.
fn fitted_c(cfg: &ExperimentConfig, o: &mut Outcome) -> Result<f64> {
    let e = &cfg.ergodic;
    if let Some(c) = e.c_hat {
        return Ok(c);
    }
    let law = cfg.law()?;
    let fit = o.stage("kpp", || {
        let sol = kpp_solve(&law, e.pde_horizon, Grid1D::with_steps(e.pde_dx, e.pde_dt)?)?;
        estimate_c(&wave_profile(&sol)?, e.c_fit[0], e.c_fit[1])
    })?;
    o.note("c_fit_r_squared", fit.r_squared);
    Ok(fit.c_hat)
}

fn ergodic(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome> {
    let e = &cfg.ergodic;
    let law = cfg.law()?;
    let prune = cfg.prune()?;
    let mut o = Outcome::default();
    let c = fitted_c(cfg, &mut o)?;
    let run = o.stage("simulate", || {
        ergodic_run(e.horizon, e.epsilon, e.big_r, &law, &prune, cfg.checkpoint_step, &mut RandomStream::new(seed))
    })?;
    let grid = uniform_grid(e.window[0], e.window[1], e.points);
    let params = GumbelParams::new(c, run.at_r.z)?;
    let cdf = run.cdf(grid)?;
    let sup = cdf.sup_distance_to(|x| bbm_core::gumbel_predict(&params, x));
    let table = ergodic_table(&cdf, &params).with_meta(vec![
        ("T".into(), e.horizon.to_string()),
        ("epsilon".into(), e.epsilon.to_string()),
        ("R".into(), e.big_r.to_string()),
        ("C_hat".into(), c.to_string()),
        ("Z_R".into(), run.at_r.z.to_string()),
    ]);
    let mut path = Table::new("max_path", &["s", "M"]);
    for &(s, m) in &run.m_path {
        path.push(vec![s, m]);
    }
    o.prune = run.prune;
    o.note("C_hat", c);
    o.note("Z_R", run.at_r.z);
    o.note("sup_distance", sup);
    o.tables.push(("ergodic.csv".into(), table));
    o.tables.push(("max_path.csv".into(), path));
    Ok(o)
}

fn tails(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome> {
    let tc = &cfg.tails;
    let law = cfg.law()?;
    let prune = cfg.prune()?;
    let mut o = Outcome::default();
    let (samples, report) = o.stage("simulate", || {
        sample_max(tc.horizon, tc.replicas, &law, &prune, cfg.checkpoint_step, &mut RandomStream::new(seed))
    })?;
    let n = ((tc.x_range[1] - tc.x_range[0]) / tc.x_step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| tc.x_range[0] + i as f64 * tc.x_step).collect();
    let table = tail_table(&samples, &grid, tc.horizon)?;
    let fit = tail_slope(&table, tc.fit[0], tc.fit[1])?;
    let mut fit_table = Table::new("tail_fit", &["x_lo", "x_hi", "slope", "slope_std_error", "intercept", "r_squared"]);
    fit_table.push(vec![tc.fit[0], tc.fit[1], fit.slope, fit.slope_std_error, fit.intercept, fit.r_squared]);
    o.prune = report;
    o.note("slope", fit.slope);
    o.note("slope_std_error", fit.slope_std_error);
    o.tables.push(("tails.csv".into(), table));
    o.tables.push(("tail_fit.csv".into(), fit_table));
    Ok(o)
}

fn kpp(cfg: &ExperimentConfig) -> Result<Outcome> {
    let k = &cfg.kpp;
    let law = cfg.law()?;
    let mut o = Outcome::default();
    let sol = o.stage("solve", || kpp_solve(&law, k.horizon, Grid1D::with_steps(k.dx, k.dt)?))?;
    let profile = wave_profile(&sol)?;
    let front = fit_front(&sol.front_history, k.fit[0], k.fit[1])?;
    o.note("speed", front.speed);
    o.note("log_coefficient", front.log_coefficient);
    o.note("linear_speed", front.linear_speed);
    let mut fit = Table::new(
        "kpp_fit",
        &["t_lo", "t_hi", "speed", "log_coefficient", "intercept", "linear_speed", "log_coefficient_fixed_speed"],
    );
    fit.push(vec![
        k.fit[0],
        k.fit[1],
        front.speed,
        front.log_coefficient,
        front.intercept,
        front.linear_speed,
        front.log_coefficient_fixed_speed,
    ]);
    o.tables.push(("kpp_front.csv".into(), front_history_table(&sol)));
    o.tables.push(("kpp_profile.csv".into(), profile_table(&sol, &profile)));
    o.tables.push(("kpp_fit.csv".into(), fit));
    // the wave equation residual is only defined for binary branching
    if law.is_binary() {
        let res = wave_ode_residual(&profile)?;
        o.note("residual_sup", res.sup_interior);
        o.tables.push(("kpp_residual.csv".into(), residual_table(&sol, &res)));
    }
    let c = estimate_c(&profile, k.c_fit[0], k.c_fit[1])?;
    let mut ct = Table::new("kpp_c", &["x_lo", "x_hi", "c_hat", "r_squared", "free_slope"]);
    ct.push(vec![k.c_fit[0], k.c_fit[1], c.c_hat, c.r_squared, c.free_slope]);
    o.note("C_hat", c.c_hat);
    o.tables.push(("kpp_c.csv".into(), ct));
    Ok(o)
}

fn corr(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome> {
    let c = &cfg.corr;
    let cc = cfg.corr_config()?;
    let law = cfg.law()?;
    let prune = cfg.prune()?;
    let mut o = Outcome::default();
    let prof = o.stage("simulate", || {
        correlation_profile(&cc, c.s, &c.s_primes, &law, &prune, &mut RandomStream::new(seed))
    })?;
    let mut table = Table::new(
        "correlation",
        &["s", "s_prime", "estimate", "std_error", "plain_estimate", "plain_std_error"],
    )
    .with_meta(vec![
        ("T".into(), cc.horizon.to_string()),
        ("epsilon".into(), cc.epsilon.to_string()),
        ("R".into(), cc.big_r.to_string()),
        ("r_tube".into(), cc.r_tube.to_string()),
        ("D".into(), cc.window.1.to_string()),
        ("outer".into(), cc.outer_replicas.to_string()),
        ("inner".into(), cc.inner_continuations.to_string()),
        ("separation".into(), cc.separation().to_string()),
    ]);
    for (l, p) in prof.localized.iter().zip(&prof.plain) {
        table.push(vec![l.s, l.s_prime, l.estimate, l.std_error, p.estimate, p.std_error]);
    }
    o.prune = prof.prune;
    o.note("mean_prob_localized", prof.mean_prob_localized);
    o.note("mean_prob_plain", prof.mean_prob_plain);
    o.tables.push(("correlation.csv".into(), table));
    Ok(o)
}

fn localize(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome> {
    let l = &cfg.localize;
    let law = cfg.law()?;
    let prune = cfg.prune()?;
    let spec = EnvelopeSpec::new(l.alpha, l.beta, l.horizon)?;
    let study = LocalizationStudy {
        spec: spec.clone(),
        rs: l.rs.clone(),
        window: (l.window[0], l.window[1]),
        replicas: l.replicas,
        checkpoint_step: cfg.checkpoint_step,
    };
    let mut o = Outcome::default();
    let (table, report) = o.stage("simulate", || {
        nonlocalization_rates(&study, &law, &prune, &mut RandomStream::new(seed))
    })?;
    let rates = table.column("nonlocalization_rate").unwrap_or_default();
    let monotone = rates.windows(2).all(|w| w[1] <= w[0]);
    o.prune = report;
    o.note("monotone", if monotone { 1.0 } else { 0.0 });
    if let Some(r) = rates.last() {
        o.note("rate_at_largest_r", *r);
    }
    o.tables.push(("nonlocalization.csv".into(), table));
    o.tables.push(("envelopes.csv".into(), envelope_table(&spec, 300)?));
    Ok(o)
}
