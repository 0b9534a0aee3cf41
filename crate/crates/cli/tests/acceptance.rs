//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not asserted, unless `BBM_ACCEPTANCE_STRICT=1`.
//! `BBM_ACCEPTANCE_ONLY=2,7` runs a subset. The full run takes about 40
//! minutes on one core; most of it is criteria 4 and 5.

use std::f64::consts::SQRT_2;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use bbm_core::bridge::bridge_below_line_mc;
use bbm_core::correlation::{
    correlation_profile, direct_pair_count, sawyer_pair_expectation, CorrelationConfig,
    PairCondition, SawyerConfig,
};
use bbm_core::frontier::{conditional_max_cdf, ergodic_run, uniform_grid};
use bbm_core::kpp::{crosscheck_mc_vs_pde, estimate_c, fit_front, wave_ode_residual, wave_profile};
use bbm_core::localization::{
    nonlocalization_rates, sample_max, tail_slope, tail_table, LocalizationStudy,
};
use bbm_core::stats::median;
use bbm_core::{
    bridge_below_line_bound, front_centering, gumbel_predict, kpp_solve, martingale_snapshot,
    max_displacement, run_replicas, EmpiricalCdf, EnvelopeSpec, Grid1D, GumbelParams,
    OffspringLaw, Population, PruneConfig, RandomStream, Result,
};

const ORACLE_DT: f64 = 0.00025;
const BIG_CAP: usize = 25_000_000;

struct Verdict {
    pass: bool,
    detail: String,
    /// Extra lines that are not part of the criterion.
    notes: Vec<String>,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail, notes: Vec::new() }
    }

    fn note(mut self, line: String) -> Self {
        self.notes.push(line);
        self
    }
}

fn law() -> OffspringLaw {
    OffspringLaw::binary()
}

fn prune(w: f64) -> PruneConfig {
    PruneConfig::new(w, BIG_CAP).expect("valid window")
}

/// `C` from the t = 40 profile, fitted over [4, 7].
fn c_hat() -> Result<f64> {
    let sol = kpp_solve(&law(), 40.0, Grid1D::with_steps(0.05, ORACLE_DT)?)?;
    Ok(estimate_c(&wave_profile(&sol)?, 4.0, 7.0)?.c_hat)
}

fn c1_front_law() -> Result<Verdict> {
    let start = Instant::now();
    let sol = kpp_solve(&law(), 40.0, Grid1D::with_steps(0.05, Grid1D::DEFAULT_DT)?)?;
    let fit = fit_front(&sol.front_history, 20.0, 40.0)?;
    let secs = start.elapsed().as_secs_f64();
    let speed_err = (fit.speed / SQRT_2 - 1.0).abs();
    let target = -3.0 / (2.0 * SQRT_2);
    let log_err = (fit.log_coefficient_fixed_speed / target - 1.0).abs();
    let pass = speed_err < 0.005 && log_err < 0.5 && secs < 300.0;
    Ok(Verdict::new(
        pass,
        format!(
            "speed {:.6} (rel err {:.3}% < 0.5%), log coefficient {:.4} (rel err {:.1}% < 50%), solve {secs:.1}s < 300s",
            fit.speed,
            100.0 * speed_err,
            fit.log_coefficient_fixed_speed,
            100.0 * log_err
        ),
    )
    .note(format!(
        "free three-parameter fit: speed {:.5}, log coefficient {:.4}",
        fit.speed, fit.log_coefficient
    )))
}

fn mc_vs_pde(w: f64, step: f64, reps: usize, seed: u64) -> Result<(f64, f64)> {
    let start = Instant::now();
    let ms = run_replicas(seed, "mc-pde", reps, |_, s| {
        let mut pop = Population::new(step, s)?;
        pop.advance(30.0, &law(), &prune(w), s)?;
        max_displacement(&pop)
    })?;
    let secs = start.elapsed().as_secs_f64();
    let sol = kpp_solve(&law(), 30.0, Grid1D::with_steps(0.05, ORACLE_DT)?)?;
    let cdf = EmpiricalCdf::from_samples(&ms, uniform_grid(-8.0, 6.0, 281))?;
    Ok((crosscheck_mc_vs_pde(&cdf, 30.0, &law(), &sol)?, secs))
}

fn c2_mc_pde() -> Result<Verdict> {
    const REPS: usize = 5000;
    const BUDGET: f64 = 900.0;
    // time a few replicas first; the full run only makes sense inside the budget
    let pilot_reps = 3;
    let start = Instant::now();
    run_replicas(2, "pilot", pilot_reps, |_, s| {
        let mut pop = Population::new(0.1, s)?;
        pop.advance(30.0, &law(), &prune(12.0), s)?;
        Ok(pop.len())
    })?;
    let per_rep = start.elapsed().as_secs_f64() / pilot_reps as f64;
    let projected = per_rep * REPS as f64;
    let v = if projected < BUDGET {
        let (d, secs) = mc_vs_pde(12.0, 0.1, REPS, 2)?;
        Verdict::new(
            d < 0.05 && secs < BUDGET,
            format!("w=12: sup distance {d:.4} < 0.05, runtime {secs:.0}s < {BUDGET}s"),
        )
    } else {
        Verdict::new(
            false,
            format!(
                "w=12: {per_rep:.1}s per replica, projected {:.1}h for {REPS} replicas > 15 min; not run",
                projected / 3600.0
            ),
        )
    };
    let (d7, secs7) = mc_vs_pde(7.0, 0.5, REPS, 2)?;
    Ok(v.note(format!(
        "supplementary, not the criterion: w=7, step 0.5, {REPS} replicas: sup distance {d7:.4}, {secs7:.0}s"
    )))
}

fn c3_wave_ode() -> Result<Verdict> {
    let sup = |dx: f64| -> Result<f64> {
        let sol = kpp_solve(&law(), 40.0, Grid1D::with_steps(dx, ORACLE_DT)?)?;
        Ok(wave_ode_residual(&wave_profile(&sol)?)?.sup_interior)
    };
    let (coarse, fine) = (sup(0.05)?, sup(0.025)?);
    let ratio = coarse / fine;
    Ok(Verdict::new(
        coarse < 0.01 && ratio >= 2.0,
        format!("sup residual {coarse:.5} < 0.01 at dx=0.05; {fine:.5} at dx=0.025, reduction {ratio:.2}x (need >= 2x)"),
    ))
}

fn c4_martingales() -> Result<Verdict> {
    let (w, step, reps) = (10.0, 0.5, 500);
    let runs = run_replicas(4, "martingales", reps, |_, s| {
        let mut pop = Population::new(step, s)?;
        let mut out = Vec::with_capacity(4);
        for t in [5.0, 15.0, 20.0, 30.0] {
            pop.advance(t, &law(), &prune(w), s)?;
            out.push(martingale_snapshot(&pop)?);
        }
        Ok(out)
    })?;
    let ratio = median(&runs.iter().map(|o| o[1].y / o[0].y).collect::<Vec<_>>());
    let y15 = median(&runs.iter().map(|o| o[1].y).collect::<Vec<_>>());
    let dz = median(&runs.iter().map(|o| ((o[3].z - o[2].z) / o[2].z).abs()).collect::<Vec<_>>());
    Ok(Verdict::new(
        ratio < 0.5 && y15 < 0.1 && dz < 0.25,
        format!(
            "median Y(15)/Y(5) {ratio:.4} < 0.5, median Y(15) {y15:.4} < 0.1, median |dZ|/Z(20) {dz:.4} < 0.25 (w={w}, step {step}, {reps} replicas)"
        ),
    ))
}

fn c5_tail_form() -> Result<Verdict> {
    let (w, step, reps) = (6.0, 0.5, 100_000);
    let (samples, report) = sample_max(30.0, reps, &law(), &prune(w), step, &mut RandomStream::new(5))?;
    let grid: Vec<f64> = (0..=25).map(|i| 1.5 + 0.1 * i as f64).collect();
    let fit = tail_slope(&tail_table(&samples, &grid, 30.0)?, 1.5, 4.0)?;
    Ok(Verdict::new(
        (fit.slope - 1.0).abs() <= 0.1,
        format!(
            "slope {:.4} ± {:.4} within 1 ± 0.1 ({reps} replicas, w={w}, step {step}, {:.0} particles pruned per replica)",
            fit.slope,
            fit.slope_std_error,
            report.pruned_count as f64 / reps as f64
        ),
    ))
}

fn c6_ergodic() -> Result<Verdict> {
    let c = c_hat()?;
    let run = ergodic_run(60.0, 0.2, 10.0, &law(), &prune(12.0), 0.1, &mut RandomStream::new(2))?;
    let d = run.sup_distance(c, uniform_grid(-10.0, 8.0, 361))?;
    Ok(Verdict::new(
        d < 0.15,
        format!("sup |F_T - G| {d:.4} < 0.15 (T=60, eps=0.2, R=10, C_hat {c:.4}, Z(R) {:.4}, w=12)", run.at_r.z),
    ))
}

fn c7_conditional() -> Result<Verdict> {
    let c = c_hat()?;
    let (segments, conts, w, step) = (20, 200, 7.0, 0.5);
    let grid = uniform_grid(-12.0, 8.0, 401);
    let mut stream = RandomStream::new(7);
    let mut ds = Vec::with_capacity(segments);
    for i in 0..segments {
        let mut s = RandomStream::derive(7, i as u64, "early");
        let mut early = Population::new(step, &mut s)?;
        early.advance(10.0, &law(), &PruneConfig::disabled().with_cap(BIG_CAP), &mut s)?;
        let params = GumbelParams::new(c, martingale_snapshot(&early)?.z)?;
        let cdf = conditional_max_cdf(&early, 40.0, grid.clone(), conts, &law(), &prune(w), &mut stream)?;
        ds.push(cdf.sup_distance_to(|x| gumbel_predict(&params, x)));
    }
    let mean = ds.iter().sum::<f64>() / segments as f64;
    let (lo, hi) = ds.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));
    Ok(Verdict::new(
        mean < 0.1,
        format!(
            "mean sup distance {mean:.4} < 0.1 over {segments} segments (range {lo:.3}..{hi:.3}; {conts} continuations each, Kolmogorov noise ~{:.3})",
            0.87 / (conts as f64).sqrt()
        ),
    ))
}

fn c8_bridge_bound() -> Result<Verdict> {
    let mut rng = RandomStream::new(8);
    let (mut dominated, mut below_one) = (0, 0);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..20u64 {
        let z1 = 2.5 * rng.uniform();
        let z2 = 2.5 * rng.uniform();
        let r1 = 1.5 * rng.uniform();
        let r2 = 1.5 * rng.uniform();
        let t = r1 + r2 + 2.0 + 38.0 * rng.uniform();
        let bound = bridge_below_line_bound(z1, z2, r1, r2, t)?;
        let mut s = RandomStream::derive(8, k, "bridge");
        let (p, se) = bridge_below_line_mc(z1, z2, r1, r2, t, 400, 100_000, &mut s)?;
        if p <= bound + 3.0 * se {
            dominated += 1;
        }
        if bound < 1.0 {
            below_one += 1;
        }
        worst = worst.max((p - bound) / se.max(1e-12));
    }
    Ok(Verdict::new(
        dominated == 20 && below_one >= 5,
        format!("{dominated}/20 sets with p_mc <= bound + 3se (max excess {worst:.1} se), {below_one} sets with bound < 1 (need >= 5)"),
    ))
}

fn c9_localization() -> Result<Verdict> {
    let study = LocalizationStudy {
        spec: EnvelopeSpec::new(0.4, 0.6, 30.0)?,
        rs: vec![2.0, 4.0, 8.0],
        window: (-1.0, 2.0),
        replicas: 2000,
        checkpoint_step: 0.1,
    };
    let (table, _) = nonlocalization_rates(&study, &law(), &prune(6.0), &mut RandomStream::new(9))?;
    let rates = table.column("nonlocalization_rate").expect("rate column");
    let hi = table.column("ci_hi").expect("ci column");
    let lead = table.column("leader_rate").expect("leader column");
    let monotone = rates.windows(2).all(|w| w[1] <= w[0]);
    let last = rates[rates.len() - 1];
    Ok(Verdict::new(
        monotone && last < 0.05,
        format!(
            "rates at r=2,4,8: {:.4} {:.4} {:.4} (nonincreasing: {monotone}); rate at r=8 {last:.4} < 0.05 (95% upper {:.4}); w=6, 2000 replicas",
            rates[0], rates[1], rates[2], hi[2]
        ),
    )
    .note(format!("leader-only rates: {:.4} {:.4} {:.4}", lead[0], lead[1], lead[2])))
}

fn c10_correlation() -> Result<Verdict> {
    let mut cfg = CorrelationConfig::new(40.0, 0.3, 10.0);
    cfg.r_tube = 0.25;
    cfg.outer_replicas = 40;
    cfg.inner_continuations = 50;
    let (s, near, far) = (12.0, 12.2, 12.0 + 19.2);
    assert!(far - s >= cfg.separation());
    let p = prune(6.0);
    let prof = correlation_profile(&cfg, s, &[near, far], &law(), &p, &mut RandomStream::new(10))?;
    let (a, b) = (prof.localized[0], prof.localized[1]);
    // upper confidence bound at the far separation against a lower one near
    let far_hi = b.estimate.abs() + 2.0 * b.std_error;
    let near_lo = a.estimate.abs() - 2.0 * a.std_error;
    let v = Verdict::new(
        far_hi < 0.2 * near_lo,
        format!(
            "C(0.2) = {:.5} ± {:.5}, C({:.1}) = {:.5} ± {:.5}; need |C_far| + 2se < 0.2 (|C_near| - 2se); mean P[M_loc <= D] {:.3}",
            a.estimate, a.std_error, far - s, b.estimate, b.std_error, prof.mean_prob_localized
        ),
    );
    let mut plain_cfg = cfg.clone();
    plain_cfg.track_localized = false;
    plain_cfg.window = (-3.0, -1.0);
    let plain = correlation_profile(&plain_cfg, s, &[near, far], &law(), &p, &mut RandomStream::new(10))?;
    let (pa, pb) = (plain.plain[0], plain.plain[1]);
    Ok(v.note(format!(
        "supplementary, plain maximum at D=-1: C(0.2) = {:.5} ± {:.5}, C({:.1}) = {:.5} ± {:.5}",
        pa.estimate, pa.std_error, far - s, pb.estimate, pb.std_error
    )))
}

fn c11_sawyer() -> Result<Verdict> {
    let law = law();
    let cfg = SawyerConfig { rel_tol: 1e-6, max_doublings: 10, ..SawyerConfig::default() };
    let mut stream = RandomStream::new(11);
    let mut parts = Vec::new();
    let mut pass = true;
    let mut stated = Vec::new();
    for t in [1.0f64, 2.0] {
        let v = sawyer_pair_expectation(t, t, &PairCondition::none(), &PairCondition::none(), &law, &cfg, &mut stream)?;
        // ordered pairs: E n(n-1) = 2 (e^{2t} - e^t) for binary branching
        let exact = 2.0 * ((2.0 * t).exp() - t.exp());
        let err = (v / exact - 1.0).abs();
        pass &= err < 0.01;
        parts.push(format!("t={t}: {v:.4} vs E[n^2-n] {exact:.4} (rel err {:.1e})", err));
        stated.push(format!("t={t}: ratio to e^{{2t}}-e^t = {:.4}", v / ((2.0 * t).exp() - t.exp())));
    }
    let (mc, mc_se) = direct_pair_count(1.0, f64::NEG_INFINITY, f64::NEG_INFINITY, &law, 100_000, &mut stream)?;
    let t = 3.0;
    let theta = front_centering(t)? - 1.0;
    let cond = PairCondition::above(theta);
    let cfg3 = SawyerConfig { rel_tol: 1e-4, ..cfg };
    let v = sawyer_pair_expectation(t, t, &cond, &cond, &law, &cfg3, &mut stream)?;
    let (d, se) = direct_pair_count(t, theta, theta, &law, 100_000, &mut stream)?;
    let z = (v - d).abs() / se;
    pass &= z <= 3.0;
    parts.push(format!("t=3, threshold m(3)-1: formula {v:.4} vs direct {d:.4} ± {se:.4} ({z:.2} se <= 3)"));
    Ok(Verdict::new(pass, parts.join("; "))
        .note(format!("direct E[n^2-n] at t=1: {mc:.4} ± {mc_se:.4}"))
        .note(format!("against e^{{2t}}-e^t instead: {}", stated.join(", "))))
}

const CLI_CONFIG: &str = r#"
version = 1
experiment = "determinism"
[simulate]
horizon = 4.0
replicas = 300
[ergodic]
horizon = 20.0
epsilon = 0.5
big_r = 4.0
[tails]
horizon = 8.0
replicas = 2000
x_range = [0.0, 3.0]
fit = [0.5, 2.5]
[kpp]
horizon = 30.0
fit = [15.0, 30.0]
[corr]
horizon = 16.0
epsilon = 0.5
big_r = 4.0
r_tube = 0.1
s = 8.0
s_primes = [8.2, 15.0]
outer = 4
inner = 50
[localize]
horizon = 10.0
rs = [1.0, 2.0, 4.0]
replicas = 60
"#;

fn csv_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let io = |e: std::io::Error| bbm_core::Error::Io { path: dir.to_path_buf(), source: e };
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).map_err(io)? {
        let p = e.map_err(io)?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            v.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(io)?));
        }
    }
    v.sort();
    Ok(v)
}

fn c12_determinism() -> Result<Verdict> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, CLI_CONFIG).expect("write config");
    let mut bad = Vec::new();
    let mut files = 0;
    for cmd in ["simulate", "ergodic", "tails", "kpp", "corr", "localize"] {
        let mut outs = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{cmd}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_bbm"))
                .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "12", "--quiet"])
                .env_remove("BBM_SEED")
                .status()
                .expect("bbm runs");
            if !status.success() {
                bad.push(format!("{cmd} exited with {status}"));
            }
            outs.push(csv_bytes(&out)?);
        }
        files += outs[0].len();
        if outs[0].is_empty() || outs[0] != outs[1] {
            bad.push(format!("{cmd} outputs differ"));
        }
    }
    Ok(Verdict::new(
        bad.is_empty(),
        if bad.is_empty() {
            format!("6 subcommands, {files} CSV files byte-identical across reruns")
        } else {
            bad.join("; ")
        },
    ))
}

type Criterion = (u32, &'static str, fn() -> Result<Verdict>);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "PDE front law", c1_front_law),
        (2, "MC-PDE agreement", c2_mc_pde),
        (3, "wave ODE consistency", c3_wave_ode),
        (4, "martingale limits", c4_martingales),
        (5, "tail functional form", c5_tail_form),
        (6, "ergodic check", c6_ergodic),
        (7, "conditional CDF", c7_conditional),
        (8, "bridge bound dominance", c8_bridge_bound),
        (9, "localization", c9_localization),
        (10, "correlation decay", c10_correlation),
        (11, "pair-count formula", c11_sawyer),
        (12, "determinism", c12_determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("BBM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("BBM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = Vec::new();
    let start = Instant::now();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let (pass, detail, notes) = match f() {
            Ok(v) => (v.pass, v.detail, v.notes),
            Err(e) => (false, format!("error: {e}"), Vec::new()),
        };
        let secs = t0.elapsed().as_secs_f64();
        println!("criterion {id:>2} {} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
        for n in notes {
            println!("             note: {n}");
        }
        std::io::stdout().flush().ok();
        if !pass {
            failed.push(id);
        }
    }
    println!(
        "acceptance: {} failed {:?}, total {:.0}s",
        failed.len(),
        failed,
        start.elapsed().as_secs_f64()
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
