use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bbm_cli::config::ExperimentConfig;
use bbm_cli::exit;
use bbm_core::Table;

const SMALL: &str = r#"
version = 1
experiment = "cli-test"

[simulate]
horizon = 3.0
replicas = 200
times = [1.0, 2.0]

[ergodic]
horizon = 20.0
epsilon = 0.5
big_r = 4.0
c_hat = 0.34
points = 57

[tails]
horizon = 6.0
replicas = 1000
x_range = [0.0, 3.0]
fit = [0.5, 2.0]

[kpp]
horizon = 30.0
fit = [15.0, 30.0]

[corr]
horizon = 12.0
epsilon = 0.5
big_r = 3.0
r_tube = 0.1
s = 6.0
s_primes = [6.5, 11.0]
outer = 3
inner = 50
track_localized = false

[localize]
horizon = 8.0
rs = [1.0, 2.0, 3.0]
replicas = 30
"#;

fn bbm(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bbm"));
    cmd.args(args).env_remove("BBM_SEED");
    if let Some(s) = env_seed {
        cmd.env("BBM_SEED", s);
    }
    cmd.output().expect("bbm runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    let o = bbm(&args, None);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn every_subcommand_reruns_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    for cmd in ["simulate", "ergodic", "tails", "kpp", "corr", "localize"] {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        run_ok(cmd, &cfg, &a, &["--seed", "5"]);
        run_ok(cmd, &cfg, &b, &["--seed", "5", "--threads", "1"]);
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        assert!(!fa.is_empty(), "{cmd} wrote no tables");
        assert_eq!(fa, fb, "{cmd} output differs between runs");
        assert_eq!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);
    }
}

#[test]
fn written_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let first = tmp.path().join("first");
    run_ok("tails", &cfg, &first, &["--seed", "17"]);
    let again = tmp.path().join("again");
    // the resolved config carries the seed
    run_ok("tails", &first.join("config.toml"), &again, &[]);
    assert_eq!(csv_files(&first), csv_files(&again));
    assert_eq!(manifest(&first)["config_hash"], manifest(&again)["config_hash"]);
    assert_eq!(manifest(&again)["seed_source"], "config");
}

#[test]
fn different_seeds_differ() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("simulate", &cfg, &a, &["--seed", "1"]);
    run_ok("simulate", &cfg, &b, &["--seed", "2"]);
    assert_ne!(csv_files(&a), csv_files(&b));
    assert_ne!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);
}

#[test]
fn seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let plain = write_config(tmp.path(), "plain.toml", SMALL);
    let seeded = write_config(tmp.path(), "seeded.toml", &SMALL.replace("version = 1", "version = 1\nseed = 11"));
    let run = |cfg: &Path, flag: Option<&str>, env: Option<&str>| {
        let out = tmp.path().join("seed-out");
        let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
        if let Some(f) = flag {
            args.extend_from_slice(&["--seed", f]);
        }
        let o = bbm(&args, env);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let m = manifest(&out);
        (m["seed"].as_u64().unwrap(), m["seed_source"].as_str().unwrap().to_string())
    };
    assert_eq!(run(&seeded, Some("3"), Some("99")), (3, "flag".into()));
    assert_eq!(run(&seeded, None, Some("99")), (11, "config".into()));
    assert_eq!(run(&plain, None, Some("99")), (99, "env".into()));
    assert_eq!(run(&plain, None, None), (0, "default".into()));

    let out = tmp.path().join("bad-env");
    let o = bbm(&["simulate", "--config", plain.to_str().unwrap(), "--out", out.to_str().unwrap()], Some("x1"));
    assert_eq!(code(&o), exit::VALIDATION);
}

#[test]
fn manifest_contents() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", &SMALL.replace("times = [1.0, 2.0]", "times = [1.0, 2.0]\ndump = true"));
    let out = tmp.path().join("m");
    run_ok("simulate", &cfg, &out, &["--seed", "4"]);
    let m = manifest(&out);
    assert_eq!(m["tool"], "bbm");
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["stages"][0]["name"], "simulate");
    assert!(m["pruning"]["pruned_count"].is_u64());
    assert!(m["pruning"]["pruned_mass_bound"].is_f64());
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in &outputs {
        assert!(out.join(f).exists(), "{f} listed but missing");
    }
    assert!(outputs.contains(&"population.bbmp"));

    let pop = bbm_core::dump::load(&out.join("population.bbmp")).unwrap();
    assert_eq!(pop.time(), 3.0);
    let maxima = Table::read_path(&out.join("maxima.csv")).unwrap();
    let m0 = maxima.column("M").unwrap()[0];
    let direct = bbm_core::max_displacement(&pop).unwrap();
    assert_eq!(m0.to_bits(), direct.to_bits());

    // the hash ignores the output directory
    let elsewhere = tmp.path().join("n");
    run_ok("simulate", &cfg, &elsewhere, &["--seed", "4"]);
    assert_eq!(manifest(&elsewhere)["config_hash"], m["config_hash"]);
}

#[test]
fn csv_dialect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("d");
    run_ok("kpp", &cfg, &out, &[]);
    for (name, bytes) in csv_files(&out) {
        let text = String::from_utf8(bytes).expect("utf-8");
        assert!(!text.contains('\r'), "{name} has CR");
        assert!(text.ends_with('\n'));
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert!(header.split(',').all(|c| !c.is_empty() && c.parse::<f64>().is_err()), "{name}: {header}");
        let t = Table::parse(&text).unwrap();
        assert!(!t.rows.is_empty());
        assert!(t.rows.iter().all(|r| r.len() == t.columns.len()));
    }
}

fn failing(cmd: &str, text: &str) -> Output {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", text);
    let out = tmp.path().join("o");
    bbm(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_replicas_is_a_validation_error() {
    let o = failing("simulate", &SMALL.replace("replicas = 200", "replicas = 0"));
    assert_eq!(code(&o), exit::VALIDATION, "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected() {
    let o = failing("simulate", &SMALL.replace("horizon = 3.0", "horizon = 3.0\nhorzion = 4.0"));
    assert_eq!(code(&o), exit::VALIDATION);
    assert!(stderr(&o).contains("horzion"), "{}", stderr(&o));
    let o = failing("simulate", "version = 1\n[simulte]\nreplicas = 3\n");
    assert_eq!(code(&o), exit::VALIDATION);
}

#[test]
fn version_is_required_and_checked() {
    assert_eq!(code(&failing("kpp", "[kpp]\nhorizon = 5.0\n")), exit::VALIDATION);
    assert_eq!(code(&failing("kpp", "version = 2\n")), exit::VALIDATION);
}

#[test]
fn ergodic_window_must_be_ordered() {
    let o = failing("ergodic", &SMALL.replace("c_hat = 0.34", "c_hat = 0.34\nwindow = [2.0, 2.0]"));
    assert_eq!(code(&o), exit::VALIDATION);
    assert!(stderr(&o).contains("d < D"), "{}", stderr(&o));
}

#[test]
fn unstable_kpp_step_is_rejected() {
    let o = failing("kpp", &SMALL.replace("horizon = 30.0\nfit", "horizon = 30.0\ndt = 0.01\nfit"));
    assert_eq!(code(&o), exit::VALIDATION);
    assert!(stderr(&o).contains("unstable"), "{}", stderr(&o));
}

#[test]
fn infeasible_correlation_schedule() {
    let o = failing("corr", &SMALL.replace("big_r = 3.0", "big_r = 6.0"));
    assert_eq!(code(&o), exit::VALIDATION);
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));
}

#[test]
fn capacity_error_has_its_own_code() {
    let text = SMALL.replace("experiment = \"cli-test\"", "experiment = \"cap\"\n[prune]\nmax_particles = 20");
    let o = failing("simulate", &text);
    assert_eq!(code(&o), exit::CAPACITY, "{}", stderr(&o));
}

#[test]
fn numerical_errors_have_their_own_code() {
    // a fit range outside the profile tail cannot be fitted
    let o = failing("kpp", &SMALL.replace("fit = [15.0, 30.0]", "fit = [15.0, 30.0]\nc_fit = [0.1, 0.5]"));
    assert_eq!(code(&o), exit::NUMERICAL, "{}", stderr(&o));
}

#[test]
fn failed_runs_still_leave_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("experiment = \"cli-test\"", "experiment = \"cap\"\n[prune]\nmax_particles = 20");
    let cfg = write_config(tmp.path(), "cap.toml", &text);
    let out = tmp.path().join("o");
    let o = bbm(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), exit::CAPACITY);
    let m = manifest(&out);
    assert!(m["error"].as_str().unwrap().contains("capacity"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = bbm(&["kpp", "--config", "/nonexistent/bbm.toml"], None);
    assert_eq!(code(&o), exit::IO);
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(code(&bbm(&["simulate", "--seed", "minus-one"], None)), exit::USAGE);
    assert_eq!(code(&bbm(&["frobnicate"], None)), exit::USAGE);
}

#[test]
fn default_config_is_valid_and_canonical() {
    let cfg = ExperimentConfig::default_config();
    let back = ExperimentConfig::from_toml(&cfg.canonical()).unwrap();
    assert_eq!(cfg, back);
}

#[test]
fn default_localize_emits_a_monotone_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("loc");
    let o = bbm(&["localize", "--out", out.to_str().unwrap(), "--quiet"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = Table::read_path(&out.join("nonlocalization.csv")).unwrap();
    let rates = t.column("nonlocalization_rate").unwrap();
    assert_eq!(rates.len(), 3);
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
}

#[test]
fn simulate_budget() {
    // t = 5, binary law, 1000 replicas
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", "version = 1\n[prune]\nenabled = false\n");
    let out = tmp.path().join("b");
    let start = std::time::Instant::now();
    run_ok("simulate", &cfg, &out, &["--threads", "1"]);
    assert!(start.elapsed().as_secs_f64() < 60.0);
    assert_eq!(Table::read_path(&out.join("maxima.csv")).unwrap().rows.len(), 1000);
}
