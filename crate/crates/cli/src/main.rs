use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use bbm_cli::commands::{self, Command, Outcome};
use bbm_cli::config::ExperimentConfig;
use bbm_cli::manifest::{config_hash, RunManifest, Stage, CONFIG_FILE, MANIFEST_FILE};
use bbm_cli::{exit, exit_code};
use bbm_core::{Error, Result};

const SEED_ENV: &str = "BBM_SEED";

/// Branching Brownian motion experiments.
///
/// Exit codes: 0 success, 2 usage, 3 invalid config or parameters,
/// 4 numerical failure, 5 particle cap exceeded, 6 file i/o.
#[derive(Parser, Debug)]
#[command(name = "bbm", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML config; defaults are used for anything left out.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed and BBM_SEED.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory [default: config out_dir, else bbm-out/<command>].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads [default: available cores].
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Martingales and maxima of independent replicas.
    Simulate,
    /// Time-averaged law of the maximum on one long path vs the random-shift Gumbel.
    Ergodic,
    /// Upper tail of the maximum and its log-linear fit.
    Tails,
    /// Fisher-KPP front, wave profile, ODE residual and tail constant.
    Kpp,
    /// Two-time correlation of the frontier indicators.
    Corr,
    /// Nonlocalization rates of extremal paths.
    Localize,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Ergodic => Command::Ergodic,
            Cmd::Tails => Command::Tails,
            Cmd::Kpp => Command::Kpp,
            Cmd::Corr => Command::Corr,
            Cmd::Localize => Command::Localize,
        }
    }
}

fn resolve_seed(cli: Option<u64>, cfg: Option<u64>) -> Result<(u64, &'static str)> {
    if let Some(s) = cli {
        return Ok((s, "flag"));
    }
    if let Some(s) = cfg {
        return Ok((s, "config"));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(|s| (s, "env"))
            .map_err(|_| Error::Parameter(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok((0, "default")),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("bbm: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    let cmd: Command = cli.command.into();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_config(),
    };
    let (seed, seed_source) = resolve_seed(cli.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("bbm-out").join(cmd.name()));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Parameter("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    pool.build_global()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;

    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.canonical()).map_err(|e| io_err(&config_path, e))?;

    let result = commands::run(cmd, &cfg, seed, &out);
    let (outcome, error) = match result {
        Ok(o) => (o, None),
        Err(e) => (Outcome::default(), Some(e)),
    };
    let mut outputs = vec![CONFIG_FILE.to_string()];
    if error.is_none() {
        for (name, table) in &outcome.tables {
            table.write_path(&out.join(name))?;
            outputs.push(name.clone());
        }
        outputs.extend(outcome.extra_files.iter().cloned());
    }
    let manifest = RunManifest {
        tool: "bbm".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.name().into(),
        experiment: cfg.experiment.clone(),
        config_hash: config_hash(&cfg),
        seed,
        seed_source: seed_source.into(),
        threads: rayon::current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        stages: outcome
            .stages
            .iter()
            .map(|(name, seconds)| Stage { name: name.clone(), seconds: *seconds })
            .collect(),
        pruning: outcome.prune.into(),
        summary: outcome.summary.iter().cloned().collect(),
        outputs,
        error: error.as_ref().map(|e| e.to_string()),
    };
    manifest.write(&out)?;
    if let Some(e) = error {
        return Err(e);
    }
    if !cli.quiet {
        println!("{} -> {}", cmd.name(), out.display());
        for (k, v) in &outcome.summary {
            println!("  {k} = {v}");
        }
        println!("  wall time {:.2}s, manifest {}", manifest.wall_time_seconds, MANIFEST_FILE);
    }
    Ok(())
}
