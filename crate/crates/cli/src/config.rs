//! Experiment configuration: one TOML file, versioned, unknown keys rejected.
//!
//! Every section has defaults, so an empty file (plus `version`) is a valid
//! config for every subcommand. Validation happens at load time, before any
//! simulation starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bbm_core::correlation::{CorrelationConfig, Pairing};
use bbm_core::localization::EnvelopeSpec;
use bbm_core::{Error, Grid1D, OffspringLaw, PruneConfig, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_name")]
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Spacing of the engine's checkpoint grid.
    #[serde(default = "default_step")]
    pub checkpoint_step: f64,
    #[serde(default)]
    pub law: LawConfig,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub ergodic: ErgodicConfig,
    #[serde(default)]
    pub tails: TailsConfig,
    #[serde(default)]
    pub kpp: KppConfig,
    #[serde(default)]
    pub corr: CorrConfig,
    #[serde(default)]
    pub localize: LocalizeConfig,
}

fn default_name() -> String {
    "bbm".into()
}

fn default_step() -> f64 {
    0.1
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LawConfig {
    /// `p_k` for k = 1, 2, ...
    pub probs: Vec<f64>,
}

impl Default for LawConfig {
    fn default() -> Self {
        Self { probs: vec![0.0, 1.0] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub enabled: bool,
    pub window: f64,
    pub max_particles: usize,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            enabled: true,
            window: 6.0,
            max_particles: PruneConfig::DEFAULT_CAP,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub horizon: f64,
    pub replicas: usize,
    /// Snapshot times for the martingales; the horizon is always included.
    pub times: Vec<f64>,
    /// Write the final population of replica 0 as a binary checkpoint.
    pub dump: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            replicas: 1000,
            times: vec![1.0, 2.0, 3.0, 4.0],
            dump: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicConfig {
    pub horizon: f64,
    pub epsilon: f64,
    pub big_r: f64,
    /// `[d, D]`: range of the CDF grid.
    pub window: [f64; 2],
    pub points: usize,
    /// Skips the PDE fit when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_hat: Option<f64>,
    pub c_fit: [f64; 2],
    pub pde_horizon: f64,
    pub pde_dx: f64,
    pub pde_dt: f64,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        Self {
            horizon: 60.0,
            epsilon: 0.2,
            big_r: 10.0,
            window: [-8.0, 6.0],
            points: 281,
            c_hat: None,
            c_fit: [4.0, 7.0],
            pde_horizon: 40.0,
            pde_dx: 0.05,
            pde_dt: 0.00025,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TailsConfig {
    pub horizon: f64,
    pub replicas: usize,
    pub x_range: [f64; 2],
    pub x_step: f64,
    pub fit: [f64; 2],
}

impl Default for TailsConfig {
    fn default() -> Self {
        Self {
            horizon: 30.0,
            replicas: 10_000,
            x_range: [0.0, 5.0],
            x_step: 0.1,
            fit: [1.5, 4.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct KppConfig {
    pub horizon: f64,
    pub dx: f64,
    pub dt: f64,
    /// Time range of the front fit.
    pub fit: [f64; 2],
    pub c_fit: [f64; 2],
}

impl Default for KppConfig {
    fn default() -> Self {
        Self {
            horizon: 40.0,
            dx: Grid1D::DEFAULT_DX,
            dt: Grid1D::DEFAULT_DT,
            fit: [20.0, 40.0],
            c_fit: [4.0, 7.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum PairingMode {
    Paired,
    Independent,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CorrConfig {
    pub horizon: f64,
    pub epsilon: f64,
    pub xi: f64,
    pub big_r: f64,
    pub r_tube: f64,
    pub window: [f64; 2],
    pub alpha: f64,
    pub beta: f64,
    pub outer: usize,
    pub inner: usize,
    pub s: f64,
    pub s_primes: Vec<f64>,
    pub pairing: PairingMode,
    pub track_localized: bool,
}

impl Default for CorrConfig {
    fn default() -> Self {
        Self {
            horizon: 40.0,
            epsilon: 0.3,
            xi: 0.8,
            big_r: 10.0,
            r_tube: 0.25,
            window: [-1.0, 2.0],
            alpha: 0.4,
            beta: 0.6,
            outer: 20,
            inner: 50,
            s: 12.0,
            s_primes: vec![12.2, 31.2],
            pairing: PairingMode::Paired,
            track_localized: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeConfig {
    pub horizon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rs: Vec<f64>,
    pub window: [f64; 2],
    pub replicas: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            horizon: 30.0,
            alpha: 0.4,
            beta: 0.6,
            rs: vec![2.0, 4.0, 8.0],
            window: [-1.0, 2.0],
            replicas: 200,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

fn check_window(name: &str, w: [f64; 2]) -> Result<()> {
    if !(w[0] < w[1]) {
        return Err(invalid(format!("{name}: window needs d < D, got [{}, {}]", w[0], w[1])));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_replicas(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid(format!("{name}: replicas must be at least 1")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// All defaults; what an empty config with `version = 1` gives.
    pub fn default_config() -> Self {
        Self::from_toml(&format!("version = {CONFIG_VERSION}")).expect("defaults are valid")
    }

    /// Canonical text: re-serialized, so formatting and key order in the
    /// source file do not matter.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn law(&self) -> Result<OffspringLaw> {
        OffspringLaw::new(self.law.probs.clone())
    }

    pub fn prune(&self) -> Result<PruneConfig> {
        if self.prune.enabled {
            PruneConfig::new(self.prune.window, self.prune.max_particles)
        } else {
            Ok(PruneConfig::disabled().with_cap(self.prune.max_particles))
        }
    }

    pub fn corr_config(&self) -> Result<CorrelationConfig> {
        let c = &self.corr;
        let mut cfg = CorrelationConfig::new(c.horizon, c.epsilon, c.big_r);
        cfg.xi = c.xi;
        cfg.window = (c.window[0], c.window[1]);
        cfg.r_tube = c.r_tube;
        cfg.alpha = c.alpha;
        cfg.beta = c.beta;
        cfg.outer_replicas = c.outer;
        cfg.inner_continuations = c.inner;
        cfg.checkpoint_step = self.checkpoint_step;
        cfg.pairing = match c.pairing {
            PairingMode::Paired => Pairing::Paired,
            PairingMode::Independent => Pairing::Independent,
        };
        cfg.track_localized = c.track_localized;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section, so a bad value fails before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        check_positive("checkpoint_step", self.checkpoint_step)?;
        self.law()?;
        self.prune()?;

        let s = &self.simulate;
        check_positive("simulate.horizon", s.horizon)?;
        check_replicas("simulate", s.replicas)?;
        if s.times.iter().any(|&t| !(t > 0.0 && t <= s.horizon)) {
            return Err(invalid("simulate.times must lie in (0, horizon]"));
        }
        if s.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("simulate.times must be increasing"));
        }

        let e = &self.ergodic;
        check_positive("ergodic.horizon", e.horizon)?;
        check_window("ergodic", e.window)?;
        if e.points < 2 {
            return Err(invalid("ergodic.points must be at least 2"));
        }
        if !(e.epsilon > 0.0 && e.epsilon < 1.0) {
            return Err(invalid(format!("ergodic.epsilon must lie in (0, 1), got {}", e.epsilon)));
        }
        if !(e.big_r > 0.0 && e.big_r <= e.epsilon * e.horizon) {
            return Err(Error::InfeasibleSchedule { big_r: e.big_r, horizon: e.epsilon * e.horizon });
        }
        if let Some(c) = e.c_hat {
            check_positive("ergodic.c_hat", c)?;
        }
        Grid1D::with_steps(e.pde_dx, e.pde_dt)?;
        check_positive("ergodic.pde_horizon", e.pde_horizon)?;

        let t = &self.tails;
        check_positive("tails.horizon", t.horizon)?;
        check_replicas("tails", t.replicas)?;
        check_window("tails.x_range", t.x_range)?;
        check_window("tails.fit", t.fit)?;
        check_positive("tails.x_step", t.x_step)?;

        let k = &self.kpp;
        check_positive("kpp.horizon", k.horizon)?;
        Grid1D::with_steps(k.dx, k.dt)?;
        check_window("kpp.fit", k.fit)?;
        if !(k.fit[0] > 0.0 && k.fit[1] <= k.horizon) {
            return Err(invalid("kpp.fit must lie in (0, horizon]"));
        }
        check_window("kpp.c_fit", k.c_fit)?;

        let c = &self.corr;
        check_window("corr", c.window)?;
        let cfg = self.corr_config()?;
        let lo = cfg.epsilon * cfg.horizon;
        if !(c.s >= lo && c.s < c.horizon) {
            return Err(invalid(format!("corr.s must lie in [{lo}, {}), got {}", c.horizon, c.s)));
        }
        if c.s_primes.is_empty()
            || c.s_primes.iter().any(|&sp| !(sp > c.s && sp <= c.horizon))
            || c.s_primes.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(invalid("corr.s_primes must be increasing and lie in (s, horizon]"));
        }

        let l = &self.localize;
        EnvelopeSpec::new(l.alpha, l.beta, l.horizon)?;
        check_window("localize", l.window)?;
        check_replicas("localize", l.replicas)?;
        if l.rs.is_empty() || l.rs.iter().any(|&r| !(r >= 0.0 && 2.0 * r < l.horizon)) {
            return Err(invalid("localize.rs must be nonempty and lie in [0, horizon/2)"));
        }
        Ok(())
    }
}
