//! Branching Brownian motion laboratory.
//!
//! Simulation of the particle system with frontier pruning, the frontier
//! statistics built on it (centering, martingales, time-averaged laws),
//! path localization diagnostics, two-time correlation estimates, and an
//! explicit finite-difference Fisher-KPP solver used as an independent
//! reference for the law of the maximum.

pub mod bridge;
pub mod correlation;
pub mod dump;
pub mod engine;
pub mod error;
pub mod frontier;
pub mod kpp;
pub mod localization;
pub mod offspring;
pub mod replicas;
pub mod rng;
pub mod stats;
pub mod table;

pub use bridge::{bridge_below_line_bound, bridge_sample_path, BridgeSpec};
pub use correlation::{CorrelationConfig, CorrelationSample};
pub use engine::{Particle, Population, PruneConfig, PruneReport};
pub use error::{Error, Result};
pub use frontier::{
    front_centering, gumbel_predict, martingale_snapshot, max_displacement, EmpiricalCdf,
    GumbelParams, MartingaleSnapshot,
};
pub use kpp::{kpp_solve, Grid1D, WaveProfile, WaveSolution};
pub use localization::{EnvelopeSpec, LocalizedMax, TailBoundParams, TubeSchedule};
pub use offspring::OffspringLaw;
pub use replicas::run_replicas;
pub use rng::RandomStream;
pub use table::Table;
