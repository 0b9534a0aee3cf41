//! Event-driven branching Brownian motion with frontier-relative pruning.
//!
//! Time is cut at the checkpoint grid `k * step`. Inside one grid interval the
//! particles are independent, so each one is carried through its own branch
//! events in turn: exact Gaussian displacement up to the branch time, then `k`
//! children at the branch point, each with a fresh Exp(rate) clock, carried to
//! the end of the interval the same way. Positions at checkpoints are then
//! recorded and the population is pruned against its current maximum.
//!
//! Paths live in an arena of segments. A segment holds the checkpoint
//! positions recorded during one particle's lifetime and points to its
//! parent's segment, so siblings share the ancestral path.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::offspring::OffspringLaw;
use crate::rng::RandomStream;

const SQRT2: f64 = std::f64::consts::SQRT_2;
const NO_SEGMENT: u32 = u32::MAX;
/// `parent_id` of the root particle.
pub const NO_PARENT: u64 = u64::MAX;

/// Relative tolerance when snapping grid times onto an advance target.
const GRID_SNAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneConfig {
    /// Particles more than `window` below the current maximum are removed.
    pub window: f64,
    pub max_particles: usize,
    pub enabled: bool,
    /// Constant in the per-removal bias bound `gamma (y + 1)^2 exp(-sqrt2 y)`.
    pub gamma: f64,
}

impl PruneConfig {
    pub const DEFAULT_WINDOW: f64 = 12.0;
    pub const DEFAULT_CAP: usize = 5_000_000;

    pub fn new(window: f64, max_particles: usize) -> Result<Self> {
        let cfg = Self {
            window,
            max_particles,
            enabled: true,
            gamma: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pruning switched off; the cap still applies.
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.max_particles = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0) {
            return Err(Error::param(format!("prune window must be > 0, got {}", self.window)));
        }
        if self.max_particles == 0 {
            return Err(Error::param("particle cap must be > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("bias constant gamma must be > 0"));
        }
        Ok(())
    }

    /// Bias bound charged for one particle removed `depth` below the maximum.
    pub fn removal_bound(&self, depth: f64) -> f64 {
        self.gamma * (depth + 1.0).powi(2) * (-SQRT2 * depth).exp()
    }
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            window: Self::DEFAULT_WINDOW,
            max_particles: Self::DEFAULT_CAP,
            enabled: true,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    pub id: u64,
    pub parent_id: u64,
    pub birth_time: f64,
    pub position: f64,
    pub next_branch_time: f64,
    segment: u32,
}

#[derive(Clone, Debug)]
struct Segment {
    parent: u32,
    /// Checkpoint index of `values[0]`.
    first: u32,
    values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PruneReport {
    pub pruned_count: u64,
    pub pruned_mass_bound: f64,
}

impl PruneReport {
    pub fn merged(self, other: Self) -> Self {
        Self {
            pruned_count: self.pruned_count + other.pruned_count,
            pruned_mass_bound: self.pruned_mass_bound + other.pruned_mass_bound,
        }
    }

    /// What was pruned after `earlier`, a report of an ancestor state.
    pub fn since(self, earlier: Self) -> Self {
        Self {
            pruned_count: self.pruned_count - earlier.pruned_count,
            pruned_mass_bound: self.pruned_mass_bound - earlier.pruned_mass_bound,
        }
    }
}

impl std::iter::Sum for PruneReport {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Self::merged)
    }
}

#[derive(Clone, Debug)]
pub struct Population {
    time: f64,
    step: f64,
    /// Index of the last checkpoint recorded.
    checkpoint: u32,
    particles: Vec<Particle>,
    next_id: u64,
    pruned_count: u64,
    pruned_mass_bound: f64,
    branch_rate: f64,
    seed: u64,
    record_paths: bool,
    segments: Vec<Segment>,
    // scratch buffers reused between intervals
    scratch: Vec<Particle>,
    stack: Vec<Particle>,
}

impl Population {
    /// One particle at the origin at time 0 with a fresh branch clock.
    pub fn new(checkpoint_step: f64, stream: &mut RandomStream) -> Result<Self> {
        Self::from_positions(0.0, &[0.0], checkpoint_step, stream)
    }

    /// Particles at the given positions at time `time`, each with a fresh clock.
    ///
    /// Used to build frozen states for continuation estimates. `time` must lie
    /// on the checkpoint grid.
    pub fn from_positions(
        time: f64,
        positions: &[f64],
        checkpoint_step: f64,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        if !(checkpoint_step > 0.0 && checkpoint_step.is_finite()) {
            return Err(Error::param(format!(
                "checkpoint step must be > 0, got {checkpoint_step}"
            )));
        }
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::param("population time must be finite and >= 0"));
        }
        let k = (time / checkpoint_step).round();
        if (k * checkpoint_step - time).abs() > GRID_SNAP * checkpoint_step.max(time) {
            return Err(Error::param("population time must lie on the checkpoint grid"));
        }
        if positions.is_empty() || positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("need at least one finite position"));
        }
        let mut pop = Self {
            time,
            step: checkpoint_step,
            checkpoint: k as u32,
            particles: Vec::with_capacity(positions.len()),
            next_id: 0,
            pruned_count: 0,
            pruned_mass_bound: 0.0,
            branch_rate: 1.0,
            seed: stream.seed(),
            record_paths: false,
            segments: Vec::new(),
            scratch: Vec::new(),
            stack: Vec::new(),
        };
        for &x in positions {
            let id = pop.next_id;
            pop.next_id += 1;
            pop.particles.push(Particle {
                id,
                parent_id: NO_PARENT,
                birth_time: time,
                position: x,
                next_branch_time: time + stream.exp1() / pop.branch_rate,
                segment: NO_SEGMENT,
            });
        }
        Ok(pop)
    }

    /// Records checkpoint paths from now on. The current positions become
    /// the first recorded checkpoint.
    pub fn with_paths(mut self) -> Self {
        if !self.record_paths {
            self.record_paths = true;
            let first = self.checkpoint;
            for p in &mut self.particles {
                p.segment = self.segments.len() as u32;
                self.segments.push(Segment {
                    parent: NO_SEGMENT,
                    first,
                    values: vec![p.position],
                });
            }
        }
        self
    }

    /// Branching rate; 0 freezes branching (pure Brownian motion).
    ///
    /// Existing clocks are redrawn from `stream`.
    pub fn with_branch_rate(mut self, rate: f64, stream: &mut RandomStream) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::param(format!("branch rate must be >= 0, got {rate}")));
        }
        self.branch_rate = rate;
        for p in &mut self.particles {
            p.next_branch_time = next_clock(self.time, rate, stream);
        }
        Ok(self)
    }

    /// Draws fresh branch clocks for every particle. Clocks are memoryless, so
    /// a continuation of a frozen state must not reuse the frozen ones.
    pub fn redraw_clocks(&mut self, stream: &mut RandomStream) {
        for p in &mut self.particles {
            p.next_branch_time = next_clock(self.time, self.branch_rate, stream);
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn checkpoint_step(&self) -> f64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn branch_rate(&self) -> f64 {
        self.branch_rate
    }

    pub fn records_paths(&self) -> bool {
        self.record_paths
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    /// Positions of the live particles, in storage order.
    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.particles.iter().map(|p| p.position)
    }

    pub fn max_position(&self) -> Option<f64> {
        self.particles.iter().map(|p| p.position).reduce(f64::max)
    }

    /// Positions sorted in descending order.
    pub fn snapshot_positions(&self) -> Result<Vec<f64>> {
        if self.particles.is_empty() {
            return Err(Error::State("snapshot of an empty population".into()));
        }
        let mut xs: Vec<f64> = self.positions().collect();
        xs.sort_by(|a, b| b.total_cmp(a));
        Ok(xs)
    }

    pub fn prune_report(&self) -> PruneReport {
        PruneReport {
            pruned_count: self.pruned_count,
            pruned_mass_bound: self.pruned_mass_bound,
        }
    }

    /// Time of checkpoint `k`.
    pub fn checkpoint_time(&self, k: u32) -> f64 {
        k as f64 * self.step
    }

    /// Recorded `(time, position)` checkpoints of a live particle, oldest first.
    ///
    /// Empty when path recording is off.
    pub fn checkpoints(&self, particle: &Particle) -> Vec<(f64, f64)> {
        let mut chain = Vec::new();
        let mut seg = particle.segment;
        while seg != NO_SEGMENT {
            chain.push(seg);
            seg = self.segments[seg as usize].parent;
        }
        let mut out = Vec::new();
        for &s in chain.iter().rev() {
            let seg = &self.segments[s as usize];
            for (i, &v) in seg.values.iter().enumerate() {
                out.push((self.checkpoint_time(seg.first + i as u32), v));
            }
        }
        out
    }

    /// Advances every particle to `to_time`.
    ///
    /// Checkpoints are recorded at each grid time crossed, and pruning (when
    /// enabled) runs after each checkpoint.
    pub fn advance(
        &mut self,
        to_time: f64,
        law: &OffspringLaw,
        prune: &PruneConfig,
        stream: &mut RandomStream,
    ) -> Result<()> {
        if !(to_time > self.time) || !to_time.is_finite() {
            return Err(Error::param(format!(
                "advance target {to_time} must exceed current time {}",
                self.time
            )));
        }
        if self.particles.is_empty() {
            return Err(Error::State("cannot advance an empty population".into()));
        }
        prune.validate()?;
        let snap = GRID_SNAP * self.step;
        loop {
            let next_k = self.checkpoint + 1;
            let grid_time = self.checkpoint_time(next_k);
            if grid_time <= to_time + snap {
                let target = if (grid_time - to_time).abs() <= snap {
                    to_time
                } else {
                    grid_time
                };
                if target > self.time {
                    self.evolve_interval(target, law, stream);
                }
                self.time = target;
                self.checkpoint = next_k;
                self.record_checkpoint();
                if prune.enabled {
                    self.prune(prune);
                }
                self.check_capacity(prune)?;
                if target >= to_time {
                    break;
                }
            } else {
                self.evolve_interval(to_time, law, stream);
                self.time = to_time;
                self.check_capacity(prune)?;
                break;
            }
        }
        Ok(())
    }

    fn check_capacity(&self, prune: &PruneConfig) -> Result<()> {
        if self.particles.len() > prune.max_particles {
            return Err(Error::Capacity {
                time: self.time,
                particles: self.particles.len(),
                cap: prune.max_particles,
                pruned: self.pruned_count,
            });
        }
        Ok(())
    }

    fn evolve_interval(&mut self, t1: f64, law: &OffspringLaw, stream: &mut RandomStream) {
        let t0 = self.time;
        let mut out = std::mem::take(&mut self.scratch);
        out.clear();
        out.reserve(self.particles.len() + self.particles.len() / 4);
        let mut stack = std::mem::take(&mut self.stack);
        let first_child_checkpoint = self.checkpoint + 1;
        for &root in &self.particles {
            stack.push(root);
            while let Some(mut p) = stack.pop() {
                let start = p.birth_time.max(t0);
                if p.next_branch_time <= t1 {
                    let tb = p.next_branch_time;
                    let pos = p.position + (tb - start).sqrt() * stream.standard_normal();
                    let k = law.sample(stream);
                    for _ in 0..k {
                        let id = self.next_id;
                        self.next_id += 1;
                        let segment = if self.record_paths {
                            let s = self.segments.len() as u32;
                            self.segments.push(Segment {
                                parent: p.segment,
                                first: first_child_checkpoint,
                                values: Vec::new(),
                            });
                            s
                        } else {
                            NO_SEGMENT
                        };
                        stack.push(Particle {
                            id,
                            parent_id: p.id,
                            birth_time: tb,
                            position: pos,
                            next_branch_time: next_clock(tb, self.branch_rate, stream),
                            segment,
                        });
                    }
                } else {
                    p.position += (t1 - start).sqrt() * stream.standard_normal();
                    out.push(p);
                }
            }
        }
        self.scratch = std::mem::replace(&mut self.particles, out);
        self.stack = stack;
    }

    fn record_checkpoint(&mut self) {
        if !self.record_paths {
            return;
        }
        for p in &self.particles {
            self.segments[p.segment as usize].values.push(p.position);
        }
    }

    fn prune(&mut self, cfg: &PruneConfig) {
        let Some(max) = self.max_position() else {
            return;
        };
        let floor = max - cfg.window;
        let mut removed = 0u64;
        let mut mass = 0.0;
        self.particles.retain(|p| {
            if p.position < floor {
                removed += 1;
                mass += cfg.removal_bound(max - p.position);
                false
            } else {
                true
            }
        });
        self.pruned_count += removed;
        self.pruned_mass_bound += mass;
    }

    /// Writes the population in the binary checkpoint layout (see [`crate::dump`]).
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let fmt = |e: std::io::Error| Error::Format(e.to_string());
        w.write_all(crate::dump::MAGIC).map_err(fmt)?;
        let flags: u32 = u32::from(self.record_paths);
        for v in [crate::dump::VERSION, flags] {
            w.write_all(&v.to_le_bytes()).map_err(fmt)?;
        }
        for v in [self.seed, self.checkpoint as u64, self.next_id, self.pruned_count] {
            w.write_all(&v.to_le_bytes()).map_err(fmt)?;
        }
        for v in [self.time, self.step, self.pruned_mass_bound, self.branch_rate] {
            w.write_all(&v.to_le_bytes()).map_err(fmt)?;
        }
        w.write_all(&(self.particles.len() as u64).to_le_bytes())
            .map_err(fmt)?;
        for p in &self.particles {
            w.write_all(&p.id.to_le_bytes()).map_err(fmt)?;
            w.write_all(&p.parent_id.to_le_bytes()).map_err(fmt)?;
            for v in [p.birth_time, p.position, p.next_branch_time] {
                w.write_all(&v.to_le_bytes()).map_err(fmt)?;
            }
            if self.record_paths {
                let path = self.checkpoints(p);
                let first = path
                    .first()
                    .map_or(self.checkpoint, |&(t, _)| (t / self.step).round() as u32);
                w.write_all(&(first as u64).to_le_bytes()).map_err(fmt)?;
                w.write_all(&(path.len() as u64).to_le_bytes()).map_err(fmt)?;
                for (_, x) in path {
                    w.write_all(&x.to_le_bytes()).map_err(fmt)?;
                }
            }
        }
        Ok(())
    }

    /// Reads a population written by [`Population::write_dump`].
    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != crate::dump::MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != crate::dump::VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let flags = read_u32(&mut r)?;
        let record_paths = flags & 1 == 1;
        let seed = read_u64(&mut r)?;
        let checkpoint = read_u64(&mut r)? as u32;
        let next_id = read_u64(&mut r)?;
        let pruned_count = read_u64(&mut r)?;
        let time = read_f64(&mut r)?;
        let step = read_f64(&mut r)?;
        let pruned_mass_bound = read_f64(&mut r)?;
        let branch_rate = read_f64(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        if !(step > 0.0) {
            return Err(Error::Format("checkpoint step must be > 0".into()));
        }
        let mut particles = Vec::with_capacity(n.min(1 << 24));
        let mut segments = Vec::new();
        for _ in 0..n {
            let id = read_u64(&mut r)?;
            let parent_id = read_u64(&mut r)?;
            let birth_time = read_f64(&mut r)?;
            let position = read_f64(&mut r)?;
            let next_branch_time = read_f64(&mut r)?;
            let segment = if record_paths {
                let first = read_u64(&mut r)? as u32;
                let len = read_u64(&mut r)? as usize;
                let mut values = Vec::with_capacity(len.min(1 << 20));
                for _ in 0..len {
                    values.push(read_f64(&mut r)?);
                }
                segments.push(Segment {
                    parent: NO_SEGMENT,
                    first,
                    values,
                });
                (segments.len() - 1) as u32
            } else {
                NO_SEGMENT
            };
            particles.push(Particle {
                id,
                parent_id,
                birth_time,
                position,
                next_branch_time,
                segment,
            });
        }
        Ok(Self {
            time,
            step,
            checkpoint,
            particles,
            next_id,
            pruned_count,
            pruned_mass_bound,
            branch_rate,
            seed,
            record_paths,
            segments,
            scratch: Vec::new(),
            stack: Vec::new(),
        })
    }
}

fn next_clock(now: f64, rate: f64, stream: &mut RandomStream) -> f64 {
    if rate > 0.0 {
        now + stream.exp1() / rate
    } else {
        f64::INFINITY
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format(e.to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
