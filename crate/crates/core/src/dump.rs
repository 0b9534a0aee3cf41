//! Binary population checkpoint layout, little-endian throughout.
//!
//! ```text
//! header:
//!   magic            4 bytes  "BBMP"
//!   version          u32      currently 1
//!   flags            u32      bit 0: per-particle paths present
//!   seed             u64
//!   checkpoint index u64      index of the last recorded grid time
//!   next id          u64
//!   pruned count     u64
//!   time             f64
//!   checkpoint step  f64
//!   pruned mass      f64
//!   branch rate      f64
//!   particle count   u64
//! per particle:
//!   id u64, parent id u64 (u64::MAX for roots), birth time f64,
//!   position f64, next branch time f64
//!   if flags bit 0: first checkpoint index u64, path length u64,
//!                   path length x f64 positions
//! ```
//!
//! A reloaded population continues exactly where the dumped one stopped
//! provided the random stream is restored too.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::engine::Population;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BBMP";
pub const VERSION: u32 = 1;

pub fn save(pop: &Population, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    pop.write_dump(BufWriter::new(file))
}

pub fn load(path: &Path) -> Result<Population> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Population::read_dump(BufReader::new(file))
}
