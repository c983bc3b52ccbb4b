//! Single-step measure archive with visitation counts, and the exploration
//! bonus derived from it.
//!
//! The bonus for a single-step measure `δ` is `1 / (1 + p(δ))`, where `p(δ)` is
//! the share of all recorded visits that landed in `δ`'s cell. Because it is a
//! share rather than a raw count, the bonus stays within `[0.5, 1]` for the
//! whole run and never decays to zero.

use std::io::Write;

use crate::archive::grid_cell;
use crate::env::Measure;
use crate::error::{Error, Result};

/// Default cells per dimension for the single-step archive.
pub const DEFAULT_RESOLUTION: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct VisitCountArchive {
    resolution: usize,
    counts: Vec<u64>,
    total: u64,
}

impl Default for VisitCountArchive {
    fn default() -> Self {
        Self::new(DEFAULT_RESOLUTION).expect("nonzero resolution")
    }
}

impl VisitCountArchive {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Config("explorer resolution must be at least 1".into()));
        }
        Ok(Self {
            resolution,
            counts: vec![0; resolution * resolution],
            total: 0,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.resolution + col]
    }

    fn slot(&self, delta: &Measure) -> Result<usize> {
        let (r, c) = grid_cell(delta, self.resolution)?;
        Ok(r * self.resolution + c)
    }

    pub fn visit(&mut self, delta: &Measure) -> Result<()> {
        let i = self.slot(delta)?;
        self.counts[i] += 1;
        self.total += 1;
        Ok(())
    }

    /// Records a batch of visits. Either all are applied or, on an
    /// out-of-range measure, none are.
    pub fn visit_all<'a, I>(&mut self, deltas: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Measure>,
    {
        let slots = deltas
            .into_iter()
            .map(|d| self.slot(d))
            .collect::<Result<Vec<_>>>()?;
        self.total += slots.len() as u64;
        for i in slots {
            self.counts[i] += 1;
        }
        Ok(())
    }

    /// Share of all visits that fall in `delta`'s cell; 0 while empty.
    /// Measures outside the archive bounds have no cell and get 0.
    pub fn proportion(&self, delta: &Measure) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        match self.slot(delta) {
            Ok(i) => self.counts[i] as f64 / self.total as f64,
            Err(_) => 0.0,
        }
    }

    pub fn bonus(&self, delta: &Measure) -> f64 {
        1.0 / (1.0 + self.proportion(delta))
    }

    /// Base reward plus the exploration bonus when `bonus_enabled`.
    pub fn combined_reward(&self, base: f64, delta: &Measure, bonus_enabled: bool) -> f64 {
        if bonus_enabled {
            base + self.bonus(delta)
        } else {
            base
        }
    }

    /// `H x H` CSV of visit counts.
    pub fn write_counts_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.counts.chunks(self.resolution) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}
