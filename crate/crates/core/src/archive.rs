//! MAP-Elites grid archive over the two-dimensional measure space.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::env::{Measure, MEASURE_DIM};
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::rng::Rng;

/// Measures within this distance outside `[0, 1]` are treated as rounding
/// drift and clamped; anything further out is rejected.
const BOUNDARY_SLACK: f64 = 1e-9;

/// Maps a measure in `[0, 1]^2` to its `(row, col)` cell on a `resolution`
/// grid. The upper edge belongs to the last cell.
pub fn grid_cell(measure: &Measure, resolution: usize) -> Result<(usize, usize)> {
    let mut idx = [0usize; MEASURE_DIM];
    for (d, &m) in measure.iter().enumerate() {
        if !(m >= -BOUNDARY_SLACK && m <= 1.0 + BOUNDARY_SLACK) {
            return Err(Error::OutOfRange {
                context: "measure",
                value: m,
            });
        }
        let m = m.clamp(0.0, 1.0);
        idx[d] = ((m * resolution as f64).floor() as usize).min(resolution - 1);
    }
    Ok((idx[0], idx[1]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Elite {
    pub params: ParamVector,
    /// Undiscounted true-reward episode return; the archive ranks by this.
    pub fitness: f64,
    pub measure: Measure,
    /// Learned-reward return recorded alongside, when known.
    pub learned_fitness: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertStatus {
    New,
    Improved,
    NotAdded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Insertion {
    pub status: InsertStatus,
    pub improvement: f64,
    pub cell: (usize, usize),
}

impl Insertion {
    pub fn changed(&self) -> bool {
        self.status != InsertStatus::NotAdded
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QdMetrics {
    pub qd_score: f64,
    /// Percentage of nonempty cells.
    pub coverage: f64,
    pub best: Option<f64>,
    pub average: Option<f64>,
    pub filled: usize,
}

#[derive(Debug, Clone)]
pub struct GridArchive {
    resolution: usize,
    floor: f64,
    cells: Vec<Option<Elite>>,
    filled: usize,
}

impl GridArchive {
    pub fn new(resolution: usize) -> Result<Self> {
        Self::with_floor(resolution, 0.0)
    }

    /// An empty cell only accepts a candidate whose fitness exceeds `floor`.
    pub fn with_floor(resolution: usize, floor: f64) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Config("archive resolution must be at least 1".into()));
        }
        if !floor.is_finite() {
            return Err(Error::NonFinite("archive floor"));
        }
        Ok(Self {
            resolution,
            floor,
            cells: vec![None; resolution * resolution],
            filled: 0,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn capacity(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    pub fn cell_index(&self, measure: &Measure) -> Result<(usize, usize)> {
        grid_cell(measure, self.resolution)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&Elite> {
        if row >= self.resolution || col >= self.resolution {
            return None;
        }
        self.cells[row * self.resolution + col].as_ref()
    }

    /// Occupied cells in row-major order.
    pub fn elites(&self) -> impl Iterator<Item = ((usize, usize), &Elite)> {
        let g = self.resolution;
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.as_ref().map(|e| ((i / g, i % g), e)))
    }

    /// Elitist insertion. Returns the archive improvement: the fitness above
    /// the floor for a new cell, the fitness gain for a replacement, zero
    /// otherwise.
    pub fn insert(&mut self, elite: Elite) -> Result<Insertion> {
        if !elite.fitness.is_finite() {
            return Err(Error::NonFinite("elite fitness"));
        }
        let cell = self.cell_index(&elite.measure)?;
        let slot = &mut self.cells[cell.0 * self.resolution + cell.1];
        let (status, improvement) = match slot {
            None if elite.fitness > self.floor => (InsertStatus::New, elite.fitness - self.floor),
            Some(inc) if elite.fitness > inc.fitness => {
                (InsertStatus::Improved, elite.fitness - inc.fitness)
            }
            _ => (InsertStatus::NotAdded, 0.0),
        };
        if status != InsertStatus::NotAdded {
            if status == InsertStatus::New {
                self.filled += 1;
            }
            *slot = Some(elite);
        }
        Ok(Insertion {
            status,
            improvement,
            cell,
        })
    }

    pub fn metrics(&self) -> QdMetrics {
        let mut qd_score = 0.0;
        let mut best: Option<f64> = None;
        for (_, e) in self.elites() {
            qd_score += e.fitness;
            best = Some(best.map_or(e.fitness, |b| b.max(e.fitness)));
        }
        QdMetrics {
            qd_score,
            coverage: 100.0 * self.filled as f64 / self.capacity() as f64,
            best,
            average: (self.filled > 0).then(|| qd_score / self.filled as f64),
            filled: self.filled,
        }
    }

    /// Uniformly random occupied cell.
    pub fn sample_elite(&self, rng: &mut Rng) -> Option<&Elite> {
        if self.filled == 0 {
            return None;
        }
        let k = rng.random_range(0..self.filled);
        self.elites().nth(k).map(|(_, e)| e)
    }

    /// Writes `archive.csv`-style rows (`row,col,fitness,measure1,measure2`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,col,fitness,measure1,measure2")?;
        for ((r, c), e) in self.elites() {
            writeln!(w, "{r},{c},{},{},{}", e.fitness, e.measure[0], e.measure[1])?;
        }
        Ok(())
    }

    /// Parameter sidecar: for each elite, `row: u32`, `col: u32`,
    /// `len: u32` (bytes), then the serialized parameter vector.
    pub fn write_params<W: Write>(&self, mut w: W, widths: &[usize]) -> Result<()> {
        for ((r, c), e) in self.elites() {
            let blob = e.params.to_bytes(widths);
            w.write_all(&(r as u32).to_le_bytes())?;
            w.write_all(&(c as u32).to_le_bytes())?;
            w.write_all(&(blob.len() as u32).to_le_bytes())?;
            w.write_all(&blob)?;
        }
        Ok(())
    }

    /// Saves `archive.csv` and `archive_params.bin` into `dir`.
    pub fn save(&self, dir: &Path, widths: &[usize]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(BufWriter::new(File::create(dir.join("archive.csv"))?))?;
        let mut w = BufWriter::new(File::create(dir.join("archive_params.bin"))?);
        self.write_params(&mut w, widths)?;
        w.flush()?;
        Ok(())
    }

    /// Loads an archive saved by [`GridArchive::save`]. Elites are placed in
    /// the cells named by the file.
    pub fn load(dir: &Path, resolution: usize, widths: &[usize]) -> Result<Self> {
        let csv_path = dir.join("archive.csv");
        let reader = BufReader::new(File::open(&csv_path)?);
        let parse_err = |line: usize, message: String| Error::Parse {
            path: csv_path.clone(),
            line,
            message,
        };
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "row,col,fitness,measure1,measure2" {
                    return Err(parse_err(1, format!("unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(parse_err(i + 1, format!("expected 5 fields, found {}", f.len())));
            }
            let r: usize = f[0].parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            let c: usize = f[1].parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            let mut v = [0.0; 3];
            for k in 0..3 {
                v[k] = f[k + 2].parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            }
            if r >= resolution || c >= resolution {
                return Err(parse_err(i + 1, format!("cell ({r},{c}) outside {resolution}x{resolution} grid")));
            }
            rows.push(((r, c), v));
        }

        let mut bytes = Vec::new();
        File::open(dir.join("archive_params.bin"))?.read_to_end(&mut bytes)?;
        let mut params = std::collections::HashMap::new();
        let mut pos = 0;
        while pos < bytes.len() {
            if bytes.len() - pos < 12 {
                return Err(Error::Format("truncated parameter record header".into()));
            }
            let word = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
            let (r, c, len) = (word(pos), word(pos + 4), word(pos + 8));
            pos += 12;
            if bytes.len() - pos < len {
                return Err(Error::Format("truncated parameter record".into()));
            }
            params.insert((r, c), ParamVector::from_bytes(&bytes[pos..pos + len], widths)?);
            pos += len;
        }

        let mut archive = Self::new(resolution)?;
        for ((r, c), [fitness, m1, m2]) in rows {
            let p = params
                .remove(&(r, c))
                .ok_or_else(|| Error::Format(format!("no parameters for cell ({r},{c})")))?;
            let slot = &mut archive.cells[r * resolution + c];
            if slot.is_none() {
                archive.filled += 1;
            }
            *slot = Some(Elite {
                params: p,
                fitness,
                measure: [m1, m2],
                learned_fitness: None,
            });
        }
        Ok(archive)
    }

    /// `G x G` CSV of fitness values; empty cells are blank.
    pub fn write_heatmap_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = self.resolution;
        for r in 0..g {
            let line: Vec<String> = (0..g)
                .map(|c| self.get(r, c).map_or(String::new(), |e| e.fitness.to_string()))
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Binary 8-bit PGM. Nonempty cells are min-max normalized onto
    /// `1..=255`; empty cells are 0.
    pub fn write_heatmap_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        let g = self.resolution;
        let (lo, hi) = self
            .elites()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, e)| {
                (lo.min(e.fitness), hi.max(e.fitness))
            });
        write!(w, "P5\n{g} {g}\n255\n")?;
        let mut pixels = Vec::with_capacity(g * g);
        for r in 0..g {
            for c in 0..g {
                pixels.push(match self.get(r, c) {
                    None => 0u8,
                    Some(_) if hi <= lo => 255,
                    Some(e) => (1.0 + 254.0 * (e.fitness - lo) / (hi - lo)).round() as u8,
                });
            }
        }
        w.write_all(&pixels)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn elite(fitness: f64, measure: Measure) -> Elite {
        Elite {
            params: ParamVector::new(vec![fitness, measure[0]]),
            fitness,
            measure,
            learned_fitness: None,
        }
    }

    #[test]
    fn cell_index_examples() {
        let a = GridArchive::new(50).unwrap();
        assert_eq!(a.cell_index(&[0.0, 0.0]).unwrap(), (0, 0));
        assert_eq!(a.cell_index(&[1.0, 1.0]).unwrap(), (49, 49));
        let b = GridArchive::new(20).unwrap();
        assert_eq!(b.cell_index(&[0.37, 0.90]).unwrap(), (7, 18));
        assert!(b.cell_index(&[1.2, 0.5]).is_err());
        assert!(b.cell_index(&[-0.1, 0.5]).is_err());
        assert!(b.cell_index(&[f64::NAN, 0.5]).is_err());
        assert_eq!(b.cell_index(&[1.0 + 1e-12, -1e-12]).unwrap(), (19, 0));
    }

    #[test]
    fn insertion_rules() {
        let mut a = GridArchive::new(10).unwrap();
        let ins = a.insert(elite(3.0, [0.5, 0.5])).unwrap();
        assert_eq!(ins.status, InsertStatus::New);
        assert_eq!(ins.improvement, 3.0);

        let mut b = GridArchive::new(10).unwrap();
        b.insert(elite(5.0, [0.1, 0.1])).unwrap();
        let before = b.clone().metrics();
        let ins = b.insert(elite(4.0, [0.11, 0.12])).unwrap();
        assert_eq!(ins.status, InsertStatus::NotAdded);
        assert_eq!(ins.improvement, 0.0);
        assert_eq!(b.metrics(), before);
        assert_eq!(b.get(1, 1).unwrap().fitness, 5.0);

        let ins = b.insert(elite(6.5, [0.12, 0.19])).unwrap();
        assert_eq!(ins.status, InsertStatus::Improved);
        assert_eq!(ins.improvement, 1.5);
    }

    #[test]
    fn floor_gates_empty_cells() {
        let mut a = GridArchive::new(10).unwrap();
        let ins = a.insert(elite(-2.0, [0.5, 0.5])).unwrap();
        assert!(!ins.changed());
        assert_eq!(ins.improvement, 0.0);
        assert!(a.is_empty());
        let ins = a.insert(elite(0.0, [0.5, 0.5])).unwrap();
        assert!(!ins.changed());
    }

    #[test]
    fn reinserting_stored_elite_is_a_no_op() {
        let mut a = GridArchive::new(10).unwrap();
        let e = elite(2.0, [0.3, 0.7]);
        a.insert(e.clone()).unwrap();
        let ins = a.insert(e.clone()).unwrap();
        assert!(!ins.changed());
        assert_eq!(a.get(3, 7), Some(&e));
    }

    #[test]
    fn rejects_invalid_elites() {
        let mut a = GridArchive::new(10).unwrap();
        assert!(a.insert(elite(f64::NAN, [0.5, 0.5])).is_err());
        assert!(a.insert(elite(1.0, [1.5, 0.5])).is_err());
    }

    #[test]
    fn metrics_examples() {
        let a = GridArchive::new(10).unwrap();
        let m = a.metrics();
        assert_eq!((m.qd_score, m.coverage, m.best, m.average), (0.0, 0.0, None, None));

        let mut b = GridArchive::new(10).unwrap();
        b.insert(elite(7.0, [0.0, 0.0])).unwrap();
        let m = b.metrics();
        assert_eq!((m.qd_score, m.coverage, m.best, m.average), (7.0, 1.0, Some(7.0), Some(7.0)));
    }

    #[test]
    fn metrics_match_full_scan() {
        let mut rng = Rng::seed_from_u64(5);
        let mut a = GridArchive::new(8).unwrap();
        for _ in 0..100 {
            a.insert(elite(rng.random_range(-1.0..10.0), [rng.random(), rng.random()]))
                .unwrap();
        }
        let (mut sum, mut n, mut best) = (0.0, 0usize, f64::NEG_INFINITY);
        for r in 0..8 {
            for c in 0..8 {
                if let Some(e) = a.get(r, c) {
                    sum += e.fitness;
                    n += 1;
                    best = best.max(e.fitness);
                }
            }
        }
        let m = a.metrics();
        assert!((m.qd_score - sum).abs() < 1e-9);
        assert_eq!(m.coverage, 100.0 * n as f64 / 64.0);
        assert_eq!(m.best, Some(best));
        assert!((m.average.unwrap() - sum / n as f64).abs() < 1e-12);
    }

    #[test]
    fn stored_elites_map_to_their_cells() {
        let mut rng = Rng::seed_from_u64(6);
        let mut a = GridArchive::new(13).unwrap();
        for _ in 0..300 {
            a.insert(elite(rng.random_range(0.0..1.0), [rng.random(), rng.random()]))
                .unwrap();
        }
        for (cell, e) in a.elites() {
            assert_eq!(a.cell_index(&e.measure).unwrap(), cell);
        }
    }

    #[test]
    fn snapshot_and_heatmaps() {
        let mut a = GridArchive::new(4).unwrap();
        a.insert(elite(1.0, [0.1, 0.1])).unwrap();
        a.insert(elite(3.0, [0.9, 0.3])).unwrap();
        let dir = std::env::temp_dir().join(format!("wqdil-archive-{}", std::process::id()));
        a.save(&dir, &[1, 2]).unwrap();
        let b = GridArchive::load(&dir, 4, &[1, 2]).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(3, 1).unwrap().fitness, 3.0);
        assert_eq!(b.get(3, 1).unwrap().params.values(), &[3.0, 0.9f32 as f64]);
        std::fs::remove_dir_all(&dir).ok();

        let mut csv = Vec::new();
        a.write_heatmap_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "1,,,");
        assert_eq!(lines[3], ",3,,");

        let mut pgm = Vec::new();
        a.write_heatmap_pgm(&mut pgm).unwrap();
        assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
        let px = &pgm[pgm.len() - 16..];
        assert_eq!(px[0], 1);
        assert_eq!(px[13], 255);
        assert_eq!(px.iter().filter(|&&p| p == 0).count(), 14);
    }
}
