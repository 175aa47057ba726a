//! Multi-resolution binned aggregation over normalized 2-D coordinates.
//!
//! Level `k` is a `G × G` grid with `G = 10·(k + 1)` over `[0, 1]²`. Bins are
//! half-open except along the top edge, where coordinate 1.0 falls into the
//! last bin. Every non-empty bin records its count, a per-class histogram of
//! predictions, the mode class (lowest class wins ties) and a representative:
//! the lowest-id instance predicted as the mode class.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_LEVELS: usize = 4;

pub const fn grid_size(level: usize) -> usize {
    10 * (level + 1)
}

/// Bin of `coord` on a `grid × grid` lattice.
pub fn bin_index(coord: [f64; 2], grid: usize) -> Result<(usize, usize)> {
    if !coord.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!(
            "coordinate ({}, {}) outside [0, 1]²",
            coord[0], coord[1]
        )));
    }
    let cell = |v: f64| ((v * grid as f64).floor() as usize).min(grid - 1);
    Ok((cell(coord[0]), cell(coord[1])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub i: usize,
    pub j: usize,
    pub count: usize,
    pub histogram: Vec<usize>,
    pub mode_class: usize,
    pub representative: usize,
    /// Coordinates of the representative.
    pub rep_x: f64,
    pub rep_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeLevel {
    pub grid: usize,
    /// Non-empty bins in `(i, j)` order.
    pub bins: Vec<Bin>,
}

impl CubeLevel {
    pub fn max_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).max().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCube {
    pub instance_count: usize,
    pub class_count: usize,
    pub levels: Vec<CubeLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub i: usize,
    pub j: usize,
    pub cx: f64,
    pub cy: f64,
    pub count: usize,
    /// Glyph radius in `(0, 1]`: `sqrt(count / level max count)`.
    pub radius_hint: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Viewport {
    pub const FULL: Viewport = Viewport {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let v = Viewport { x0, y0, x1, y1 };
        let unit = |t: f64| (0.0..=1.0).contains(&t);
        if !(unit(x0) && unit(y0) && unit(x1) && unit(y1)) || !(x0 < x1 && y0 < y1) {
            return Err(Error::invalid(format!(
                "viewport ({x0}, {y0})-({x1}, {y1}) must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1"
            )));
        }
        Ok(v)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    fn intersects_bin(&self, i: usize, j: usize, grid: usize) -> bool {
        let g = grid as f64;
        let overlaps = |lo: f64, hi: f64, k: usize| (k as f64) / g < hi && ((k + 1) as f64) / g > lo;
        overlaps(self.x0, self.x1, i) && overlaps(self.y0, self.y1, j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub i: usize,
    pub j: usize,
    pub instance_id: usize,
    pub x: f64,
    pub y: f64,
    pub mode_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewResult {
    pub representatives: Vec<Representative>,
    pub density: Vec<DensityEntry>,
}

/// Aggregates points into `level_count` grid levels.
pub fn build_cube(
    coords: &[[f64; 2]],
    predictions: &[usize],
    instance_ids: &[usize],
    level_count: usize,
    class_count: usize,
) -> Result<BinCube> {
    if coords.len() != predictions.len() || coords.len() != instance_ids.len() {
        return Err(Error::invalid(format!(
            "{} coordinates, {} predictions, {} ids",
            coords.len(),
            predictions.len(),
            instance_ids.len()
        )));
    }
    if level_count == 0 {
        return Err(Error::invalid("a cube needs at least one level"));
    }
    if let Some(&c) = predictions.iter().find(|&&c| c >= class_count) {
        return Err(Error::invalid(format!("prediction {c} out of range for {class_count} classes")));
    }
    let levels = (0..level_count)
        .map(|level| {
            let grid = grid_size(level);
            // Member indices per flat bin.
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); grid * grid];
            for (k, &c) in coords.iter().enumerate() {
                let (i, j) = bin_index(c, grid)?;
                members[i * grid + j].push(k);
            }
            let bins = members
                .into_iter()
                .enumerate()
                .filter(|(_, m)| !m.is_empty())
                .map(|(flat, m)| {
                    let mut histogram = vec![0usize; class_count];
                    for &k in &m {
                        histogram[predictions[k]] += 1;
                    }
                    let mode_class = crate::tensornet::argmax(&histogram);
                    let rep = m
                        .iter()
                        .copied()
                        .filter(|&k| predictions[k] == mode_class)
                        .min_by_key(|&k| instance_ids[k])
                        .expect("mode class has members");
                    Bin {
                        i: flat / grid,
                        j: flat % grid,
                        count: m.len(),
                        histogram,
                        mode_class,
                        representative: instance_ids[rep],
                        rep_x: coords[rep][0],
                        rep_y: coords[rep][1],
                    }
                })
                .collect();
            Ok(CubeLevel { grid, bins })
        })
        .collect::<Result<_>>()?;
    Ok(BinCube {
        instance_count: coords.len(),
        class_count,
        levels,
    })
}

impl BinCube {
    pub fn level(&self, level: usize) -> Result<&CubeLevel> {
        self.levels.get(level).ok_or_else(|| {
            Error::invalid(format!("level {level} out of range for {} levels", self.levels.len()))
        })
    }

    pub fn bin_index(&self, coord: [f64; 2], level: usize) -> Result<(usize, usize)> {
        bin_index(coord, self.level(level)?.grid)
    }

    /// One entry per non-empty bin at `level`.
    pub fn density_map(&self, level: usize) -> Result<Vec<DensityEntry>> {
        let lvl = self.level(level)?;
        Ok(lvl.bins.iter().map(|b| density_entry(b, lvl)).collect())
    }

    /// Representatives of the non-empty bins overlapping `viewport` whose
    /// representative lies inside it, plus the density of every overlapping
    /// bin. Both lists are in `(i, j)` order.
    pub fn query_view(&self, viewport: &Viewport, level: usize) -> Result<ViewResult> {
        let viewport = Viewport::new(viewport.x0, viewport.y0, viewport.x1, viewport.y1)?;
        let lvl = self.level(level)?;
        let mut representatives = Vec::new();
        let mut density = Vec::new();
        for b in lvl.bins.iter().filter(|b| viewport.intersects_bin(b.i, b.j, lvl.grid)) {
            density.push(density_entry(b, lvl));
            if viewport.contains(b.rep_x, b.rep_y) {
                representatives.push(Representative {
                    i: b.i,
                    j: b.j,
                    instance_id: b.representative,
                    x: b.rep_x,
                    y: b.rep_y,
                    mode_class: b.mode_class,
                });
            }
        }
        Ok(ViewResult {
            representatives,
            density,
        })
    }
}

fn density_entry(b: &Bin, lvl: &CubeLevel) -> DensityEntry {
    let g = lvl.grid as f64;
    DensityEntry {
        i: b.i,
        j: b.j,
        cx: (b.i as f64 + 0.5) / g,
        cy: (b.j as f64 + 0.5) / g,
        count: b.count,
        radius_hint: (b.count as f64 / lvl.max_count() as f64).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_index_examples() {
        assert_eq!(bin_index([0.55, 0.55], grid_size(0)).unwrap(), (5, 5));
        assert_eq!(bin_index([0.55, 0.55], grid_size(1)).unwrap(), (11, 11));
        assert_eq!(bin_index([1.0, 0.0], grid_size(0)).unwrap(), (9, 0));
        assert!(bin_index([1.01, 0.5], 10).is_err());
        assert!(bin_index([-0.1, 0.5], 10).is_err());
        assert!(bin_index([f64::NAN, 0.5], 10).is_err());
    }

    #[test]
    fn mode_and_representative() {
        let coords = [[0.51, 0.52], [0.53, 0.51], [0.55, 0.55], [0.52, 0.58]];
        // cat = 3, dog = 5
        let preds = [5, 3, 3, 3];
        let ids = [10, 42, 17, 30];
        let cube = build_cube(&coords, &preds, &ids, 1, 10).unwrap();
        let bins = &cube.levels[0].bins;
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].mode_class, 3);
        assert_eq!(bins[0].representative, 17);
        assert_eq!(bins[0].count, 4);
    }

    #[test]
    fn histogram_ties_pick_lowest_class() {
        let coords = [[0.1, 0.1], [0.11, 0.11]];
        let cube = build_cube(&coords, &[7, 2], &[0, 1], 1, 10).unwrap();
        assert_eq!(cube.levels[0].bins[0].mode_class, 2);
        assert_eq!(cube.levels[0].bins[0].representative, 1);
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(build_cube(&[[0.1, 0.1]], &[0, 1], &[0], 2, 10).is_err());
    }

    #[test]
    fn density_examples() {
        let empty = build_cube(&[], &[], &[], 4, 10).unwrap();
        assert!(empty.density_map(0).unwrap().is_empty());
        let coords = vec![[0.42, 0.37]; 25];
        let ids: Vec<usize> = (0..25).collect();
        let cube = build_cube(&coords, &vec![1; 25], &ids, 4, 10).unwrap();
        let d = cube.density_map(2).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].count, 25);
        assert_eq!(d[0].radius_hint, 1.0);
        assert!(cube.density_map(4).is_err());
    }

    #[test]
    fn viewport_over_one_bin() {
        let coords = [[0.55, 0.55], [0.45, 0.55], [0.65, 0.55], [0.55, 0.62]];
        let cube = build_cube(&coords, &[0, 1, 2, 3], &[0, 1, 2, 3], 1, 10).unwrap();
        let view = cube.query_view(&Viewport::new(0.5, 0.5, 0.6, 0.6).unwrap(), 0).unwrap();
        assert_eq!(view.representatives.len(), 1);
        assert_eq!(view.representatives[0].instance_id, 0);
        assert_eq!(view.density.len(), 1);
        assert!(cube.query_view(&Viewport { x0: 0.6, y0: 0.0, x1: 0.5, y1: 1.0 }, 0).is_err());
    }
}
