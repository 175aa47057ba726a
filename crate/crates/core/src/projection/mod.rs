//! 2-D projection of penultimate embeddings.
//!
//! Clean and adversarial embeddings share one coordinate frame: PCA is fitted
//! on the clean embeddings together with the strongest-ε adversarial ones and
//! every ε level is transformed with that basis; t-SNE optimizes all levels'
//! embeddings jointly. Coordinates of all levels are then normalized together
//! into `[0.01, 0.99]²`.

mod pca;
mod tsne;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

pub use pca::{pca_fit, pca_transform, PcaBasis};
pub use tsne::{conditional_probabilities, symmetrize, tsne, TsneParams, PERPLEXITY_TOLERANCE};

use crate::{Error, Result};

/// `N × 2` coordinates.
pub type Coords = Vec<[f64; 2]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

impl ProjectionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ProjectionMethod::Pca => "pca",
            ProjectionMethod::Tsne => "tsne",
        }
    }
}

impl std::str::FromStr for ProjectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(ProjectionMethod::Pca),
            "tsne" => Ok(ProjectionMethod::Tsne),
            other => Err(Error::invalid(format!("unknown projection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FittedOn {
    Clean,
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRun {
    pub method: ProjectionMethod,
    pub seed: u64,
    pub coords: Coords,
    pub fitted_on: FittedOn,
}

/// Aligns every run to the first with orthogonal Procrustes (rotation or
/// reflection plus translation, no scaling), then averages element-wise.
pub fn align_and_average(runs: &[Coords]) -> Result<Coords> {
    let first = runs.first().ok_or_else(|| Error::invalid("no projection runs to average"))?;
    let n = first.len();
    if let Some(r) = runs.iter().find(|r| r.len() != n) {
        return Err(Error::invalid(format!("runs of {} and {} points", n, r.len())));
    }
    if runs.len() == 1 {
        return Ok(first.clone());
    }
    let mut sum = vec![[0.0f64; 2]; n];
    for run in runs {
        for (acc, p) in sum.iter_mut().zip(procrustes_align(run, first)) {
            acc[0] += p[0];
            acc[1] += p[1];
        }
    }
    let k = runs.len() as f64;
    Ok(sum.into_iter().map(|[x, y]| [x / k, y / k]).collect())
}

fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len().max(1) as f64;
    let s = points.iter().fold([0.0, 0.0], |m, p| [m[0] + p[0], m[1] + p[1]]);
    [s[0] / n, s[1] / n]
}

/// Rigid map of `source` minimizing squared distance to `target`.
pub fn procrustes_align(source: &[[f64; 2]], target: &[[f64; 2]]) -> Coords {
    let (cs, ct) = (centroid(source), centroid(target));
    let mut m = Matrix2::<f64>::zeros();
    for (s, t) in source.iter().zip(target) {
        let (a, b) = ([s[0] - cs[0], s[1] - cs[1]], [t[0] - ct[0], t[1] - ct[1]]);
        for r in 0..2 {
            for c in 0..2 {
                m[(r, c)] += a[r] * b[c];
            }
        }
    }
    let svd = m.svd(true, true);
    let rot = svd.u.expect("u requested") * svd.v_t.expect("v_t requested");
    source
        .iter()
        .map(|s| {
            let a = [s[0] - cs[0], s[1] - cs[1]];
            [
                a[0] * rot[(0, 0)] + a[1] * rot[(1, 0)] + ct[0],
                a[0] * rot[(0, 1)] + a[1] * rot[(1, 1)] + ct[1],
            ]
        })
        .collect()
}

/// Lower bound of normalized coordinates; the upper bound is `1 − MARGIN`.
pub const MARGIN: f64 = 0.01;

/// Per-axis bounds used by [`normalize_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn of(coords: &[[f64; 2]]) -> Self {
        let mut b = Bounds {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        };
        for p in coords {
            for a in 0..2 {
                b.min[a] = b.min[a].min(p[a]);
                b.max[a] = b.max[a].max(p[a]);
            }
        }
        b
    }
}

/// Min-max scaling per axis into `[0.01, 0.99]`; a constant axis maps to 0.5.
pub fn normalize_coords(coords: &[[f64; 2]]) -> Coords {
    normalize_with(coords, Bounds::of(coords))
}

pub fn normalize_with(coords: &[[f64; 2]], bounds: Bounds) -> Coords {
    coords
        .iter()
        .map(|p| {
            let mut out = [0.5; 2];
            for a in 0..2 {
                let span = bounds.max[a] - bounds.min[a];
                if span > 0.0 {
                    let t = (p[a] - bounds.min[a]) / span;
                    out[a] = (MARGIN + (1.0 - 2.0 * MARGIN) * t).clamp(MARGIN, 1.0 - MARGIN);
                }
            }
            out
        })
        .collect()
}

/// Projection settings for a whole ε sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionConfig {
    pub method: ProjectionMethod,
    pub runs: usize,
    pub seed: u64,
    pub tsne: TsneParams,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            method: ProjectionMethod::Pca,
            runs: 3,
            seed: 0,
            tsne: TsneParams::default(),
        }
    }
}

/// Normalized coordinates for every ε level in one shared frame.
///
/// `levels[0]` must be the ε = 0 level (its embeddings are the clean ones);
/// the last level is the strongest attack.
pub fn project_levels(levels: &[Vec<Vec<f32>>], cfg: &ProjectionConfig) -> Result<Vec<Coords>> {
    let n = levels.first().map(Vec::len).ok_or_else(|| Error::invalid("no levels to project"))?;
    if levels.iter().any(|l| l.len() != n) {
        return Err(Error::invalid("levels hold different instance counts"));
    }
    if cfg.runs == 0 {
        return Err(Error::invalid("at least one projection run is required"));
    }
    let raw: Vec<Coords> = match cfg.method {
        ProjectionMethod::Pca => {
            let mut joint = levels[0].clone();
            if levels.len() > 1 {
                joint.extend(levels[levels.len() - 1].iter().cloned());
            }
            // PCA is deterministic, so repeated runs would coincide.
            let basis = pca_fit(&joint)?;
            levels.iter().map(|l| pca_transform(&basis, l)).collect::<Result<_>>()?
        }
        ProjectionMethod::Tsne => {
            let joint: Vec<Vec<f32>> = levels.iter().flatten().cloned().collect();
            let runs = (0..cfg.runs as u64)
                .map(|r| tsne(&joint, &cfg.tsne, cfg.seed.wrapping_add(r)))
                .collect::<Result<Vec<_>>>()?;
            let averaged = align_and_average(&runs)?;
            averaged.chunks(n).map(<[[f64; 2]]>::to_vec).collect()
        }
    };
    let all: Vec<[f64; 2]> = raw.iter().flatten().copied().collect();
    if all.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Degenerate("non-finite projected coordinates".into()));
    }
    let bounds = Bounds::of(&all);
    Ok(raw.iter().map(|c| normalize_with(c, bounds)).collect())
}
