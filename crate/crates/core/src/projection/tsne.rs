//! Exact t-SNE: dense `O(N²)` affinities, no space partitioning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Coords;
use crate::{Error, Result};

/// Perplexity calibration tolerance (absolute, in perplexity units).
pub const PERPLEXITY_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// `None` picks `max(N / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            learning_rate: None,
        }
    }
}

fn squared_distances(rows: &[Vec<f32>]) -> Vec<f64> {
    let n = rows.len();
    let mut d = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(&a, &b)| {
                    let t = a as f64 - b as f64;
                    t * t
                })
                .sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Gaussian row for precision `beta`; returns the row and its Shannon
/// entropy in nats.
fn gaussian_row(dist: &[f64], skip: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut row: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == skip { 0.0 } else { (-(d - min) * beta).exp() })
        .collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    let entropy = -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    (row, entropy)
}

/// Row-stochastic conditional affinities `P(j | i)` whose per-row perplexity
/// `exp(H)` matches `perplexity`, found by bisection on the Gaussian
/// precision. Returns the `N × N` row-major matrix.
pub fn conditional_probabilities(rows: &[Vec<f32>], perplexity: f64) -> Result<Vec<f64>> {
    let n = rows.len();
    check_perplexity(n, perplexity)?;
    let dist = squared_distances(rows);
    let target = perplexity.ln();
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0f64;
        let mut best = gaussian_row(d, i, beta);
        for _ in 0..500 {
            let perp = best.1.exp();
            if (perp - perplexity).abs() < PERPLEXITY_TOLERANCE {
                break;
            }
            // Entropy falls as precision rises.
            if best.1 > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            best = gaussian_row(d, i, beta);
        }
        p[i * n..(i + 1) * n].copy_from_slice(&best.0);
    }
    Ok(p)
}

/// `(P + Pᵀ) / 2N`: symmetric, sums to one.
pub fn symmetrize(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if !(perplexity >= 3.0) || !(perplexity < n as f64 / 3.0) {
        return Err(Error::invalid(format!(
            "perplexity {perplexity} infeasible for {n} points (need 3 <= perplexity < N/3)"
        )));
    }
    Ok(())
}

/// Embeds rows in 2-D with exact t-SNE. Deterministic for a given seed.
pub fn tsne(rows: &[Vec<f32>], params: &TsneParams, seed: u64) -> Result<Coords> {
    let n = rows.len();
    check_perplexity(n, params.perplexity)?;
    if let Some(r) = rows.iter().find(|r| r.len() != rows[0].len()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{} columns", rows[0].len()),
            actual: format!("{} columns", r.len()),
        });
    }
    let p = symmetrize(&conditional_probabilities(rows, params.perplexity)?, n);
    let lr = params
        .learning_rate
        .unwrap_or_else(|| (n as f64 / params.early_exaggeration / 4.0).max(50.0));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kernel = vec![0.0f64; n * n];
    let mut grad = vec![[0.0f64; 2]; n];

    for it in 0..params.iterations {
        let exaggeration = if it < params.exaggeration_iterations {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < params.momentum_switch {
            params.initial_momentum
        } else {
            params.final_momentum
        };

        let mut z = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let k = 1.0 / (1.0 + dx * dx + dy * dy);
                kernel[i * n + j] = k;
                kernel[j * n + i] = k;
                z += 2.0 * k;
            }
        }
        for i in 0..n {
            let mut g = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = kernel[i * n + j];
                let coeff = (exaggeration * p[i * n + j] - k / z) * k;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for a in 0..2 {
                let same_sign = (grad[i][a] > 0.0) == (update[i][a] > 0.0);
                gains[i][a] = if same_sign { gains[i][a] * 0.8 } else { gains[i][a] + 0.2 };
                gains[i][a] = gains[i][a].max(0.01);
                update[i][a] = momentum * update[i][a] - lr * gains[i][a] * grad[i][a];
                y[i][a] += update[i][a];
            }
        }
        let mean = y.iter().fold([0.0, 0.0], |m, v| [m[0] + v[0], m[1] + v[1]]);
        for v in y.iter_mut() {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
    }
    if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(Error::Degenerate("t-SNE diverged".into()));
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_rows(n: usize) -> Vec<Vec<f32>> {
        (0..n).map(|i| vec![(i % 7) as f32, (i / 7) as f32 * 0.5, (i * i % 5) as f32]).collect()
    }

    #[test]
    fn rejects_infeasible_perplexity() {
        let rows = grid_rows(12);
        assert!(conditional_probabilities(&rows, 4.0).is_err());
        assert!(conditional_probabilities(&rows, 2.5).is_err());
        assert!(tsne(&rows, &TsneParams { perplexity: 5.0, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn conditional_rows_are_distributions() {
        let rows = grid_rows(30);
        let n = rows.len();
        let p = conditional_probabilities(&rows, 5.0).unwrap();
        for i in 0..n {
            let row = &p[i * n..(i + 1) * n];
            assert_eq!(row[i], 0.0);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let s = symmetrize(&p, n);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(s[i * n + j], s[j * n + i]);
            }
        }
    }

    #[test]
    fn same_seed_same_layout() {
        let rows = grid_rows(24);
        let params = TsneParams {
            perplexity: 5.0,
            iterations: 60,
            ..Default::default()
        };
        assert_eq!(tsne(&rows, &params, 3).unwrap(), tsne(&rows, &params, 3).unwrap());
    }
}
