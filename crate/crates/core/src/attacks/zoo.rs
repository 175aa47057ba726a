//! Zeroth-order optimization attack.
//!
//! Minimizes `‖x′ − x‖₂² + c·f(x′)` over `x′ ∈ [0, 1]^p` using only model
//! confidences. Gradients are estimated per coordinate with symmetric finite
//! differences, the iterate takes a plain coordinate step, and is then
//! projected back onto the pixel box and the L2 ball of radius ε.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConfidenceOracle, ZooParams};
use crate::tensornet::{argmax, ImageTensor};
use crate::{Error, Result};

/// Probabilities are floored here before taking logs.
pub const ZOO_PROBABILITY_FLOOR: f64 = 1e-12;

/// Untargeted hinge on log-probabilities:
/// `max(log p_y − max_{i≠y} log p_i, −κ)`.
///
/// With `κ = 0` the loss reaches zero exactly when some other class is at
/// least as likely as the true one.
pub fn zoo_loss(confidences: &[f64], label: usize, kappa: f64) -> f64 {
    let log = |p: f64| p.max(ZOO_PROBABILITY_FLOOR).ln();
    let true_log = log(confidences[label]);
    let other = confidences
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label)
        .map(|(_, &p)| log(p))
        .fold(f64::NEG_INFINITY, f64::max);
    (true_log - other).max(-kappa)
}

/// Symmetric finite-difference gradient of a black-box objective at `point`,
/// restricted to `coords`.
///
/// `objective` scores a flat batch of candidate points (one value per point).
/// The divisor is the probe width actually realized in `f32`, which keeps the
/// estimate exact for quadratics despite rounding of `point ± h`.
pub fn zoo_gradient_estimate<F>(mut objective: F, point: &[f32], coords: &[usize], h: f32) -> Result<Vec<(usize, f64)>>
where
    F: FnMut(&[f32]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference width must be positive"));
    }
    if let Some(&i) = coords.iter().find(|&&i| i >= point.len()) {
        return Err(Error::invalid(format!(
            "coordinate {i} outside a {}-dimensional point",
            point.len()
        )));
    }
    if coords.is_empty() {
        return Ok(Vec::new());
    }
    let p = point.len();
    let mut batch = Vec::with_capacity(2 * coords.len() * p);
    let mut widths = Vec::with_capacity(coords.len());
    for &i in coords {
        let plus = point[i] + h;
        let minus = point[i] - h;
        for value in [plus, minus] {
            let start = batch.len();
            batch.extend_from_slice(point);
            batch[start + i] = value;
        }
        widths.push(plus as f64 - minus as f64);
    }
    let values = objective(&batch)?;
    if values.len() != 2 * coords.len() {
        return Err(Error::invalid(format!(
            "objective returned {} values for {} probes",
            values.len(),
            2 * coords.len()
        )));
    }
    Ok(coords
        .iter()
        .zip(values.chunks_exact(2))
        .zip(widths)
        .map(|((&i, pair), width)| {
            let g = if width > 0.0 { (pair[0] - pair[1]) / width } else { 0.0 };
            (i, g)
        })
        .collect())
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&u, &v)| {
            let d = u as f64 - v as f64;
            d * d
        })
        .sum()
}

/// Untargeted ZOO attack within an L2 ball of radius `epsilon`.
///
/// Returns the lowest-objective iterate that is misclassified, or the final
/// iterate if none is. `epsilon = 0` returns `x` unchanged.
pub fn zoo_attack<O: ConfidenceOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    label: usize,
    epsilon: f32,
    params: &ZooParams,
    seed: u64,
) -> Result<ImageTensor> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} must be non-negative")));
    }
    if x.shape() != oracle.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: oracle.input_shape().to_string(),
            actual: x.shape().to_string(),
        });
    }
    if label >= oracle.class_count() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            oracle.class_count()
        )));
    }
    if epsilon == 0.0 || params.iterations == 0 {
        return Ok(x.clone());
    }

    let origin = x.data();
    let p = origin.len();
    let eps = epsilon as f64;
    let objective = |batch: &[f32]| -> Result<Vec<f64>> {
        let conf = oracle.confidences(batch)?;
        Ok(batch
            .chunks_exact(p)
            .zip(conf)
            .map(|(z, c)| squared_distance(z, origin) + params.c * zoo_loss(&c, label, params.kappa))
            .collect())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = origin.to_vec();
    let mut best: Option<(f64, Vec<f32>)> = None;
    let k = params.coords_per_iter.min(p);

    for _ in 0..params.iterations {
        let coords = index::sample(&mut rng, p, k).into_vec();
        let grad = zoo_gradient_estimate(objective, &current, &coords, params.h)?;
        for (i, g) in grad {
            current[i] = (current[i] as f64 - params.step_size * g) as f32;
        }
        project(&mut current, origin, eps);

        let conf = oracle.confidences(&current)?;
        let conf = &conf[0];
        if argmax(conf) != label {
            let value = squared_distance(&current, origin) + params.c * zoo_loss(conf, label, params.kappa);
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, current.clone()));
            }
        }
    }

    let chosen = best.map(|(_, img)| img).unwrap_or(current);
    ImageTensor::clipped(chosen, x.shape())
}

/// Clips to `[0, 1]` and rescales the perturbation onto the L2 ball.
fn project(current: &mut [f32], origin: &[f32], eps: f64) {
    for v in current.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let norm = squared_distance(current, origin).sqrt();
    if norm > eps {
        let scale = eps / norm;
        for (v, &o) in current.iter_mut().zip(origin) {
            // A convex combination of two in-box points stays in the box.
            *v = (o as f64 + (*v as f64 - o as f64) * scale).clamp(0.0, 1.0) as f32;
        }
    }
}
