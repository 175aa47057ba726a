use super::GradientOracle;
use crate::tensornet::ImageTensor;
use crate::{Error, Result};

/// `clip(x + ε·sign(g), 0, 1)` with `sign(0) = 0`.
pub(crate) fn fgsm_step(x: &[f32], grad: &[f32], epsilon: f32) -> Vec<f32> {
    x.iter()
        .zip(grad)
        .map(|(&v, &g)| {
            let step = if g > 0.0 {
                epsilon
            } else if g < 0.0 {
                -epsilon
            } else {
                0.0
            };
            (v + step).clamp(0.0, 1.0)
        })
        .collect()
}

/// Fast Gradient Sign Method: one step of size ε along the sign of the loss
/// gradient, then clipping to the valid pixel range.
pub fn fgsm<N: GradientOracle + ?Sized>(net: &N, x: &ImageTensor, label: usize, epsilon: f32) -> Result<ImageTensor> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} must be non-negative")));
    }
    if x.shape() != net.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape().to_string(),
            actual: x.shape().to_string(),
        });
    }
    if label >= net.class_count() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            net.class_count()
        )));
    }
    if epsilon == 0.0 {
        return Ok(x.clone());
    }
    let grad = net.loss_gradient(x.data(), &[label])?;
    ImageTensor::clipped(fgsm_step(x.data(), &grad, epsilon), x.shape())
}

/// FGSM for a batch at several budgets. The gradient does not depend on ε,
/// so it is computed once per image. Returns one flat batch per ε.
pub fn fgsm_batch<N: GradientOracle + ?Sized>(
    net: &N,
    batch: &[f32],
    labels: &[usize],
    epsilons: &[f32],
) -> Result<Vec<Vec<f32>>> {
    if let Some(e) = epsilons.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::invalid(format!("epsilon {e} must be non-negative")));
    }
    let grad = net.loss_gradient(batch, labels)?;
    Ok(epsilons
        .iter()
        .map(|&eps| {
            if eps == 0.0 {
                batch.to_vec()
            } else {
                fgsm_step(batch, &grad, eps)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epsilon_is_identity() {
        let x = [0.0, 0.3, 1.0];
        assert_eq!(fgsm_step(&x, &[1.0, -1.0, 0.5], 0.0), x.to_vec());
    }

    #[test]
    fn step_follows_gradient_sign() {
        let out = fgsm_step(&[0.5, 0.5, 0.5], &[2.0, -0.1, 0.0], 0.01);
        assert!((out[0] - 0.51).abs() < 1e-7);
        assert!((out[1] - 0.49).abs() < 1e-7);
        assert_eq!(out[2], 0.5);
    }

    #[test]
    fn clips_at_one() {
        let out = fgsm_step(&[0.995, 0.01], &[1.0, -1.0], 0.03);
        assert_eq!(out, vec![1.0, 0.0]);
    }
}
