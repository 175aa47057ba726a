//! Evasion attacks: FGSM (white-box, L∞) and ZOO (black-box, L2), ε sweeps
//! and robust accuracy.

mod fgsm;
mod sweep;
mod zoo;

use serde::{Deserialize, Serialize};

pub use fgsm::{fgsm, fgsm_batch};
pub(crate) use fgsm::fgsm_step;
pub use sweep::{attack_sweep, natural_accuracy, robust_accuracy, zoo_level, AdversarialInstance, SweepLevel};
pub use zoo::{zoo_attack, zoo_gradient_estimate, zoo_loss, ZOO_PROBABILITY_FLOOR};

use crate::tensornet::{Network, Shape3};
use crate::{Error, Result};

/// Query-only access to a classifier: images in, confidences out.
///
/// This is the only capability handed to black-box attacks.
pub trait ConfidenceOracle: Sync {
    fn input_shape(&self) -> Shape3;
    fn class_count(&self) -> usize;
    /// Softmax confidences for a flat batch of images, one row per image.
    /// Pixel values outside `[0, 1]` are accepted (finite-difference probes).
    fn confidences(&self, batch: &[f32]) -> Result<Vec<Vec<f64>>>;
}

/// White-box access: gradients of the cross-entropy loss w.r.t. the input.
pub trait GradientOracle: ConfidenceOracle {
    fn loss_gradient(&self, batch: &[f32], labels: &[usize]) -> Result<Vec<f32>>;
}

impl ConfidenceOracle for Network {
    fn input_shape(&self) -> Shape3 {
        Network::input_shape(self)
    }

    fn class_count(&self) -> usize {
        Network::class_count(self)
    }

    fn confidences(&self, batch: &[f32]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .predict_batch(batch)?
            .into_iter()
            .map(|p| p.confidences)
            .collect())
    }
}

impl GradientOracle for Network {
    fn loss_gradient(&self, batch: &[f32], labels: &[usize]) -> Result<Vec<f32>> {
        self.input_gradient_batch(batch, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Zoo,
}

impl AttackMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Zoo => "zoo",
        }
    }

    pub fn norm(&self) -> Norm {
        match self {
            AttackMethod::Fgsm => Norm::Linf,
            AttackMethod::Zoo => Norm::L2,
        }
    }

    /// The ε grid used for demonstrations, following RobustBench limits.
    pub fn default_epsilons(&self) -> Vec<f32> {
        match self {
            AttackMethod::Fgsm => vec![0.0, 0.01, 0.02, 0.03],
            AttackMethod::Zoo => vec![0.0, 0.1, 0.3, 0.5],
        }
    }
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "zoo" => Ok(AttackMethod::Zoo),
            other => Err(Error::invalid(format!("unknown attack method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L2,
}

impl Norm {
    pub fn name(&self) -> &'static str {
        match self {
            Norm::Linf => "linf",
            Norm::L2 => "l2",
        }
    }

    /// Norm of a perturbation, accumulated in `f64`.
    pub fn measure(&self, noise: &[f32]) -> f64 {
        match self {
            Norm::Linf => noise.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs())),
            Norm::L2 => noise.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt(),
        }
    }

    /// Norm of `b − a`, with the difference taken in `f64`.
    pub fn distance(&self, a: &[f32], b: &[f32]) -> f64 {
        let d = a.iter().zip(b).map(|(&x, &y)| y as f64 - x as f64);
        match self {
            Norm::Linf => d.fold(0.0, |m, v| m.max(v.abs())),
            Norm::L2 => d.map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// ZOO hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooParams {
    /// Weight of the misclassification loss against the squared distortion.
    pub c: f64,
    /// Confidence margin of the hinge loss.
    pub kappa: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub coords_per_iter: usize,
    /// Finite-difference probe width.
    pub h: f32,
}

impl Default for ZooParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            kappa: 0.0,
            iterations: 300,
            step_size: 0.01,
            coords_per_iter: 128,
            h: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub norm: Norm,
    /// Ascending, starting at 0.
    pub epsilons: Vec<f32>,
    pub zoo: ZooParams,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(method: AttackMethod, epsilons: Vec<f32>) -> Self {
        Self {
            method,
            norm: method.norm(),
            epsilons,
            zoo: ZooParams::default(),
            seed: 0,
        }
    }

    pub fn fgsm() -> Self {
        Self::new(AttackMethod::Fgsm, AttackMethod::Fgsm.default_epsilons())
    }

    pub fn zoo() -> Self {
        Self::new(AttackMethod::Zoo, AttackMethod::Zoo.default_epsilons())
    }

    pub fn max_epsilon(&self) -> f32 {
        self.epsilons.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.norm != self.method.norm() {
            return Err(Error::invalid(format!(
                "{} requires the {} norm",
                self.method.name(),
                self.method.norm().name()
            )));
        }
        match self.epsilons.first() {
            Some(&e) if e == 0.0 => {}
            _ => return Err(Error::invalid("the epsilon grid must start at 0")),
        }
        if !self.epsilons.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("epsilons must be strictly ascending"));
        }
        if self.epsilons.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("epsilons must be finite"));
        }
        if self.method == AttackMethod::Zoo {
            let z = &self.zoo;
            if !(z.c > 0.0) || !(z.kappa >= 0.0) || !(z.step_size > 0.0) || !(z.h > 0.0) {
                return Err(Error::invalid("zoo requires c > 0, kappa >= 0, step_size > 0, h > 0"));
            }
            if z.coords_per_iter == 0 {
                return Err(Error::invalid("zoo needs at least one coordinate per iteration"));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent per-task seeds.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(AttackConfig::fgsm().validate().is_ok());
        assert!(AttackConfig::zoo().validate().is_ok());
        let mut c = AttackConfig::fgsm();
        c.norm = Norm::L2;
        assert!(c.validate().is_err());
        let mut c = AttackConfig::fgsm();
        c.epsilons = vec![0.01, 0.02];
        assert!(c.validate().is_err());
        c.epsilons = vec![0.0, 0.02, 0.02];
        assert!(c.validate().is_err());
        let mut c = AttackConfig::zoo();
        c.zoo.c = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn norms() {
        let v = [3.0f32, -4.0];
        assert_eq!(Norm::Linf.measure(&v), 4.0);
        assert_eq!(Norm::L2.measure(&v), 5.0);
    }
}
