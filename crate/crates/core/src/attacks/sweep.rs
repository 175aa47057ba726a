use std::sync::Arc;

use rayon::prelude::*;

use super::{fgsm_batch, mix_seed, zoo_attack, AttackConfig, AttackMethod, ConfidenceOracle};
use crate::dataset::Dataset;
use crate::tensornet::{ImageTensor, Network, Prediction};
use crate::{Error, Result};

/// One attacked instance at one ε.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialInstance {
    pub instance_id: usize,
    pub original: Arc<ImageTensor>,
    /// Always equal to `clip(original + noise, 0, 1)` as computed in `f32`.
    pub adversarial: ImageTensor,
    pub noise: Vec<f32>,
    pub true_label: usize,
    pub clean_prediction: usize,
    pub adv_prediction: usize,
    pub clean_confidences: Arc<Vec<f64>>,
    pub adv_confidences: Vec<f64>,
    pub clean_embedding: Arc<Vec<f32>>,
    pub adv_embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepLevel {
    pub epsilon: f32,
    pub instances: Vec<AdversarialInstance>,
}

struct CleanPass {
    original: Arc<ImageTensor>,
    prediction: Prediction,
    confidences: Arc<Vec<f64>>,
    embedding: Arc<Vec<f32>>,
}

const CHUNK: usize = 64;

/// Embeddings and predictions for a list of images, batched.
fn evaluate(net: &Network, images: &[&[f32]]) -> Result<Vec<(Vec<f32>, Prediction)>> {
    let width = net.embedding_width();
    let k = net.class_count();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let batch: Vec<f32> = chunk.iter().flat_map(|img| img.iter().copied()).collect();
        let (emb, logits) = net.embed_and_logits_batch(&batch)?;
        for (e, l) in emb.chunks(width).zip(logits.chunks(k)) {
            out.push((e.to_vec(), Prediction::from_logits(l)));
        }
    }
    Ok(out)
}

/// Runs the configured attack at every ε of the grid.
///
/// Levels come back in grid order and instances in dataset order; instance
/// ids are dataset positions. Each instance carries clean and adversarial
/// predictions, confidences and embeddings.
pub fn attack_sweep(net: &Network, data: &Dataset, cfg: &AttackConfig) -> Result<Vec<SweepLevel>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot attack an empty dataset"));
    }
    if data.image_shape() != Some(net.input_shape()) {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape().to_string(),
            actual: format!("{:?}", data.image_shape()),
        });
    }
    if let Some(&y) = data.labels().iter().find(|&&y| y >= net.class_count()) {
        return Err(Error::invalid(format!("label {y} out of range for the network")));
    }

    let clean_inputs: Vec<&[f32]> = data.images().iter().map(|i| i.data()).collect();
    let clean: Vec<CleanPass> = evaluate(net, &clean_inputs)?
        .into_iter()
        .zip(data.images())
        .map(|((emb, pred), img)| CleanPass {
            original: Arc::new(img.clone()),
            confidences: Arc::new(pred.confidences.clone()),
            prediction: pred,
            embedding: Arc::new(emb),
        })
        .collect();

    // adversarial[level][instance]
    let adversarial: Vec<Vec<Vec<f32>>> = match cfg.method {
        AttackMethod::Fgsm => {
            let mut per_level = vec![Vec::with_capacity(data.len()); cfg.epsilons.len()];
            let p = net.input_shape().len();
            for (images, labels) in data.images().chunks(CHUNK).zip(data.labels().chunks(CHUNK)) {
                let batch: Vec<f32> = images.iter().flat_map(|i| i.data().iter().copied()).collect();
                for (level, out) in fgsm_batch(net, &batch, labels, &cfg.epsilons)?.into_iter().enumerate() {
                    per_level[level].extend(out.chunks(p).map(<[f32]>::to_vec));
                }
            }
            per_level
        }
        AttackMethod::Zoo => (0..cfg.epsilons.len())
            .map(|level| zoo_level(net, data, cfg, level))
            .collect::<Result<Vec<_>>>()?,
    };

    let shape = net.input_shape();
    cfg.epsilons
        .iter()
        .zip(adversarial)
        .map(|(&epsilon, raw)| {
            // Canonicalize so the stored noise reproduces the image exactly.
            let mut noises = Vec::with_capacity(raw.len());
            let mut images = Vec::with_capacity(raw.len());
            for (adv, c) in raw.iter().zip(&clean) {
                let orig = c.original.data();
                let noise: Vec<f32> = adv.iter().zip(orig).map(|(a, o)| a - o).collect();
                let rebuilt = ImageTensor::clipped(orig.iter().zip(&noise).map(|(o, n)| o + n).collect(), shape)?;
                noises.push(noise);
                images.push(rebuilt);
            }
            let inputs: Vec<&[f32]> = images.iter().map(|i| i.data()).collect();
            let evaluated = evaluate(net, &inputs)?;
            let instances = images
                .into_iter()
                .zip(noises)
                .zip(evaluated)
                .zip(clean.iter().zip(data.labels()))
                .enumerate()
                .map(|(id, (((adversarial, noise), (emb, pred)), (c, &y)))| AdversarialInstance {
                    instance_id: id,
                    original: Arc::clone(&c.original),
                    adversarial,
                    noise,
                    true_label: y,
                    clean_prediction: c.prediction.label,
                    adv_prediction: pred.label,
                    clean_confidences: Arc::clone(&c.confidences),
                    adv_confidences: pred.confidences,
                    clean_embedding: Arc::clone(&c.embedding),
                    adv_embedding: emb,
                })
                .collect();
            Ok(SweepLevel { epsilon, instances })
        })
        .collect()
}

/// Adversarial pixels of every instance at grid position `level` of a ZOO
/// sweep, in dataset order.
///
/// The attack sees the model only through a [`ConfidenceOracle`].
pub fn zoo_level<O: ConfidenceOracle + ?Sized>(
    oracle: &O,
    data: &Dataset,
    cfg: &AttackConfig,
    level: usize,
) -> Result<Vec<Vec<f32>>> {
    let eps = *cfg
        .epsilons
        .get(level)
        .ok_or_else(|| Error::invalid(format!("level {level} outside a {}-step grid", cfg.epsilons.len())))?;
    data.images()
        .par_iter()
        .zip(data.labels().par_iter())
        .enumerate()
        .map(|(id, (img, &y))| {
            let seed = mix_seed(&[cfg.seed, id as u64, level as u64]);
            zoo_attack(oracle, img, y, eps, &cfg.zoo, seed).map(ImageTensor::into_data)
        })
        .collect()
}

/// Fraction of instances whose adversarial prediction is the true label.
pub fn robust_accuracy(instances: &[AdversarialInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::invalid("robust accuracy of an empty list"));
    }
    let correct = instances.iter().filter(|i| i.adv_prediction == i.true_label).count();
    Ok(correct as f64 / instances.len() as f64)
}

/// Fraction of instances whose clean prediction is the true label.
pub fn natural_accuracy(instances: &[AdversarialInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::invalid("natural accuracy of an empty list"));
    }
    let correct = instances.iter().filter(|i| i.clean_prediction == i.true_label).count();
    Ok(correct as f64 / instances.len() as f64)
}
