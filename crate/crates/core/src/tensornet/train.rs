use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{softmax_cross_entropy, softmax_xent_grad, Network};
use crate::attacks::fgsm_step;
use crate::dataset::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Fraction of every mini-batch replaced by FGSM examples crafted on the
    /// current parameters.
    pub adversarial_fraction: f32,
    /// L∞ budget of those examples.
    pub adversarial_epsilon: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            adversarial_fraction: 0.0,
            adversarial_epsilon: 0.03,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.adversarial_fraction) {
            return Err(Error::invalid("adversarial fraction must lie in [0, 1]"));
        }
        if !(self.adversarial_epsilon >= 0.0) {
            return Err(Error::invalid("adversarial epsilon must be non-negative"));
        }
        Ok(())
    }
}

/// Loss trajectory of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss, one entry per SGD step.
    pub step_losses: Vec<f64>,
    /// Mean loss over each epoch's steps.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD on the cross-entropy loss. Deterministic for a given seed.
pub fn train(mut net: Network, train_set: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if train_set.image_shape() != Some(net.input_shape()) {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape().to_string(),
            actual: format!("{:?}", train_set.image_shape()),
        });
    }
    let k = net.class_count();
    if let Some(&y) = train_set.labels().iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
    }

    let p = net.input_shape().len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len() * p);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                batch.extend_from_slice(train_set.images()[i].data());
                labels.push(train_set.labels()[i]);
            }

            let n_adv = (cfg.adversarial_fraction * chunk.len() as f32).round() as usize;
            if n_adv > 0 && cfg.adversarial_epsilon > 0.0 {
                let head = &batch[..n_adv * p];
                let grad = net.input_gradient_batch(head, &labels[..n_adv])?;
                let crafted = fgsm_step(head, &grad, cfg.adversarial_epsilon);
                batch[..n_adv * p].copy_from_slice(&crafted);
            }

            let tape = net.forward_tape(&batch);
            let logits = tape.logits();
            let loss = logits
                .chunks(k)
                .zip(&labels)
                .map(|(row, &y)| softmax_cross_entropy(row, y))
                .sum::<Result<f64>>()?
                / chunk.len() as f64;
            let grad = softmax_xent_grad(logits, &labels, k, 1.0 / chunk.len() as f64);
            let (_, params) = net.backward(&tape, grad, true);
            net.apply_sgd(&params.expect("parameter gradients requested"), cfg.learning_rate);

            report.step_losses.push(loss);
            epoch_loss += loss;
            steps += 1;
        }
        report.epoch_losses.push(epoch_loss / steps as f64);
    }
    Ok((net, report))
}

/// Fraction of `data` whose predicted label matches the true label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    let p = net.input_shape().len();
    let mut correct = 0usize;
    for (images, labels) in data.images().chunks(256).zip(data.labels().chunks(256)) {
        let mut batch = Vec::with_capacity(images.len() * p);
        for img in images {
            net.check_input(img)?;
            batch.extend_from_slice(img.data());
        }
        correct += net
            .predict_batch(&batch)?
            .iter()
            .zip(labels)
            .filter(|(pred, &y)| pred.label == y)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::{Dense, ImageTensor, Layer, Shape3};

    fn toy() -> (Network, Dataset) {
        let s = Shape3::new(1, 1, 2);
        let dense = Dense {
            inputs: 2,
            outputs: 2,
            weight: vec![0.1, -0.1, -0.2, 0.3],
            bias: vec![0.0; 2],
        };
        let net = Network::new(s, vec![Layer::Flatten, Layer::Dense(dense), Layer::Softmax]).unwrap();
        let images = vec![
            ImageTensor::new(vec![1.0, 0.0], s).unwrap(),
            ImageTensor::new(vec![0.0, 1.0], s).unwrap(),
        ];
        let data = Dataset::new(images, vec![0, 1], vec!["a".into(), "b".into()]).unwrap();
        (net, data)
    }

    #[test]
    fn loss_decreases_on_separable_points() {
        let (net, data) = toy();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 2,
            learning_rate: 0.5,
            ..Default::default()
        };
        let (net, report) = train(net, &data, &cfg).unwrap();
        assert_eq!(report.step_losses.len(), 50);
        assert!(report.epoch_losses.last().unwrap() < &(report.epoch_losses[0] * 0.5));
        assert_eq!(accuracy(&net, &data).unwrap(), 1.0);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (net, data) = toy();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 1,
            seed: 11,
            adversarial_fraction: 1.0,
            ..Default::default()
        };
        let (a, ra) = train(net.clone(), &data, &cfg).unwrap();
        let (b, rb) = train(net, &data, &cfg).unwrap();
        assert_eq!(ra.step_losses, rb.step_losses);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_configs() {
        let (net, data) = toy();
        for cfg in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { adversarial_fraction: 1.5, ..Default::default() },
        ] {
            assert!(train(net.clone(), &data, &cfg).is_err());
        }
    }
}
