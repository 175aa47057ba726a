use std::sync::atomic::{AtomicUsize, Ordering};

use advx_core::attacks::*;
use advx_core::tensornet::{Architecture, ImageTensor, Network, Shape3};
use advx_testkit::reference::random_image;

/// Counts every query; exposes gradients so that any use would be visible.
struct Counting {
    net: Network,
    queries: AtomicUsize,
    gradients: AtomicUsize,
}

impl ConfidenceOracle for Counting {
    fn input_shape(&self) -> Shape3 {
        self.net.input_shape()
    }
    fn class_count(&self) -> usize {
        self.net.class_count()
    }
    fn confidences(&self, batch: &[f32]) -> advx_core::Result<Vec<Vec<f64>>> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        self.net.confidences(batch)
    }
}

impl GradientOracle for Counting {
    fn loss_gradient(&self, batch: &[f32], labels: &[usize]) -> advx_core::Result<Vec<f32>> {
        self.gradients.fetch_add(1, Ordering::SeqCst);
        self.net.loss_gradient(batch, labels)
    }
}

fn small() -> (Shape3, Network) {
    let s = Shape3::new(3, 8, 8);
    (s, Network::fixture(Architecture::CnnA, s, 4, 3).unwrap())
}

#[test]
fn zoo_is_query_only_and_bounded() {
    let (s, net) = small();
    let oracle = Counting {
        net,
        queries: AtomicUsize::new(0),
        gradients: AtomicUsize::new(0),
    };
    let params = ZooParams {
        iterations: 40,
        coords_per_iter: 32,
        step_size: 0.5,
        ..Default::default()
    };
    for (k, eps) in [0.1f32, 0.3, 0.5].into_iter().enumerate() {
        let x = ImageTensor::new(random_image(s, 0.0, 1.0, k as u64), s).unwrap();
        let adv = zoo_attack(&oracle, &x, 1, eps, &params, 9).unwrap();
        assert!(Norm::L2.distance(x.data(), adv.data()) <= eps as f64 + 1e-6);
        assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(oracle.queries.load(Ordering::SeqCst) > 0);
    assert_eq!(oracle.gradients.load(Ordering::SeqCst), 0);
}

#[test]
fn zoo_zero_epsilon_is_identity() {
    let (s, net) = small();
    let x = ImageTensor::new(random_image(s, 0.0, 1.0, 1), s).unwrap();
    assert_eq!(zoo_attack(&net, &x, 0, 0.0, &ZooParams::default(), 1).unwrap(), x);
}

#[test]
fn zoo_estimate_tracks_true_gradient() {
    // At the steepest coordinate of the network's own loss surface the
    // black-box estimate agrees with backprop to 1e-2 relative. The probe is
    // wider than the attack default so f32 rounding of the logits stays
    // well below the tolerance.
    for arch in [Architecture::CnnA, Architecture::CnnB] {
        for (s, classes) in [(Shape3::new(3, 8, 8), 4), (Shape3::cifar(), 10)] {
            let net = Network::fixture(arch, s, classes, 3).unwrap();
            for seed in 0..4 {
                let x = ImageTensor::new(random_image(s, 0.2, 0.8, seed), s).unwrap();
                let label = net.predict(&x).unwrap().label;
                let g = net.input_gradient(&x, label).unwrap();
                let i = (0..g.len()).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap();
                let xent = |batch: &[f32]| -> advx_core::Result<Vec<f64>> {
                    Ok(net
                        .confidences(batch)?
                        .into_iter()
                        .map(|c| -c[label].max(ZOO_PROBABILITY_FLOOR).ln())
                        .collect())
                };
                let est = zoo_gradient_estimate(xent, x.data(), &[i], 1e-3).unwrap();
                let rel = (est[0].1 - g[i] as f64).abs() / (g[i] as f64).abs();
                assert!(rel < 1e-2, "{arch:?} {s} seed {seed}: estimate {} vs {}", est[0].1, g[i]);
            }
        }
    }
}

#[test]
fn zoo_is_deterministic() {
    let (s, net) = small();
    let x = ImageTensor::new(random_image(s, 0.0, 1.0, 6), s).unwrap();
    let p = ZooParams {
        iterations: 10,
        coords_per_iter: 16,
        ..Default::default()
    };
    assert_eq!(zoo_attack(&net, &x, 2, 0.3, &p, 5).unwrap(), zoo_attack(&net, &x, 2, 0.3, &p, 5).unwrap());
}

#[test]
fn fgsm_contract() {
    let (s, net) = small();
    for seed in 0..20 {
        let x = ImageTensor::new(random_image(s, 0.0, 1.0, seed), s).unwrap();
        let label = (seed % 4) as usize;
        assert_eq!(fgsm(&net, &x, label, 0.0).unwrap(), x);
        for eps in [0.01f32, 0.02, 0.03] {
            let adv = fgsm(&net, &x, label, eps).unwrap();
            assert!(Norm::Linf.distance(x.data(), adv.data()) <= eps as f64 + 1e-6);
            assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let batch = fgsm_batch(&net, x.data(), &[label], &[0.0, 0.02]).unwrap();
        assert_eq!(batch[0], x.data());
        assert_eq!(batch[1], fgsm(&net, &x, label, 0.02).unwrap().data());
    }
}

#[test]
fn fgsm_follows_gradient_sign() {
    let (s, net) = small();
    let x = ImageTensor::new(random_image(s, 0.1, 0.9, 2), s).unwrap();
    let g = net.input_gradient(&x, 1).unwrap();
    let adv = fgsm(&net, &x, 1, 0.03).unwrap();
    for ((a, o), gi) in adv.data().iter().zip(x.data()).zip(&g) {
        let want = (o + 0.03 * if *gi > 0.0 { 1.0 } else if *gi < 0.0 { -1.0 } else { 0.0 }).clamp(0.0, 1.0);
        assert!((a - want).abs() < 1e-7);
    }
}

fn tiny_dataset(s: Shape3, n: usize) -> advx_core::dataset::Dataset {
    let images = (0..n)
        .map(|i| ImageTensor::new(random_image(s, 0.0, 1.0, 50 + i as u64), s).unwrap())
        .collect();
    let labels = (0..n).map(|i| i % 4).collect();
    advx_core::dataset::Dataset::new(images, labels, (0..4).map(|c| format!("c{c}")).collect()).unwrap()
}

#[test]
fn sweeps_are_complete_and_reproducible() {
    let (s, net) = small();
    let data = tiny_dataset(s, 6);
    let mut zoo = AttackConfig::zoo();
    zoo.zoo.iterations = 5;
    zoo.zoo.coords_per_iter = 16;
    zoo.seed = 3;
    for cfg in [AttackConfig::fgsm(), zoo] {
        let levels = attack_sweep(&net, &data, &cfg).unwrap();
        assert_eq!(levels.len(), cfg.epsilons.len());
        for (level, &eps) in levels.iter().zip(&cfg.epsilons) {
            assert_eq!(level.epsilon, eps);
            assert_eq!(level.instances.len(), 6);
            for (id, inst) in level.instances.iter().enumerate() {
                assert_eq!(inst.instance_id, id);
                assert_eq!(inst.true_label, data.labels()[id]);
                assert!(cfg.norm.distance(inst.original.data(), inst.adversarial.data()) <= eps as f64 + 1e-6);
                let rebuilt: Vec<f32> = inst
                    .original
                    .data()
                    .iter()
                    .zip(&inst.noise)
                    .map(|(o, n)| (o + n).clamp(0.0, 1.0))
                    .collect();
                assert_eq!(rebuilt, inst.adversarial.data());
                assert_eq!(inst.adv_embedding.len(), 128);
                assert_eq!(inst.adv_prediction, net.predict(&inst.adversarial).unwrap().label);
                if eps == 0.0 {
                    assert_eq!(inst.adversarial.data(), inst.original.data());
                    assert_eq!(inst.adv_prediction, inst.clean_prediction);
                }
            }
        }
        assert_eq!(levels, attack_sweep(&net, &data, &cfg).unwrap());
        assert_eq!(robust_accuracy(&levels[0].instances).unwrap(), natural_accuracy(&levels[0].instances).unwrap());
    }
}
