#![allow(dead_code)]

use advx_core::attacks::{attack_sweep, AttackConfig};
use advx_core::cube::DEFAULT_LEVELS;
use advx_core::dataset::Dataset;
use advx_core::projection::{project_levels, ProjectionConfig, ProjectionMethod};
use advx_core::tensornet::{Architecture, ImageTensor, Network, Shape3};
use advx_store::{artifact_from_level, AttackRun, Bundle, ModelEntry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SHAPE: Shape3 = Shape3::new(3, 8, 8);

pub fn dataset(n: usize, classes: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let images = (0..n)
        .map(|_| {
            let bytes: Vec<u8> = (0..SHAPE.len()).map(|_| rng.random()).collect();
            ImageTensor::from_bytes(&bytes, SHAPE).unwrap()
        })
        .collect();
    let labels = (0..n).map(|i| i % classes).collect();
    Dataset::new(images, labels, (0..classes).map(|c| format!("class{c}")).collect()).unwrap()
}

pub fn run(net: &Network, model: &str, data: &Dataset, mut cfg: AttackConfig) -> AttackRun {
    cfg.zoo.iterations = 3;
    cfg.zoo.coords_per_iter = 16;
    let levels = attack_sweep(net, data, &cfg).unwrap();
    let emb: Vec<Vec<Vec<f32>>> = levels
        .iter()
        .map(|l| l.instances.iter().map(|i| i.adv_embedding.clone()).collect())
        .collect();
    let coords = project_levels(&emb, &ProjectionConfig::default()).unwrap();
    let groups = levels
        .iter()
        .zip(&coords)
        .map(|(l, c)| artifact_from_level(l, c, DEFAULT_LEVELS, data.class_count()).unwrap())
        .collect();
    AttackRun {
        model: model.to_string(),
        config: cfg,
        groups,
    }
}

/// Two models, each attacked with FGSM and ZOO over four ε.
pub fn bundle(name: &str) -> Bundle {
    let data = dataset(40, 4);
    let a = Network::fixture(Architecture::CnnA, SHAPE, 4, 1).unwrap();
    let b = Network::fixture(Architecture::CnnB, SHAPE, 4, 2).unwrap();
    let runs = vec![
        run(&a, "cnn-a", &data, AttackConfig::fgsm()),
        run(&a, "cnn-a", &data, AttackConfig::zoo()),
        run(&b, "cnn-b", &data, AttackConfig::fgsm()),
        run(&b, "cnn-b", &data, AttackConfig::zoo()),
    ];
    Bundle {
        name: name.to_string(),
        seed: 0,
        dataset: data,
        models: vec![
            ModelEntry {
                name: "cnn-a".into(),
                architecture: Architecture::CnnA,
                adv_train_fraction: 0.0,
                network: a,
            },
            ModelEntry {
                name: "cnn-b".into(),
                architecture: Architecture::CnnB,
                adv_train_fraction: 0.0,
                network: b,
            },
        ],
        runs,
        projection: ProjectionMethod::Pca,
        projection_runs: 1,
        levels: DEFAULT_LEVELS,
    }
}
