//! Direct `f64` forward pass over a network's parameters.

use advx_core::tensornet::{ActShape, Layer, Network, Shape3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Result of a reference forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub logits: Vec<f64>,
    /// Input of the final dense layer.
    pub embedding: Vec<f64>,
    /// ReLU on/off bits and pooling winners, in evaluation order. Two inputs
    /// with equal patterns lie in the same linear region of the network.
    pub pattern: Vec<u32>,
}

pub fn forward(net: &Network, x: &[f32]) -> Trace {
    forward_f64(net, &x.iter().map(|&v| v as f64).collect::<Vec<_>>())
}

/// Reference forward on an `f64` input, so that probes of width `1e-4` are
/// not rounded away.
pub fn forward_f64(net: &Network, x: &[f64]) -> Trace {
    let mut act = x.to_vec();
    let mut shape = ActShape::Spatial(net.input_shape());
    let mut pattern = Vec::new();
    let mut embedding = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        if i == net.embedding_layer() {
            embedding = act.clone();
        }
        act = match (layer, shape) {
            (Layer::Conv2d(c), ActShape::Spatial(s)) => {
                let k = c.kernel as isize;
                let pad = c.padding as isize;
                let oh = s.height + 2 * c.padding + 1 - c.kernel;
                let ow = s.width + 2 * c.padding + 1 - c.kernel;
                let mut out = vec![0.0; c.out_channels * oh * ow];
                for o in 0..c.out_channels {
                    for r in 0..oh {
                        for q in 0..ow {
                            let mut sum = c.bias[o] as f64;
                            for ci in 0..c.in_channels {
                                for dr in 0..k {
                                    for dq in 0..k {
                                        let y = r as isize + dr - pad;
                                        let z = q as isize + dq - pad;
                                        if y < 0 || z < 0 || y >= s.height as isize || z >= s.width as isize {
                                            continue;
                                        }
                                        let w = c.weight[((o * c.in_channels + ci) * c.kernel + dr as usize) * c.kernel + dq as usize];
                                        sum += w as f64 * act[(ci * s.height + y as usize) * s.width + z as usize];
                                    }
                                }
                            }
                            out[(o * oh + r) * ow + q] = sum;
                        }
                    }
                }
                shape = ActShape::Spatial(Shape3::new(c.out_channels, oh, ow));
                out
            }
            (Layer::Relu, _) => act
                .iter()
                .map(|&v| {
                    pattern.push((v > 0.0) as u32);
                    v.max(0.0)
                })
                .collect(),
            (Layer::MaxPool2x2, ActShape::Spatial(s)) => {
                let (oh, ow) = (s.height / 2, s.width / 2);
                let mut out = vec![0.0; s.channels * oh * ow];
                for ch in 0..s.channels {
                    for r in 0..oh {
                        for q in 0..ow {
                            let mut best = (f64::NEG_INFINITY, 0u32);
                            for (n, (dr, dq)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                                let v = act[(ch * s.height + 2 * r + dr) * s.width + 2 * q + dq];
                                if v > best.0 {
                                    best = (v, n as u32);
                                }
                            }
                            pattern.push(best.1);
                            out[(ch * oh + r) * ow + q] = best.0;
                        }
                    }
                }
                shape = ActShape::Spatial(Shape3::new(s.channels, oh, ow));
                out
            }
            (Layer::Flatten, s) => {
                shape = ActShape::Flat(s.len());
                act
            }
            (Layer::Dense(d), _) => {
                let out = (0..d.outputs)
                    .map(|o| {
                        d.bias[o] as f64
                            + (0..d.inputs).map(|j| d.weight[o * d.inputs + j] as f64 * act[j]).sum::<f64>()
                    })
                    .collect();
                shape = ActShape::Flat(d.outputs);
                out
            }
            (Layer::Softmax, _) => act,
            (layer, s) => panic!("reference forward: {} after {s}", layer.kind_name()),
        };
    }
    Trace {
        logits: act,
        embedding,
        pattern,
    }
}

/// Cross-entropy of `label` under `logits`, via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - logits[label]
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Outcome of comparing a claimed gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates redrawn because a ReLU or pooling decision flipped
    /// between `x − h` and `x + h`.
    pub skipped_kinks: usize,
}

/// Checks `claimed` (the loss gradient at `x`) against central differences of
/// the reference loss on `count` random coordinates.
pub fn check_gradient(
    net: &Network,
    x: &[f32],
    label: usize,
    claimed: &[f32],
    count: usize,
    h: f64,
    floor: f64,
    seed: u64,
) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    let base: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    while checked < count {
        let i = rng.random_range(0..x.len());
        let probe = |delta: f64| {
            let mut z = base.clone();
            z[i] += delta;
            forward_f64(net, &z)
        };
        let (plus, minus) = (probe(h), probe(-h));
        if plus.pattern != minus.pattern {
            skipped += 1;
            if skipped > 20 * count {
                panic!("too many kinks near the test point");
            }
            continue;
        }
        let fd = (cross_entropy(&plus.logits, label) - cross_entropy(&minus.logits, label)) / (2.0 * h);
        worst = worst.max(relative_error(claimed[i] as f64, fd, floor));
        checked += 1;
    }
    GradientCheck {
        max_relative_error: worst,
        checked,
        skipped_kinks: skipped,
    }
}

/// A random image with pixels in `[lo, hi]`.
pub fn random_image(shape: Shape3, lo: f32, hi: f32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shape.len()).map(|_| rng.random_range(lo..=hi)).collect()
}
