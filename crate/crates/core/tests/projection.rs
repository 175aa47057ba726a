use advx_core::projection::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn anisotropic(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| (0..d).map(|j| (normal.sample(&mut rng) * (d - j) as f64 + j as f64) as f32).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn captured_variance(rows: &[Vec<f32>], mean: &[f64], axes: &[Vec<f64>]) -> f64 {
    rows.iter()
        .map(|r| {
            let c: Vec<f64> = r.iter().zip(mean).map(|(&v, m)| v as f64 - m).collect();
            axes.iter().map(|a| dot(&c, a).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / (rows.len() as f64 - 1.0)
}

#[test]
fn pca_is_orthonormal_and_variance_optimal() {
    let rows = anisotropic(200, 8, 1);
    let b = pca_fit(&rows).unwrap();
    assert!((dot(&b.components[0], &b.components[0]) - 1.0).abs() < 1e-6);
    assert!((dot(&b.components[1], &b.components[1]) - 1.0).abs() < 1e-6);
    assert!(dot(&b.components[0], &b.components[1]).abs() < 1e-6);
    let best = captured_variance(&rows, &b.mean, &b.components);
    assert!((best - b.variances[0] - b.variances[1]).abs() < 1e-6 * best);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        // Random orthonormal pair by Gram-Schmidt.
        let mut u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nu = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= nu);
        let mut v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = dot(&u, &v);
        v.iter_mut().zip(&u).for_each(|(x, y)| *x -= p * y);
        let nv = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        assert!(captured_variance(&rows, &b.mean, &[u, v]) <= best * (1.0 + 1e-9));
    }
}

#[test]
fn perplexity_calibration() {
    let rows = anisotropic(90, 5, 3);
    for perp in [5.0, 12.0, 29.0] {
        let p = conditional_probabilities(&rows, perp).unwrap();
        for row in p.chunks(rows.len()) {
            let h: f64 = -row.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
            assert!((h.exp() - perp).abs() < 1e-4, "perplexity {} vs {perp}", h.exp());
        }
    }
}

#[test]
fn tsne_keeps_two_clusters_apart() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f32>> = (0..60)
        .map(|i| {
            let centre = if i < 30 { 0.0 } else { 10.0 };
            (0..10).map(|_| (centre + normal.sample(&mut rng)) as f32).collect()
        })
        .collect();
    let params = TsneParams {
        perplexity: 10.0,
        iterations: 500,
        ..Default::default()
    };
    let y = tsne(&rows, &params, 7).unwrap();
    // Every point's nearest neighbour in the layout is from its own cluster.
    for i in 0..60 {
        let nearest = (0..60)
            .filter(|&j| j != i)
            .min_by(|&a, &b| {
                let d = |j: usize| (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        assert_eq!(i < 30, nearest < 30, "point {i}");
    }
}

fn rigid(points: &[[f64; 2]], angle: f64, reflect: bool, shift: [f64; 2]) -> Vec<[f64; 2]> {
    let (s, c) = angle.sin_cos();
    points
        .iter()
        .map(|p| {
            let y = if reflect { -p[1] } else { p[1] };
            [c * p[0] - s * y + shift[0], s * p[0] + c * y + shift[1]]
        })
        .collect()
}

#[test]
fn procrustes_undoes_rigid_motions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base: Vec<[f64; 2]> = (0..50).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)]).collect();
    let runs = vec![
        base.clone(),
        rigid(&base, 0.7, false, [5.0, -2.0]),
        rigid(&base, 2.9, true, [-1.0, 0.5]),
        rigid(&base, std::f64::consts::PI / 2.0, false, [0.0, 0.0]),
    ];
    let avg = align_and_average(&runs).unwrap();
    let residual = avg
        .iter()
        .zip(&base)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    assert!(residual < 1e-6, "{residual}");
}

#[test]
fn projected_levels_are_normalized_jointly() {
    let clean = anisotropic(40, 6, 8);
    let shifted: Vec<Vec<f32>> = clean.iter().map(|r| r.iter().map(|v| v * 1.5).collect()).collect();
    for method in [ProjectionMethod::Pca, ProjectionMethod::Tsne] {
        let cfg = ProjectionConfig {
            method,
            runs: 2,
            seed: 1,
            tsne: TsneParams {
                perplexity: 10.0,
                iterations: 200,
                ..Default::default()
            },
        };
        let out = project_levels(&[clean.clone(), shifted.clone()], &cfg).unwrap();
        let all: Vec<[f64; 2]> = out.iter().flatten().copied().collect();
        assert!(all.iter().all(|p| p.iter().all(|v| (MARGIN..=1.0 - MARGIN).contains(v))));
        for a in 0..2 {
            let lo = all.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let hi = all.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            assert!((lo - MARGIN).abs() < 1e-12 && (hi - 1.0 + MARGIN).abs() < 1e-12);
        }
        assert_eq!(out, project_levels(&[clean.clone(), shifted.clone()], &cfg).unwrap());
    }
}
