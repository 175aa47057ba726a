use advx_core::cube::*;
use advx_testkit::cube::naive_bins;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(n: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)]).collect();
    // Exact edges and bin boundaries.
    coords[0] = [1.0, 1.0];
    coords[1] = [0.0, 0.5];
    coords[2] = [0.1, 0.2];
    let preds = (0..n).map(|_| rng.random_range(0..10)).collect();
    let mut ids: Vec<usize> = (0..n).map(|i| i * 7 % 1009).collect();
    ids.reverse();
    (coords, preds, ids)
}

#[test]
fn matches_brute_force() {
    let (coords, preds, ids) = random_points(500, 1);
    let cube = build_cube(&coords, &preds, &ids, 4, 10).unwrap();
    for level in 0..4 {
        let lvl = cube.level(level).unwrap();
        let naive = naive_bins(&coords, &preds, &ids, grid_size(level), 10);
        assert_eq!(lvl.bins.len(), naive.len());
        for b in &lvl.bins {
            let n = &naive[&(b.i, b.j)];
            assert_eq!((b.count, &b.histogram, b.mode_class, b.representative), (n.count, &n.histogram, n.mode_class, n.representative));
        }
        assert_eq!(lvl.total(), 500);
    }
}

#[test]
fn quadrant_views_partition_the_points() {
    let (coords, preds, ids) = random_points(500, 2);
    let cube = build_cube(&coords, &preds, &ids, 4, 10).unwrap();
    for level in 0..4 {
        let full = cube.query_view(&Viewport::FULL, level).unwrap();
        let total: usize = full.density.iter().map(|d| d.count).sum();
        assert_eq!(total, 500);
        // Quadrant edges fall on bin edges for every grid size used here.
        let quads = [(0.0, 0.0, 0.5, 0.5), (0.5, 0.0, 1.0, 0.5), (0.0, 0.5, 0.5, 1.0), (0.5, 0.5, 1.0, 1.0)];
        let mut sum = 0;
        let mut reps = Vec::new();
        for (x0, y0, x1, y1) in quads {
            let v = cube.query_view(&Viewport::new(x0, y0, x1, y1).unwrap(), level).unwrap();
            sum += v.density.iter().map(|d| d.count).sum::<usize>();
            reps.extend(v.representatives.iter().map(|r| r.instance_id));
        }
        assert_eq!(sum, 500);
        reps.sort_unstable();
        let mut all: Vec<usize> = full.representatives.iter().map(|r| r.instance_id).collect();
        all.sort_unstable();
        // A representative on a quadrant edge can be reported twice.
        reps.dedup();
        assert_eq!(reps, all);
    }
}

#[test]
fn deterministic() {
    let (coords, preds, ids) = random_points(300, 3);
    assert_eq!(
        build_cube(&coords, &preds, &ids, 4, 10).unwrap(),
        build_cube(&coords, &preds, &ids, 4, 10).unwrap()
    );
}

proptest! {
    #[test]
    fn counts_conserved_and_nonempty(points in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0usize..12), 1..200)) {
        let coords: Vec<[f64; 2]> = points.iter().map(|p| [p.0, p.1]).collect();
        let preds: Vec<usize> = points.iter().map(|p| p.2).collect();
        let ids: Vec<usize> = (0..points.len()).collect();
        let cube = build_cube(&coords, &preds, &ids, 4, 12).unwrap();
        for (level, lvl) in cube.levels.iter().enumerate() {
            prop_assert_eq!(lvl.grid, grid_size(level));
            prop_assert_eq!(lvl.total(), points.len());
            for b in &lvl.bins {
                prop_assert!(b.count > 0);
                prop_assert_eq!(b.histogram.iter().sum::<usize>(), b.count);
                prop_assert_eq!(preds[b.representative], b.mode_class);
                prop_assert!(b.histogram[b.mode_class] == *b.histogram.iter().max().unwrap());
                let d = cube.density_map(level).unwrap();
                prop_assert!(d.iter().all(|e| e.radius_hint > 0.0 && e.radius_hint <= 1.0));
            }
            prop_assert!(lvl.bins.len() <= lvl.grid * lvl.grid);
        }
    }

    #[test]
    fn viewport_results_lie_inside(x0 in 0.0f64..0.9, y0 in 0.0f64..0.9, w in 0.01f64..0.5, h in 0.01f64..0.5, level in 0usize..4) {
        let (coords, preds, ids) = random_points(200, 9);
        let cube = build_cube(&coords, &preds, &ids, 4, 10).unwrap();
        let v = Viewport::new(x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0)).unwrap();
        let view = cube.query_view(&v, level).unwrap();
        let g = grid_size(level);
        prop_assert!(view.representatives.len() <= g * g);
        for r in &view.representatives {
            prop_assert!(v.contains(r.x, r.y));
        }
        for d in &view.density {
            let lo = (d.i as f64 / g as f64, d.j as f64 / g as f64);
            prop_assert!(lo.0 < v.x1 && lo.0 + 1.0 / g as f64 > v.x0);
            prop_assert!(lo.1 < v.y1 && lo.1 + 1.0 / g as f64 > v.y0);
        }
    }
}
