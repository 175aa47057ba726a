//! Brute-force bin statistics by scanning every bin's interval.

use std::collections::BTreeMap;

/// Statistics of one non-empty bin.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBin {
    pub count: usize,
    pub histogram: Vec<usize>,
    pub mode_class: usize,
    pub representative: usize,
}

/// Whether `v` falls in cell `k` of `grid` equal cells over `[0, 1]`: the
/// half-open `[k/G, (k+1)/G)`, with 1.0 belonging to the last cell.
pub fn in_cell(v: f64, k: usize, grid: usize) -> bool {
    let lo = k as f64 / grid as f64;
    let hi = (k + 1) as f64 / grid as f64;
    (lo <= v && v < hi) || (k == grid - 1 && v == 1.0)
}

/// Non-empty bins of a `grid × grid` lattice keyed by `(i, j)`.
pub fn naive_bins(
    coords: &[[f64; 2]],
    predictions: &[usize],
    ids: &[usize],
    grid: usize,
    classes: usize,
) -> BTreeMap<(usize, usize), NaiveBin> {
    let mut out = BTreeMap::new();
    for i in 0..grid {
        for j in 0..grid {
            let members: Vec<usize> = (0..coords.len())
                .filter(|&k| in_cell(coords[k][0], i, grid) && in_cell(coords[k][1], j, grid))
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut histogram = vec![0; classes];
            for &k in &members {
                histogram[predictions[k]] += 1;
            }
            let top = *histogram.iter().max().unwrap();
            let mode_class = histogram.iter().position(|&c| c == top).unwrap();
            let representative = members
                .iter()
                .filter(|&&k| predictions[k] == mode_class)
                .map(|&k| ids[k])
                .min()
                .unwrap();
            out.insert(
                (i, j),
                NaiveBin {
                    count: members.len(),
                    histogram,
                    mode_class,
                    representative,
                },
            );
        }
    }
    out
}
