use nalgebra::{DMatrix, SymmetricEigen};

use super::Coords;
use crate::{Error, Result};

/// Top-two principal axes of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    /// Column-mean of the fitted data.
    pub mean: Vec<f64>,
    /// Two orthonormal `D`-vectors, largest eigenvalue first. The largest
    /// magnitude entry of each is positive.
    pub components: [Vec<f64>; 2],
    /// Sample-covariance eigenvalues of the two components.
    pub variances: [f64; 2],
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_rows<T>(rows: &[T], dim: usize, len: impl Fn(&T) -> usize) -> Result<()> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| len(r) != dim) {
        return Err(Error::ShapeMismatch {
            expected: format!("{dim} columns"),
            actual: format!("row {i} has {}", len(r)),
        });
    }
    Ok(())
}

/// Fits PCA on an `N × D` set of rows.
///
/// Requires `N ≥ 3`, `D ≥ 2` and non-zero total variance. Data of rank one
/// still gets a second (zero-variance) axis orthogonal to the first.
pub fn pca_fit(rows: &[Vec<f32>]) -> Result<PcaBasis> {
    let n = rows.len();
    if n < 3 {
        return Err(Error::invalid(format!("PCA needs at least 3 rows, got {n}")));
    }
    let d = rows[0].len();
    if d < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 columns, got {d}")));
    }
    check_rows(rows, d, |r| r.len())?;

    let mut mean = vec![0.0f64; d];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] as f64 - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate("embeddings have no variance".into()));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    // Descending eigenvalue; ties broken by index for determinism.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let column = |k: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let first = column(0);
    let mut second = column(1);
    // Re-orthogonalize against rounding in nearly degenerate spectra.
    let dot: f64 = first.iter().zip(&second).map(|(a, b)| a * b).sum();
    second.iter_mut().zip(&first).for_each(|(s, f)| *s -= dot * f);
    let norm = second.iter().map(|x| x * x).sum::<f64>().sqrt();
    second.iter_mut().for_each(|x| *x /= norm);

    Ok(PcaBasis {
        mean,
        variances: [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)],
        components: [first, second],
    })
}

/// Projects rows onto a fitted basis: `(row − mean) · components`.
pub fn pca_transform(basis: &PcaBasis, rows: &[Vec<f32>]) -> Result<Coords> {
    check_rows(rows, basis.dim(), |r| r.len())?;
    Ok(rows
        .iter()
        .map(|r| {
            let mut out = [0.0f64; 2];
            for (k, comp) in basis.components.iter().enumerate() {
                out[k] = r
                    .iter()
                    .zip(&basis.mean)
                    .zip(comp)
                    .map(|((&v, m), c)| (v as f64 - m) * c)
                    .sum();
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_through_origin() {
        let rows: Vec<Vec<f32>> = (-5..=5).map(|i| vec![i as f32, i as f32]).collect();
        let b = pca_fit(&rows).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.components[0][0] - h).abs() < 1e-9);
        assert!((b.components[0][1] - h).abs() < 1e-9);
        let dot: f64 = b.components[0].iter().zip(&b.components[1]).map(|(a, c)| a * c).sum();
        assert!(dot.abs() < 1e-9);
    }

    #[test]
    fn diagonal_covariance_gives_axes() {
        // ±2 e1, ±1 e2, ±0.316 e3: covariance ∝ diag(4, 1, 0.1).
        let s = 0.1f32.sqrt();
        let rows = vec![
            vec![2.0, 0.0, 0.0],
            vec![-2.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, s],
            vec![0.0, 0.0, -s],
        ];
        let b = pca_fit(&rows).unwrap();
        for (k, axis) in [0usize, 1].iter().enumerate() {
            for j in 0..3 {
                let want = if j == *axis { 1.0 } else { 0.0 };
                assert!((b.components[k][j] - want).abs() < 1e-9);
            }
        }
        assert!(b.variances[0] > b.variances[1]);
    }

    #[test]
    fn transform_mean_and_axes() {
        let rows: Vec<Vec<f32>> = vec![
            vec![1.0, 2.0, 0.5],
            vec![3.0, -1.0, 0.0],
            vec![0.0, 0.5, 2.0],
            vec![2.0, 2.0, 1.0],
        ];
        let b = pca_fit(&rows).unwrap();
        let mean: Vec<f32> = b.mean.iter().map(|&m| m as f32).collect();
        let c = pca_transform(&b, &[mean.clone()]).unwrap();
        assert!(c[0][0].abs() < 1e-6 && c[0][1].abs() < 1e-6);
        for sign in [1.0, -1.0] {
            let p: Vec<f32> = b.mean.iter().zip(&b.components[0]).map(|(m, v)| (m + sign * v) as f32).collect();
            let c = pca_transform(&b, &[p]).unwrap();
            assert!((c[0][0] - sign).abs() < 1e-6 && c[0][1].abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_and_small_inputs() {
        let same = vec![vec![1.0f32, 1.0]; 5];
        assert!(matches!(pca_fit(&same), Err(Error::Degenerate(_))));
        assert!(pca_fit(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(pca_fit(&[vec![1.0], vec![2.0], vec![3.0]]).is_err());
        let b = pca_fit(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(pca_transform(&b, &[vec![1.0, 2.0, 3.0]]).is_err());
    }
}
