//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

/// Scale-relative eigenvalue threshold: `1e-8 * max(1, lambda_max)`.
pub fn eigen_tolerance(lambda_max: f64) -> f64 {
    1e-8 * lambda_max.max(1.0)
}

/// Eigenpairs of a symmetric matrix, sorted by decreasing eigenvalue.
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the same order as `values`.
    pub vectors: DMatrix<f64>,
}

impl SortedEigen {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let sym = (m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        Self { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn tolerance(&self) -> f64 {
        eigen_tolerance(self.max())
    }

    /// Number of eigenvalues above the tolerance.
    pub fn rank(&self) -> usize {
        let tol = self.tolerance();
        self.values.iter().filter(|&&v| v > tol).count()
    }

    /// Number of eigenvalues whose magnitude exceeds the tolerance scaled by the spectral radius.
    pub fn rank_abs(&self) -> usize {
        let radius = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = eigen_tolerance(radius);
        self.values.iter().filter(|v| v.abs() > tol).count()
    }

    pub fn is_psd(&self) -> bool {
        self.min() >= -self.tolerance()
    }

    /// `U_r diag(sqrt(lambda_r))` for the leading `r` eigenpairs (negative values clamped to 0).
    pub fn scaled_leading_vectors(&self, r: usize) -> DMatrix<f64> {
        let n = self.vectors.nrows();
        DMatrix::from_fn(n, r, |i, k| self.vectors[(i, k)] * self.values[k].max(0.0).sqrt())
    }
}

/// `J M J` with `J = I - E/n`.
pub fn double_center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| m.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| m.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| m[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2..=8 => values.iter().sum(),
        len => {
            let (a, b) = values.split_at(len / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2., 0., 0., 0., 5., 0., 0., 0., -1.]);
        let e = SortedEigen::new(&m);
        assert_eq!(e.values, vec![5.0, 2.0, -1.0]);
        assert_eq!(e.rank(), 2);
        assert!(!e.is_psd());
    }

    #[test]
    fn double_centering_kills_constants() {
        let m = DMatrix::from_element(4, 4, 3.0);
        assert!(double_center(&m).amax() < 1e-15);
    }
}
