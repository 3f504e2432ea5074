//! Validated matrix and embedding types shared by every other module.
//!
//! All containers are dense `nalgebra::DMatrix<f64>` wrappers that enforce their
//! invariants at construction and are immutable afterwards.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when accepting nearly-symmetric input.
pub const SYMMETRY_RTOL: f64 = 1e-9;

fn check_square(raw: &DMatrix<f64>) -> Result<usize> {
    if raw.nrows() != raw.ncols() {
        return Err(Error::NotSquare {
            rows: raw.nrows(),
            cols: raw.ncols(),
        });
    }
    Ok(raw.nrows())
}

fn check_finite(raw: &DMatrix<f64>) -> Result<()> {
    for j in 0..raw.ncols() {
        for i in 0..raw.nrows() {
            if !raw[(i, j)].is_finite() {
                return Err(Error::NonFiniteEntry { i, j });
            }
        }
    }
    Ok(())
}

/// Checks `max |a_ij - a_ji| <= 1e-9 * max |a|` and returns the symmetrized matrix.
fn symmetrize(raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(raw)?;
    check_finite(raw)?;
    let scale = raw.amax();
    let tol = SYMMETRY_RTOL * scale;
    let mut worst = (0, 0, 0.0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (raw[(i, j)] - raw[(j, i)]).abs();
            if diff > worst.2 {
                worst = (i, j, diff);
            }
        }
    }
    if worst.2 > tol {
        return Err(Error::AsymmetricInput {
            i: worst.0,
            j: worst.1,
            diff: worst.2,
        });
    }
    Ok((raw + raw.transpose()) * 0.5)
}

/// Symmetric, nonnegative pairwise weights `W` with at least one positive
/// off-diagonal entry per row.
///
/// The diagonal is carried along but never read by any loss or bound.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
    has_zeros: bool,
}

/// Validates a raw square grid as a weight matrix.
///
/// Accepts rounding-level asymmetry (see [`SYMMETRY_RTOL`]) and stores the
/// symmetrized matrix.
pub fn validate_weight_matrix(raw: &DMatrix<f64>) -> Result<WeightMatrix> {
    let w = symmetrize(raw)?;
    let n = w.nrows();
    let mut has_zeros = false;
    for i in 0..n {
        let mut positive = false;
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = w[(i, j)];
            if v < 0.0 {
                return Err(Error::NegativeWeight { i, j, value: v });
            }
            if v > 0.0 {
                positive = true;
            } else {
                has_zeros = true;
            }
        }
        if !positive {
            return Err(Error::IllConditioned { row: i });
        }
    }
    Ok(WeightMatrix { w, has_zeros })
}

impl WeightMatrix {
    pub fn new(raw: DMatrix<f64>) -> Result<Self> {
        validate_weight_matrix(&raw)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        validate_weight_matrix(&grid_from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Always true for a constructed value; ill-conditioned input is rejected.
    pub fn is_well_conditioned(&self) -> bool {
        true
    }

    /// True when some off-diagonal weight is exactly zero (the sparse regime).
    pub fn has_off_diagonal_zeros(&self) -> bool {
        self.has_zeros
    }

    /// `sum_{k != i} w_ik`
    pub fn off_diagonal_row_sum(&self, i: usize) -> f64 {
        let mut s = 0.0;
        for k in 0..self.n() {
            if k != i {
                s += self.w[(i, k)];
            }
        }
        s
    }
}

/// Symmetric dissimilarities with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    d: DMatrix<f64>,
}

impl DissimilarityMatrix {
    pub fn new(raw: DMatrix<f64>) -> Result<Self> {
        let mut d = symmetrize(&raw)?;
        let tol = SYMMETRY_RTOL * raw.amax();
        for i in 0..d.nrows() {
            if d[(i, i)].abs() > tol {
                return Err(Error::NonZeroDiagonal {
                    index: i,
                    value: d[(i, i)],
                });
            }
            d[(i, i)] = 0.0;
        }
        Ok(Self { d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(grid_from_rows(rows)?)
    }

    /// Squared Euclidean distances between the rows of `points`.
    pub fn from_points(points: &DMatrix<f64>) -> Self {
        let n = points.nrows();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = squared_distance(points, i, j);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        Self { d }
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { d: &self.d * factor }
    }
}

/// `d_ij = -log w_ij` off the diagonal.
pub fn weights_to_dissimilarity(w: &WeightMatrix) -> Result<DissimilarityMatrix> {
    let n = w.n();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = w.get(i, j);
            if v == 0.0 {
                return Err(Error::ZeroWeight { i, j });
            }
            d[(i, j)] = -v.ln();
        }
    }
    Ok(DissimilarityMatrix { d })
}

/// `w_ij = exp(-d_ij)` off the diagonal; the diagonal is set to 1.
pub fn dissimilarity_to_weights(d: &DissimilarityMatrix) -> Result<WeightMatrix> {
    let n = d.n();
    let w = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { (-d.get(i, j)).exp() });
    WeightMatrix::new(w)
}

/// `n` points in `q` dimensions, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    z: DMatrix<f64>,
}

impl Embedding {
    pub fn new(z: DMatrix<f64>) -> Self {
        Self { z }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self::new(grid_from_rows_rect(rows)?))
    }

    pub fn zeros(n: usize, q: usize) -> Self {
        Self::new(DMatrix::zeros(n, q))
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.z
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.z.row(i).into_owned()
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.z.row(i).norm()
    }

    /// Rows rescaled to unit norm.
    pub fn normalized(&self) -> Result<Self> {
        let mut z = self.z.clone();
        for i in 0..z.nrows() {
            let norm = z.row(i).norm();
            if norm == 0.0 {
                return Err(Error::ZeroVector { row: i });
            }
            z.row_mut(i).scale_mut(1.0 / norm);
        }
        Ok(Self { z })
    }

    pub fn centroid(&self) -> DVector<f64> {
        let n = self.n().max(1) as f64;
        self.z.row_sum().transpose() / n
    }

    pub fn centered(&self) -> Self {
        let c = self.centroid().transpose();
        let mut z = self.z.clone();
        for mut row in z.row_iter_mut() {
            row -= &c;
        }
        Self { z }
    }

    /// Copies the columns into a wider zero-padded matrix.
    pub fn padded(&self, q: usize) -> Result<Self> {
        if q < self.q() {
            return Err(Error::DimensionTooSmall {
                required: self.q(),
                available: q,
            });
        }
        let mut z = DMatrix::zeros(self.n(), q);
        z.view_mut((0, 0), (self.n(), self.q())).copy_from(&self.z);
        Ok(Self { z })
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        squared_distance(&self.z, i, j)
    }
}

#[inline]
pub(crate) fn squared_distance(points: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..points.ncols() {
        let d = points[(i, k)] - points[(j, k)];
        s += d * d;
    }
    s
}

/// Latent similarity `s(z_i, z_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Similarity {
    /// `-||z_i - z_j||^2`
    Euclidean,
    /// `cos(z_i, z_j) / tau`
    Spherical { tau: f64 },
}

impl Similarity {
    pub fn spherical(tau: f64) -> Result<Self> {
        let s = Similarity::Spherical { tau };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Similarity::Euclidean => Ok(()),
            Similarity::Spherical { tau } if tau > 0.0 && tau.is_finite() => Ok(()),
            Similarity::Spherical { tau } => Err(Error::BadParameter(format!(
                "temperature must be positive, got {tau}"
            ))),
        }
    }

    pub fn is_spherical(&self) -> bool {
        matches!(self, Similarity::Spherical { .. })
    }
}

/// Discrete class labels.
///
/// `assignment` keeps the caller's sample order; [`ClassPartition::contiguous_order`]
/// gives the permutation that groups classes into consecutive index blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPartition {
    sizes: Vec<usize>,
    assignment: Vec<usize>,
}

impl ClassPartition {
    /// Contiguous blocks: the first `sizes[0]` samples are class 0, and so on.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let assignment = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &l)| std::iter::repeat_n(c, l))
            .collect();
        Self::build(sizes.to_vec(), assignment)
    }

    /// Class indices per sample; classes must be numbered `0..C` with none missing.
    pub fn from_assignment(assignment: &[usize]) -> Result<Self> {
        let classes = assignment.iter().max().map_or(0, |&m| m + 1);
        let mut sizes = vec![0usize; classes];
        for &c in assignment {
            sizes[c] += 1;
        }
        if let Some(c) = sizes.iter().position(|&l| l == 0) {
            return Err(Error::BadParameter(format!("class {c} has no members")));
        }
        Self::build(sizes, assignment.to_vec())
    }

    fn build(sizes: Vec<usize>, assignment: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::BadParameter("partition has no classes".into()));
        }
        for (class, &size) in sizes.iter().enumerate() {
            if size < 2 {
                return Err(Error::SingletonClass { class, size });
            }
        }
        Ok(Self { sizes, assignment })
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_classes(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    #[inline]
    pub fn class_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn members(&self, class: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == class).collect()
    }

    /// Sample indices sorted by class (stable), i.e. contiguous position -> user index.
    pub fn contiguous_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by_key(|&i| self.assignment[i]);
        order
    }
}

pub(crate) fn grid_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(Error::NotSquare {
                rows: n,
                cols: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub(crate) fn grid_from_rows_rect(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let q = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != q) {
        return Err(Error::SizeMismatch {
            expected: q,
            found: r.len(),
        });
    }
    Ok(DMatrix::from_fn(n, q, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn supcon_2_2() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1., 1., 0., 0., //
                1., 1., 0., 0., //
                0., 0., 1., 1., //
                0., 0., 1., 1.,
            ],
        )
    }

    #[test]
    fn uniform_weights_are_valid() {
        let w = WeightMatrix::new(DMatrix::from_element(3, 3, 1.0)).unwrap();
        assert!(w.is_well_conditioned());
        assert!(!w.has_off_diagonal_zeros());
    }

    #[test]
    fn supcon_block_matrix_has_zeros() {
        let w = WeightMatrix::new(supcon_2_2()).unwrap();
        assert!(w.is_well_conditioned());
        assert!(w.has_off_diagonal_zeros());
    }

    #[test]
    fn zero_row_is_ill_conditioned() {
        let raw = DMatrix::from_row_slice(3, 3, &[1., 0., 0., 0., 1., 1., 0., 1., 1.]);
        assert!(matches!(
            WeightMatrix::new(raw),
            Err(Error::IllConditioned { row: 0 })
        ));
    }

    #[test]
    fn rejects_asymmetry_and_negatives() {
        let raw = DMatrix::from_row_slice(2, 2, &[0., 1., 0.5, 0.]);
        assert!(matches!(
            WeightMatrix::new(raw),
            Err(Error::AsymmetricInput { .. })
        ));
        let raw = DMatrix::from_row_slice(3, 3, &[0., -1., 1., -1., 0., 1., 1., 1., 0.]);
        assert!(matches!(
            WeightMatrix::new(raw),
            Err(Error::NegativeWeight { .. })
        ));
    }

    #[test]
    fn accepts_rounding_level_asymmetry_and_symmetrizes() {
        let raw = DMatrix::from_row_slice(2, 2, &[0., 1.0, 1.0 + 1e-12, 0.]);
        let w = WeightMatrix::new(raw).unwrap();
        assert_eq!(w.get(0, 1), w.get(1, 0));
    }

    #[test]
    fn diagonal_is_ignored_by_validation() {
        let raw = DMatrix::from_row_slice(2, 2, &[-5., 1.0, 1.0, 7.]);
        assert!(WeightMatrix::new(raw).is_ok());
    }

    #[test]
    fn validation_is_idempotent() {
        let raw = DMatrix::from_row_slice(3, 3, &[0., 0.2, 0.3, 0.2, 0., 0.7, 0.3, 0.7, 0.]);
        let once = WeightMatrix::new(raw).unwrap();
        let twice = WeightMatrix::new(once.as_matrix().clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn exp_minus_one_weights_map_to_unit_dissimilarity() {
        let e = (-1.0f64).exp();
        let w = WeightMatrix::new(DMatrix::from_element(3, 3, e)).unwrap();
        let d = weights_to_dissimilarity(&w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 1.0 };
                assert_abs_diff_eq!(d.get(i, j), expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_weight_has_no_dissimilarity() {
        let w = WeightMatrix::new(supcon_2_2()).unwrap();
        assert!(matches!(
            weights_to_dissimilarity(&w),
            Err(Error::ZeroWeight { .. })
        ));
    }

    #[test]
    fn dissimilarity_rejects_nonzero_diagonal() {
        let raw = DMatrix::from_row_slice(2, 2, &[0.5, 1., 1., 0.]);
        assert!(matches!(
            DissimilarityMatrix::new(raw),
            Err(Error::NonZeroDiagonal { .. })
        ));
    }

    #[test]
    fn partition_from_assignment_keeps_user_order() {
        let p = ClassPartition::from_assignment(&[1, 0, 1, 0, 0]).unwrap();
        assert_eq!(p.sizes(), &[3, 2]);
        assert_eq!(p.members(1), vec![0, 2]);
        assert_eq!(p.contiguous_order(), vec![1, 3, 4, 0, 2]);
        assert!(matches!(
            ClassPartition::from_sizes(&[1, 3]),
            Err(Error::SingletonClass { class: 0, size: 1 })
        ));
    }

    #[test]
    fn normalized_rejects_zero_rows() {
        let z = Embedding::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(z.normalized(), Err(Error::ZeroVector { row: 1 })));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weights_dissimilarity_round_trip(
                n in 2usize..8,
                seed in proptest::collection::vec(0.01f64..5.0, 64)
            ) {
                let mut raw = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in (i + 1)..n {
                        raw[(i, j)] = seed[i * 8 + j];
                        raw[(j, i)] = seed[i * 8 + j];
                    }
                }
                let w = WeightMatrix::new(raw).unwrap();
                let back = dissimilarity_to_weights(&weights_to_dissimilarity(&w).unwrap()).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            prop_assert!((back.get(i, j) - w.get(i, j)).abs() <= 1e-14 * w.get(i, j).max(1.0));
                        }
                    }
                }
            }
        }
    }
}
