//! Weighting schemes: SupCon, Soft SupCon, y-Aware, X-CLR, kernel weights and
//! their entrywise composition.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SortedEigen;
use crate::matrices::{squared_distance, ClassPartition, WeightMatrix};

/// Continuous labels or meta-data, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    y: DMatrix<f64>,
}

impl LabelSet {
    pub fn new(y: DMatrix<f64>) -> Self {
        Self { y }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self::new(crate::matrices::grid_from_rows_rect(rows)?))
    }

    /// One-dimensional labels.
    pub fn from_values(values: &[f64]) -> Self {
        Self::new(DMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    /// Label dimension.
    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Linear kernel `Y Y^T`.
    pub fn linear_kernel(&self) -> DMatrix<f64> {
        &self.y * self.y.transpose()
    }

    pub(crate) fn check_nonzero_rows(&self) -> Result<Vec<f64>> {
        (0..self.n())
            .map(|i| {
                let norm = self.y.row(i).norm();
                if norm == 0.0 {
                    Err(Error::ZeroLabelVector { row: i })
                } else {
                    Ok(norm)
                }
            })
            .collect()
    }
}

fn from_pairwise(n: usize, diag: f64, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let mut w = DMatrix::from_element(n, n, diag);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = f(i, j);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// Binary SupCon weights: 1 within a class, 0 across classes.
pub fn supcon_weights(p: &ClassPartition) -> Result<WeightMatrix> {
    let w = from_pairwise(
        p.n(),
        1.0,
        |i, j| {
            if p.class_of(i) == p.class_of(j) {
                1.0
            } else {
                0.0
            }
        },
    );
    WeightMatrix::new(w)
}

/// 1 within a class, `epsilon` across classes.
pub fn soft_supcon_weights(p: &ClassPartition, epsilon: f64) -> Result<WeightMatrix> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::BadEpsilon(epsilon));
    }
    let w = from_pairwise(p.n(), 1.0, |i, j| {
        if p.class_of(i) == p.class_of(j) {
            1.0
        } else {
            epsilon
        }
    });
    WeightMatrix::new(w)
}

/// Gaussian kernel on label distances, `exp(-||y_i - y_j||^2)`.
pub fn y_aware_weights(labels: &LabelSet) -> Result<WeightMatrix> {
    let y = labels.as_matrix();
    let w = from_pairwise(labels.n(), 1.0, |i, j| (-squared_distance(y, i, j)).exp());
    WeightMatrix::new(w)
}

/// `exp(cos(y_i, y_j) / tau')`.
pub fn xclr_weights(labels: &LabelSet, tau_prime: f64) -> Result<WeightMatrix> {
    if !(tau_prime > 0.0 && tau_prime.is_finite()) {
        return Err(Error::BadParameter(format!(
            "tau' must be positive, got {tau_prime}"
        )));
    }
    let norms = labels.check_nonzero_rows()?;
    let y = labels.as_matrix();
    let w = from_pairwise(labels.n(), (1.0 / tau_prime).exp(), |i, j| {
        let cos = y.row(i).dot(&y.row(j)) / (norms[i] * norms[j]);
        (cos.clamp(-1.0, 1.0) / tau_prime).exp()
    });
    WeightMatrix::new(w)
}

/// `exp(-d_ij)` with the squared kernel distance `d_ij = k_ii + k_jj - 2 k_ij`.
///
/// `K` must be symmetric positive semi-definite:
/// `lambda_min >= -1e-8 * max(1, lambda_max)`.
pub fn kernel_weights(kernel: &DMatrix<f64>) -> Result<WeightMatrix> {
    if kernel.nrows() != kernel.ncols() {
        return Err(Error::NotSquare {
            rows: kernel.nrows(),
            cols: kernel.ncols(),
        });
    }
    let tol = crate::matrices::SYMMETRY_RTOL * kernel.amax();
    for i in 0..kernel.nrows() {
        for j in (i + 1)..kernel.nrows() {
            let diff = (kernel[(i, j)] - kernel[(j, i)]).abs();
            if diff > tol {
                return Err(Error::AsymmetricInput { i, j, diff });
            }
        }
    }
    let eig = SortedEigen::new(kernel);
    if !eig.is_psd() {
        return Err(Error::NotPsd {
            min_eigenvalue: eig.min(),
        });
    }
    let k = (kernel + kernel.transpose()) * 0.5;
    let w = from_pairwise(k.nrows(), 1.0, |i, j| {
        let d = (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(0.0);
        (-d).exp()
    });
    WeightMatrix::new(w)
}

/// Entrywise product `a_ij * b_ij`; dissimilarities add.
pub fn combine_weights(a: &WeightMatrix, b: &WeightMatrix) -> Result<WeightMatrix> {
    if a.n() != b.n() {
        return Err(Error::SizeMismatch {
            expected: a.n(),
            found: b.n(),
        });
    }
    WeightMatrix::new(a.as_matrix().component_mul(b.as_matrix()))
}

/// Where a matrix comes from in a scheme config: a file path or inline rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Path(PathBuf),
    Inline(Vec<Vec<f64>>),
}

impl MatrixSource {
    pub fn load(&self, base: &Path) -> Result<DMatrix<f64>> {
        match self {
            MatrixSource::Path(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                crate::io::read_matrix(&path)
            }
            MatrixSource::Inline(rows) => crate::matrices::grid_from_rows_rect(rows),
        }
    }
}

/// Class labels in a scheme config, as contiguous block sizes or a per-sample assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartitionSource {
    Sizes { sizes: Vec<usize> },
    Assignment { assignment: Vec<usize> },
}

impl PartitionSource {
    pub fn partition(&self) -> Result<ClassPartition> {
        match self {
            PartitionSource::Sizes { sizes } => ClassPartition::from_sizes(sizes),
            PartitionSource::Assignment { assignment } => ClassPartition::from_assignment(assignment),
        }
    }
}

/// JSON description of a weighting scheme.
///
/// ```json
/// {"scheme": "soft_supcon", "sizes": [10, 10, 10], "epsilon": 0.36787944117144233}
/// {"scheme": "product", "factors": [{"scheme": "supcon", "sizes": [4, 4]},
///                                   {"scheme": "y_aware", "labels": "labels.csv"}]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SchemeConfig {
    Supcon {
        #[serde(flatten)]
        classes: PartitionSource,
    },
    SoftSupcon {
        #[serde(flatten)]
        classes: PartitionSource,
        epsilon: f64,
    },
    YAware {
        labels: MatrixSource,
    },
    Xclr {
        labels: MatrixSource,
        tau_prime: f64,
    },
    Kernel {
        kernel: MatrixSource,
    },
    Product {
        factors: Vec<SchemeConfig>,
    },
}

impl SchemeConfig {
    /// Builds the weight matrix; relative file paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<WeightMatrix> {
        match self {
            SchemeConfig::Supcon { classes } => supcon_weights(&classes.partition()?),
            SchemeConfig::SoftSupcon { classes, epsilon } => {
                soft_supcon_weights(&classes.partition()?, *epsilon)
            }
            SchemeConfig::YAware { labels } => y_aware_weights(&LabelSet::new(labels.load(base)?)),
            SchemeConfig::Xclr { labels, tau_prime } => {
                xclr_weights(&LabelSet::new(labels.load(base)?), *tau_prime)
            }
            SchemeConfig::Kernel { kernel } => kernel_weights(&kernel.load(base)?),
            SchemeConfig::Product { factors } => {
                let mut iter = factors.iter();
                let first = iter
                    .next()
                    .ok_or_else(|| Error::BadParameter("product needs at least one factor".into()))?
                    .build(base)?;
                iter.try_fold(first, |acc, f| combine_weights(&acc, &f.build(base)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrices::{dissimilarity_to_weights, weights_to_dissimilarity};
    use approx::assert_abs_diff_eq;

    const E: f64 = std::f64::consts::E;

    fn line_labels() -> LabelSet {
        LabelSet::from_values(&[0.0, 1.0, 2.0])
    }

    #[test]
    fn supcon_blocks() {
        let w = supcon_weights(&ClassPartition::from_sizes(&[2, 2]).unwrap()).unwrap();
        let expect = [
            [1., 1., 0., 0.],
            [1., 1., 0., 0.],
            [0., 0., 1., 1.],
            [0., 0., 1., 1.],
        ];
        for (i, row) in expect.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert_eq!(w.get(i, j), e);
            }
        }
        let single = supcon_weights(&ClassPartition::from_sizes(&[2]).unwrap()).unwrap();
        assert!(!single.has_off_diagonal_zeros());
    }

    #[test]
    fn soft_supcon_entries_and_bounds() {
        let p = ClassPartition::from_sizes(&[2, 2]).unwrap();
        let w = soft_supcon_weights(&p, (-1.0f64).exp()).unwrap();
        assert_abs_diff_eq!(w.get(0, 2), 0.36787944117144233, epsilon = 1e-16);
        assert_eq!(w.get(0, 1), 1.0);
        assert!(matches!(soft_supcon_weights(&p, 1.0), Err(Error::BadEpsilon(_))));
        assert!(matches!(soft_supcon_weights(&p, 0.0), Err(Error::BadEpsilon(_))));
    }

    #[test]
    fn soft_supcon_tends_to_supcon() {
        let p = ClassPartition::from_assignment(&[0, 1, 2, 0, 1, 2, 2]).unwrap();
        let hard = supcon_weights(&p).unwrap();
        let soft = soft_supcon_weights(&p, 1e-8).unwrap();
        let diff = (hard.as_matrix() - soft.as_matrix()).amax();
        assert!(diff <= 1e-8);
    }

    #[test]
    fn y_aware_values() {
        let w = y_aware_weights(&line_labels()).unwrap();
        assert_abs_diff_eq!(w.get(0, 1), (-1.0f64).exp(), epsilon = 1e-16);
        assert_abs_diff_eq!(w.get(0, 2), (-4.0f64).exp(), epsilon = 1e-16);
        let same = y_aware_weights(&LabelSet::from_values(&[3.0, 3.0])).unwrap();
        assert_eq!(same.get(0, 1), 1.0);
    }

    #[test]
    fn xclr_values() {
        let labels = LabelSet::from_rows(&[vec![1., 0.], vec![2., 0.], vec![0., 1.], vec![-1., 0.]]).unwrap();
        let w = xclr_weights(&labels, 1.0).unwrap();
        assert_abs_diff_eq!(w.get(0, 1), E, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(0, 2), 1.0, epsilon = 1e-15);
        let w = xclr_weights(&labels, 0.5).unwrap();
        assert_abs_diff_eq!(w.get(0, 3), (-2.0f64).exp(), epsilon = 1e-15);
        let zero = LabelSet::from_rows(&[vec![1., 0.], vec![0., 0.]]).unwrap();
        assert!(matches!(
            xclr_weights(&zero, 1.0),
            Err(Error::ZeroLabelVector { row: 1 })
        ));
    }

    #[test]
    fn kernel_identity_and_linear() {
        let w = kernel_weights(&DMatrix::identity(4, 4)).unwrap();
        assert_abs_diff_eq!(w.get(1, 3), (-2.0f64).exp(), epsilon = 1e-16);

        let labels = line_labels();
        let via_kernel = kernel_weights(&labels.linear_kernel()).unwrap();
        let direct = y_aware_weights(&labels).unwrap();
        assert!((via_kernel.as_matrix() - direct.as_matrix()).amax() <= 1e-12);
    }

    #[test]
    fn kernel_must_be_psd() {
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, -0.1]));
        assert!(matches!(kernel_weights(&k), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn combine_with_ones_is_identity_and_zero_absorbs() {
        let ones = WeightMatrix::new(DMatrix::from_element(3, 3, 1.0)).unwrap();
        let b = y_aware_weights(&line_labels()).unwrap();
        assert_eq!(combine_weights(&ones, &b).unwrap(), b);

        let p = ClassPartition::from_sizes(&[2, 2]).unwrap();
        let hard = supcon_weights(&p).unwrap();
        let pos = y_aware_weights(&LabelSet::from_values(&[0.0, 0.5, 1.0, 1.5])).unwrap();
        assert_eq!(combine_weights(&hard, &pos).unwrap().get(0, 3), 0.0);

        let small = supcon_weights(&ClassPartition::from_sizes(&[2]).unwrap()).unwrap();
        assert!(matches!(
            combine_weights(&small, &b),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn product_adds_dissimilarities() {
        // Independent oracle: d_ij = 1{classes differ} + ||y_i - y_j||^2 computed by hand.
        let morph = [
            [0.1, 0.9],
            [0.4, 0.2],
            [0.8, 0.5],
            [0.3, 0.3],
            [0.6, 0.7],
            [0.95, 0.05],
        ];
        let classes = [0usize, 0, 1, 1, 2, 2];
        let p = ClassPartition::from_assignment(&classes).unwrap();
        let labels = LabelSet::from_rows(&morph.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let w = combine_weights(
            &soft_supcon_weights(&p, (-1.0f64).exp()).unwrap(),
            &y_aware_weights(&labels).unwrap(),
        )
        .unwrap();
        let d = weights_to_dissimilarity(&w).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if i == j {
                    continue;
                }
                let dy = (morph[i][0] - morph[j][0]).powi(2) + (morph[i][1] - morph[j][1]).powi(2);
                let expect = if classes[i] != classes[j] { 1.0 } else { 0.0 } + dy;
                assert_abs_diff_eq!(d.get(i, j), expect, epsilon = 1e-14);
            }
        }
        let again = dissimilarity_to_weights(&d).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_abs_diff_eq!(again.get(i, j), w.get(i, j), epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn scheme_config_parses_and_builds() {
        let cfg: SchemeConfig = serde_json::from_str(
            r#"{"scheme":"product","factors":[
                {"scheme":"soft_supcon","sizes":[2,2],"epsilon":0.5},
                {"scheme":"y_aware","labels":[[0.0],[1.0],[0.0],[1.0]]}]}"#,
        )
        .unwrap();
        let w = cfg.build(Path::new(".")).unwrap();
        assert_abs_diff_eq!(w.get(0, 1), (-1.0f64).exp(), epsilon = 1e-16);
        assert_abs_diff_eq!(w.get(0, 2), 0.5, epsilon = 1e-16);

        let cfg: SchemeConfig =
            serde_json::from_str(r#"{"scheme":"supcon","assignment":[0,1,1,0]}"#).unwrap();
        let w = cfg.build(Path::new(".")).unwrap();
        assert_eq!(w.get(0, 3), 1.0);
        assert_eq!(w.get(0, 1), 0.0);

        assert!(serde_json::from_str::<SchemeConfig>(r#"{"scheme":"bogus"}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_weights(n: usize, seed: &[f64]) -> WeightMatrix {
            let w = from_pairwise(n, 1.0, |i, j| seed[(i * 7 + j) % seed.len()]);
            WeightMatrix::new(w).unwrap()
        }

        proptest! {
            #[test]
            fn combine_is_commutative_and_associative(
                n in 2usize..7,
                a in proptest::collection::vec(0.0f64..3.0, 49),
                b in proptest::collection::vec(0.01f64..3.0, 49),
                c in proptest::collection::vec(0.01f64..3.0, 49),
            ) {
                let a = from_pairwise(n, 1.0, |i, j| a[i * 7 + j] + 0.01);
                let a = WeightMatrix::new(a).unwrap();
                let b = random_weights(n, &b);
                let c = random_weights(n, &c);
                let ab = combine_weights(&a, &b).unwrap();
                let ba = combine_weights(&b, &a).unwrap();
                prop_assert!((ab.as_matrix() - ba.as_matrix()).amax() <= 1e-15);
                let left = combine_weights(&ab, &c).unwrap();
                let right = combine_weights(&a, &combine_weights(&b, &c).unwrap()).unwrap();
                prop_assert!((left.as_matrix() - right.as_matrix()).amax() <= 1e-14);
            }

            #[test]
            fn y_aware_matches_linear_kernel(
                n in 2usize..10,
                ys in proptest::collection::vec(-2.0f64..2.0, 30),
            ) {
                let labels = LabelSet::new(DMatrix::from_fn(n, 3, |i, k| ys[i * 3 + k]));
                let a = y_aware_weights(&labels).unwrap();
                let b = kernel_weights(&labels.linear_kernel()).unwrap();
                prop_assert!((a.as_matrix() - b.as_matrix()).amax() <= 1e-12);
            }
        }
    }
}
