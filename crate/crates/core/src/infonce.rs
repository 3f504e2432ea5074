//! The weighted InfoNCE loss, its entropic lower bound `H(p_W)`, the loss gap
//! and the analytic gradient with respect to the embedding.
//!
//! With `p_W(i, j) = w_ij / sum_{k != i} w_ik` and `p_S(i, j)` the row softmax of
//! `S` over `k != i`, the loss is the cross-entropy `H(p_W, p_S)` averaged over
//! rows, and the bound is the entropy `H(p_W)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::matrices::{Embedding, Similarity, WeightMatrix};

/// Relative gap below which the bound counts as attained.
pub const ATTAINED_TOL: f64 = 1e-4;

/// Pairwise similarity matrix `s_ij = s(z_i, z_j)`, exactly symmetric.
///
/// The diagonal holds `s(z_i, z_i)` (0 or `1/tau`); no loss reads it.
pub fn similarity_matrix(z: &Embedding, spec: Similarity) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = z.n();
    let s = Points::new(z, spec)?.similarities();
    Ok(DMatrix::from_vec(n, n, s))
}

/// Rows of `Z` laid out contiguously, normalized when the similarity is cosine.
pub(crate) struct Points {
    n: usize,
    q: usize,
    /// `data[i * q + k]`
    data: Vec<f64>,
    norms: Vec<f64>,
    spec: Similarity,
}

impl Points {
    pub(crate) fn new(z: &Embedding, spec: Similarity) -> Result<Self> {
        let (n, q) = (z.n(), z.q());
        let m = z.as_matrix();
        let mut data = vec![0.0; n * q];
        let mut norms = vec![1.0; n];
        for i in 0..n {
            for k in 0..q {
                data[i * q + k] = m[(i, k)];
            }
        }
        if spec.is_spherical() {
            for i in 0..n {
                let row = &mut data[i * q..(i + 1) * q];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::ZeroVector { row: i });
                }
                row.iter_mut().for_each(|v| *v /= norm);
                norms[i] = norm;
            }
        }
        Ok(Self {
            n,
            q,
            data,
            norms,
            spec,
        })
    }

    #[inline]
    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    /// Symmetric `n x n` similarities, stored so that `s[i * n + j] = s_ij`.
    pub(crate) fn similarities(&self) -> Vec<f64> {
        let n = self.n;
        let mut s = vec![0.0; n * n];
        match self.spec {
            Similarity::Euclidean => {
                for i in 0..n {
                    let zi = self.point(i);
                    for j in (i + 1)..n {
                        let zj = self.point(j);
                        let d: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
                        s[i * n + j] = -d;
                        s[j * n + i] = -d;
                    }
                }
            }
            Similarity::Spherical { tau } => {
                for i in 0..n {
                    let ui = self.point(i);
                    s[i * n + i] = 1.0 / tau;
                    for j in (i + 1)..n {
                        let uj = self.point(j);
                        let c: f64 = ui.iter().zip(uj).map(|(a, b)| a * b).sum();
                        let v = c.clamp(-1.0, 1.0) / tau;
                        s[i * n + j] = v;
                        s[j * n + i] = v;
                    }
                }
            }
        }
        s
    }
}

/// Row-normalized weights `p_ij`, stored row-major.
pub(crate) struct RowDistribution {
    n: usize,
    p: Vec<f64>,
    /// `sum_j p_ij log p_ij` per row.
    neg_entropy: Vec<f64>,
    /// Whether row `i` has off-diagonal zeros.
    sparse: Vec<bool>,
}

/// Per-row quantities shared by the divergence and its gradient.
struct RowEval {
    /// `KL(p_i || q_i)`
    divergence: f64,
    /// `log sum_{k != i} e^{s_ik}`
    lse: f64,
}

impl RowDistribution {
    pub(crate) fn new(w: &WeightMatrix) -> Self {
        let n = w.n();
        let mut p = vec![0.0; n * n];
        let mut neg_entropy = vec![0.0; n];
        let mut sparse = vec![false; n];
        for i in 0..n {
            let total = w.off_diagonal_row_sum(i);
            for j in 0..n {
                if j != i {
                    let v = w.get(i, j) / total;
                    p[i * n + j] = v;
                    if v > 0.0 {
                        neg_entropy[i] += v * v.ln();
                    } else {
                        sparse[i] = true;
                    }
                }
            }
        }
        Self {
            n,
            p,
            neg_entropy,
            sparse,
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.n..(i + 1) * self.n]
    }

    /// `H(p_W)` with `0 log 0 = 0`.
    pub(crate) fn entropy(&self) -> f64 {
        let rows: Vec<f64> = self.neg_entropy.iter().map(|v| -v).collect();
        pairwise_sum(&rows) / self.n as f64
    }

    /// Loss for symmetric similarities `s` (row-major, `n x n`).
    pub(crate) fn loss(&self, s: &[f64]) -> f64 {
        let n = self.n;
        let rows: Vec<f64> = (0..n)
            .map(|i| {
                let srow = &s[i * n..(i + 1) * n];
                let lse = log_sum_exp(srow, i, |_| true);
                let expected: f64 = self
                    .row(i)
                    .iter()
                    .zip(srow)
                    .enumerate()
                    .filter(|&(j, (&p, _))| j != i && p > 0.0)
                    .map(|(_, (&p, &sij))| p * sij)
                    .sum();
                lse - expected
            })
            .collect();
        pairwise_sum(&rows) / n as f64
    }

    /// Row `i` of the divergence. With `exps` given, it is filled with
    /// `q_ij = softmax_{k != i}(s_ik)_j`.
    ///
    /// The divergence splits into the part restricted to the support of `p_i`
    /// plus `log1p` of the mass `q_i` puts off that support, so strictly
    /// positive gaps in the sparse regime survive rounding.
    fn row_eval(&self, s: &[f64], i: usize, exps: Option<&mut [f64]>) -> RowEval {
        let n = self.n;
        let srow = &s[i * n..(i + 1) * n];
        let prow = self.row(i);
        let (mut max_on, mut max_off) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut expected = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            if prow[j] > 0.0 {
                max_on = max_on.max(srow[j]);
                expected += prow[j] * srow[j];
            } else {
                max_off = max_off.max(srow[j]);
            }
        }
        let mut scratch;
        let e: &mut [f64] = match exps {
            Some(buf) => buf,
            None => {
                scratch = vec![0.0; n];
                &mut scratch
            }
        };
        let (mut sum_on, mut sum_off) = (0.0, 0.0);
        for j in 0..n {
            if j == i {
                e[j] = 0.0;
            } else if prow[j] > 0.0 {
                e[j] = (srow[j] - max_on).exp();
                sum_on += e[j];
            } else {
                e[j] = (srow[j] - max_off).exp();
                sum_off += e[j];
            }
        }
        let on = max_on + sum_on.ln();
        let (lse, leak) = if self.sparse[i] && sum_off > 0.0 {
            let off = max_off + sum_off.ln();
            let leak = (off - on).exp().ln_1p();
            (on + leak, leak)
        } else {
            (on, 0.0)
        };
        let supported = (self.neg_entropy[i] - expected + on).max(0.0);
        // rescale the stored exponentials into probabilities
        let scale_on = (max_on - lse).exp();
        let scale_off = if max_off.is_finite() {
            (max_off - lse).exp()
        } else {
            0.0
        };
        for j in 0..n {
            if j != i {
                e[j] *= if prow[j] > 0.0 { scale_on } else { scale_off };
            }
        }
        RowEval {
            divergence: supported + leak,
            lse,
        }
    }

    /// `KL(p_W || p_S)` averaged over rows, i.e. `loss - H(p_W)` without cancellation.
    pub(crate) fn divergence(&self, s: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.n];
        let rows: Vec<f64> = (0..self.n)
            .map(|i| self.row_eval(s, i, Some(&mut buf)).divergence)
            .collect();
        pairwise_sum(&rows) / self.n as f64
    }

    /// Divergence, loss and `dL/ds_ij` coefficients symmetrized over `(i, j)`
    /// and `(j, i)`: `m_ij = (q_ij - p_ij + q_ji - p_ji) / n`.
    fn evaluate(&self, s: &[f64]) -> (f64, f64, Vec<f64>) {
        let n = self.n;
        let nf = n as f64;
        let mut a = vec![0.0; n * n];
        let mut div = vec![0.0; n];
        let mut loss = vec![0.0; n];
        for i in 0..n {
            let q = &mut a[i * n..(i + 1) * n];
            let r = self.row_eval(s, i, Some(q));
            let prow = self.row(i);
            let srow = &s[i * n..(i + 1) * n];
            let expected: f64 = (0..n).filter(|&j| j != i).map(|j| prow[j] * srow[j]).sum();
            for j in 0..n {
                q[j] = (q[j] - prow[j]) / nf;
            }
            q[i] = 0.0;
            div[i] = r.divergence;
            loss[i] = r.lse - expected;
        }
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = a[i * n + j] + a[j * n + i];
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        (pairwise_sum(&div) / nf, pairwise_sum(&loss) / nf, m)
    }

    /// Loss and gradient with respect to the rows of `Z`.
    pub(crate) fn loss_and_gradient(&self, pts: &Points) -> (f64, DMatrix<f64>) {
        let s = pts.similarities();
        let (_, loss, m) = self.evaluate(&s);
        (loss, self.gradient(pts, &s, &m))
    }

    /// `loss - H(p_W)` evaluated as a divergence, with the gradient.
    pub(crate) fn divergence_and_gradient(&self, pts: &Points) -> (f64, DMatrix<f64>) {
        let s = pts.similarities();
        let (div, _, m) = self.evaluate(&s);
        (div, self.gradient(pts, &s, &m))
    }

    fn gradient(&self, pts: &Points, s: &[f64], m: &[f64]) -> DMatrix<f64> {
        let (n, q) = (pts.n, pts.q);
        let mut grad = DMatrix::zeros(n, q);
        let mut acc = vec![0.0; q];
        match pts.spec {
            Similarity::Euclidean => {
                // d s_ij / d z_i = -2 (z_i - z_j)
                for i in 0..n {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    let zi = pts.point(i);
                    for j in 0..n {
                        let mij = m[i * n + j];
                        if j == i || mij == 0.0 {
                            continue;
                        }
                        let zj = pts.point(j);
                        for k in 0..q {
                            acc[k] += mij * (zi[k] - zj[k]);
                        }
                    }
                    for k in 0..q {
                        grad[(i, k)] = -2.0 * acc[k];
                    }
                }
            }
            Similarity::Spherical { tau } => {
                // d cos(z_i, z_j) / d z_i = (u_j - cos_ij u_i) / ||z_i||
                for i in 0..n {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    let ui = pts.point(i);
                    let mut radial = 0.0;
                    for j in 0..n {
                        let mij = m[i * n + j];
                        if j == i || mij == 0.0 {
                            continue;
                        }
                        let uj = pts.point(j);
                        for k in 0..q {
                            acc[k] += mij * uj[k];
                        }
                        radial += mij * s[i * n + j] * tau;
                    }
                    let scale = 1.0 / (tau * pts.norms[i]);
                    for k in 0..q {
                        grad[(i, k)] = scale * (acc[k] - radial * ui[k]);
                    }
                }
            }
        }
        grad
    }
}

/// Max-shifted log-sum-exp of `row[j]` over `j != skip` with `keep(j)`.
/// Returns `-inf` for an empty selection.
fn log_sum_exp(row: &[f64], skip: usize, keep: impl Fn(usize) -> bool) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if j != skip && keep(j) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut sum = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if j != skip && keep(j) {
            sum += (v - max).exp();
        }
    }
    max + sum.ln()
}

fn similarities_as_rows(w: &WeightMatrix, s: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = w.n();
    if s.nrows() != n || s.ncols() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            found: s.nrows(),
        });
    }
    let tol = crate::matrices::SYMMETRY_RTOL * s.amax();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = s[(i, j)];
            if i != j && !v.is_finite() {
                return Err(Error::NonFiniteEntry { i, j });
            }
            if j > i && (v - s[(j, i)]).abs() > tol {
                return Err(Error::AsymmetricInput {
                    i,
                    j,
                    diff: (v - s[(j, i)]).abs(),
                });
            }
            out[i * n + j] = v;
        }
    }
    Ok(out)
}

/// Weighted InfoNCE loss for a similarity matrix `S`.
///
/// `-(1/n) sum_i sum_{j != i} p_ij log softmax_i(S)_j`; zero weights contribute nothing.
pub fn infonce_loss(w: &WeightMatrix, s: &DMatrix<f64>) -> Result<f64> {
    let s = similarities_as_rows(w, s)?;
    Ok(RowDistribution::new(w).loss(&s))
}

/// The entropic lower bound `H(p_W)`.
pub fn entropic_bound(w: &WeightMatrix) -> f64 {
    RowDistribution::new(w).entropy()
}

/// Loss versus bound at one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub bound: f64,
    /// `loss / bound - 1`, or `loss - bound` when `ratio_undefined`.
    pub gap: f64,
    /// `loss - bound`, computed as a divergence.
    pub absolute_gap: f64,
    pub attained: bool,
    /// Set when the bound is zero and the ratio form is meaningless.
    pub ratio_undefined: bool,
}

impl LossReport {
    fn from_parts(loss: f64, bound: f64, absolute_gap: f64) -> Self {
        let ratio_undefined = bound <= 0.0;
        let gap = if ratio_undefined {
            absolute_gap
        } else {
            absolute_gap / bound
        };
        Self {
            loss,
            bound,
            gap,
            absolute_gap,
            attained: gap <= ATTAINED_TOL,
            ratio_undefined,
        }
    }
}

/// Loss report for a similarity matrix.
pub fn loss_report(w: &WeightMatrix, s: &DMatrix<f64>) -> Result<LossReport> {
    let s = similarities_as_rows(w, s)?;
    let dist = RowDistribution::new(w);
    Ok(LossReport::from_parts(
        dist.loss(&s),
        dist.entropy(),
        dist.divergence(&s),
    ))
}

/// The entropic loss gap `Delta_W` at embedding `Z`.
pub fn loss_gap(w: &WeightMatrix, z: &Embedding, spec: Similarity) -> Result<LossReport> {
    check_rows(w, z)?;
    spec.validate()?;
    let s = Points::new(z, spec)?.similarities();
    let dist = RowDistribution::new(w);
    Ok(LossReport::from_parts(
        dist.loss(&s),
        dist.entropy(),
        dist.divergence(&s),
    ))
}

/// Gradient of `infonce_loss(W, similarity_matrix(Z, spec))` with respect to `Z`.
pub fn loss_gradient(w: &WeightMatrix, z: &Embedding, spec: Similarity) -> Result<DMatrix<f64>> {
    Ok(loss_and_gradient(w, z, spec)?.1)
}

pub fn loss_and_gradient(w: &WeightMatrix, z: &Embedding, spec: Similarity) -> Result<(f64, DMatrix<f64>)> {
    check_rows(w, z)?;
    spec.validate()?;
    let pts = Points::new(z, spec)?;
    Ok(RowDistribution::new(w).loss_and_gradient(&pts))
}

fn check_rows(w: &WeightMatrix, z: &Embedding) -> Result<()> {
    if w.n() != z.n() {
        return Err(Error::SizeMismatch {
            expected: w.n(),
            found: z.n(),
        });
    }
    Ok(())
}

/// Distance of `S` from the family of global minimizers `s_ij = log w_ij + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalityResidual {
    /// Mean of `s_ij - log w_ij` over off-diagonal pairs.
    pub offset: f64,
    /// `max_{i != j} |s_ij - log w_ij - offset|`
    pub max_deviation: f64,
}

/// Requires strictly positive off-diagonal weights.
pub fn optimality_residual(w: &WeightMatrix, s: &DMatrix<f64>) -> Result<OptimalityResidual> {
    let n = w.n();
    let s = similarities_as_rows(w, s)?;
    let mut diffs = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let wij = w.get(i, j);
            if wij == 0.0 {
                return Err(Error::ZeroWeight { i, j });
            }
            diffs.push(s[i * n + j] - wij.ln());
        }
    }
    let offset = pairwise_sum(&diffs) / diffs.len().max(1) as f64;
    let max_deviation = diffs.iter().fold(0.0f64, |m, d| m.max((d - offset).abs()));
    Ok(OptimalityResidual {
        offset,
        max_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrices::ClassPartition;
    use crate::weights::{soft_supcon_weights, supcon_weights};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> WeightMatrix {
        WeightMatrix::new(DMatrix::from_element(n, n, 1.0)).unwrap()
    }

    fn random_dense(n: usize, rng: &mut ChaCha8Rng) -> WeightMatrix {
        let mut w = DMatrix::from_element(n, n, 1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.random_range(0.05..2.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        WeightMatrix::new(w).unwrap()
    }

    fn random_embedding(n: usize, q: usize, rng: &mut ChaCha8Rng) -> Embedding {
        Embedding::new(DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn similarity_examples() {
        let same = Embedding::from_rows(&[vec![0.3, -1.2], vec![0.3, -1.2]]).unwrap();
        assert_eq!(
            similarity_matrix(&same, Similarity::Euclidean).unwrap()[(0, 1)],
            0.0
        );

        let ortho = Embedding::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = similarity_matrix(&ortho, Similarity::Spherical { tau: 0.1 }).unwrap();
        assert_eq!(s[(0, 1)], 0.0);
        let s = similarity_matrix(&ortho, Similarity::Euclidean).unwrap();
        assert_eq!(s[(0, 1)], -2.0);

        let zero = Embedding::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            similarity_matrix(&zero, Similarity::Spherical { tau: 0.1 }),
            Err(Error::ZeroVector { row: 1 })
        ));
    }

    #[test]
    fn uniform_weights_equal_similarities_give_log_two() {
        let w = uniform(3);
        let s = DMatrix::from_element(3, 3, 0.7);
        assert_abs_diff_eq!(infonce_loss(&w, &s).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(entropic_bound(&w), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn log_weights_attain_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_dense(12, &mut rng);
        let s = w.as_matrix().map(f64::ln).add_scalar(3.5);
        let loss = infonce_loss(&w, &s).unwrap();
        assert_abs_diff_eq!(loss, entropic_bound(&w), epsilon = 1e-12);
        let report = loss_report(&w, &s).unwrap();
        assert!(report.attained);
        assert!(report.gap <= 1e-12);
    }

    #[test]
    fn balanced_hard_supcon_bound() {
        for l in [2usize, 3, 5] {
            let p = ClassPartition::from_sizes(&[l, l, l]).unwrap();
            let w = supcon_weights(&p).unwrap();
            assert_abs_diff_eq!(entropic_bound(&w), ((l - 1) as f64).ln(), epsilon = 1e-14);
        }
    }

    #[test]
    fn soft_supcon_bound_matches_direct_sum() {
        // Oracle: each row is (1, eps, eps) / (1 + 2 eps).
        let eps = (-1.0f64).exp();
        let p = ClassPartition::from_sizes(&[2, 2]).unwrap();
        let w = soft_supcon_weights(&p, eps).unwrap();
        let z = 1.0 + 2.0 * eps;
        let (p1, p2) = (1.0 / z, eps / z);
        let h = -(p1 * p1.ln() + 2.0 * p2 * p2.ln());
        assert_abs_diff_eq!(entropic_bound(&w), h, epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.97533, epsilon = 1e-5);
    }

    #[test]
    fn collapsed_pairs_at_spread_prototypes_drive_loss_to_zero() {
        let p = ClassPartition::from_sizes(&[2, 2, 2]).unwrap();
        let w = supcon_weights(&p).unwrap();
        let protos = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.9]];
        let m = 10.0;
        let z = Embedding::new(DMatrix::from_fn(6, 2, |i, k| m * protos[p.class_of(i)][k]));
        let s = similarity_matrix(&z, Similarity::Euclidean).unwrap();
        assert_eq!(entropic_bound(&w), 0.0);
        let loss = infonce_loss(&w, &s).unwrap();
        assert!((0.0..1e-30).contains(&loss));
        let report = loss_gap(&w, &z, Similarity::Euclidean).unwrap();
        assert!(report.ratio_undefined);
        assert!(report.gap > 0.0);
    }

    #[test]
    fn sparse_gap_is_strictly_positive() {
        let p = ClassPartition::from_sizes(&[3, 4]).unwrap();
        let w = supcon_weights(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let z = random_embedding(7, 3, &mut rng);
            for spec in [Similarity::Euclidean, Similarity::Spherical { tau: 0.1 }] {
                let r = loss_gap(&w, &z, spec).unwrap();
                assert!(r.gap > 0.0 && r.absolute_gap > 0.0);
            }
        }
    }

    #[test]
    fn random_embedding_has_positive_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_dense(9, &mut rng);
        let z = random_embedding(9, 2, &mut rng);
        let r = loss_gap(&w, &z, Similarity::Spherical { tau: 0.5 }).unwrap();
        assert!(r.gap > 0.0);
        assert!(!r.attained);
        assert_abs_diff_eq!(r.loss - r.bound, r.absolute_gap, epsilon = 1e-12);
    }

    #[test]
    fn residual_detects_optimal_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_dense(6, &mut rng);
        let s = w.as_matrix().map(f64::ln).add_scalar(-1.25);
        let r = optimality_residual(&w, &s).unwrap();
        assert_abs_diff_eq!(r.offset, -1.25, epsilon = 1e-12);
        assert!(r.max_deviation < 1e-12);
    }

    /// Central differences, independent of the analytic chain rule.
    fn finite_difference(w: &WeightMatrix, z: &Embedding, spec: Similarity, h: f64) -> DMatrix<f64> {
        let f = |m: &DMatrix<f64>| {
            let s = similarity_matrix(&Embedding::new(m.clone()), spec).unwrap();
            infonce_loss(w, &s).unwrap()
        };
        let base = z.as_matrix().clone();
        DMatrix::from_fn(z.n(), z.q(), |i, k| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[(i, k)] += h;
            minus[(i, k)] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for spec in [Similarity::Euclidean, Similarity::Spherical { tau: 0.3 }] {
            let w = random_dense(8, &mut rng);
            let z = random_embedding(8, 3, &mut rng);
            let g = loss_gradient(&w, &z, spec).unwrap();
            let fd = finite_difference(&w, &z, spec, 1e-6);
            assert!((&g - &fd).norm() / fd.norm() <= 1e-5, "{spec:?}");
        }
    }

    #[test]
    fn sparse_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let w = supcon_weights(&ClassPartition::from_sizes(&[3, 2, 3]).unwrap()).unwrap();
        let z = random_embedding(8, 4, &mut rng);
        let spec = Similarity::Spherical { tau: 0.2 };
        let g = loss_gradient(&w, &z, spec).unwrap();
        let fd = finite_difference(&w, &z, spec, 1e-6);
        assert!((&g - &fd).norm() / fd.norm() <= 1e-5);
    }

    #[test]
    fn euclidean_gradient_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let w = random_dense(10, &mut rng);
        let z = random_embedding(10, 3, &mut rng);
        let g = loss_gradient(&w, &z, Similarity::Euclidean).unwrap();
        assert!(g.row_sum().norm() < 1e-14);
    }

    #[test]
    fn gradient_vanishes_at_realized_optimum() {
        // Points realize the weights exactly: w_ij = exp(-||y_i - y_j||^2).
        let y = DMatrix::from_row_slice(5, 2, &[0., 0., 1., 0., 0.3, 0.8, -0.5, 0.4, 0.9, 1.1]);
        let z = Embedding::new(y.clone());
        let w = crate::weights::y_aware_weights(&crate::weights::LabelSet::new(y)).unwrap();
        let g = loss_gradient(&w, &z, Similarity::Euclidean).unwrap();
        assert!(g.norm() <= 1e-6 * 5.0);
        assert!(loss_gap(&w, &z, Similarity::Euclidean).unwrap().gap <= 1e-12);
    }

    #[test]
    fn rejects_mismatched_sizes() {
        let w = uniform(3);
        let s = DMatrix::zeros(4, 4);
        assert!(matches!(infonce_loss(&w, &s), Err(Error::SizeMismatch { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn weights_from(n: usize, vals: &[f64]) -> WeightMatrix {
            let mut w = DMatrix::from_element(n, n, 1.0);
            for i in 0..n {
                for j in (i + 1)..n {
                    w[(i, j)] = vals[i * 8 + j];
                    w[(j, i)] = vals[i * 8 + j];
                }
            }
            WeightMatrix::new(w).unwrap()
        }

        proptest! {
            #[test]
            fn gibbs_bound_holds(
                n in 3usize..8,
                vals in proptest::collection::vec(0.0f64..3.0, 64),
                zs in proptest::collection::vec(-3.0f64..3.0, 24),
                tau in 0.05f64..2.0,
            ) {
                // Guarantee well-conditioning with a positive ring.
                let mut vals = vals;
                for i in 0..n {
                    let j = (i + 1) % n;
                    let (a, b) = (i.min(j), i.max(j));
                    vals[a * 8 + b] += 0.1;
                }
                let w = weights_from(n, &vals);
                let z = Embedding::new(DMatrix::from_fn(n, 3, |i, k| zs[i * 3 + k] + 0.01));
                for spec in [Similarity::Euclidean, Similarity::Spherical { tau }] {
                    let s = similarity_matrix(&z, spec).unwrap();
                    prop_assert!(infonce_loss(&w, &s).unwrap() >= entropic_bound(&w) - 1e-9);
                }
            }

            #[test]
            fn invariances(
                vals in proptest::collection::vec(0.05f64..3.0, 64),
                zs in proptest::collection::vec(-2.0f64..2.0, 18),
                scales in proptest::collection::vec(0.1f64..5.0, 6),
                angle in 0.0..std::f64::consts::TAU,
                shift in proptest::collection::vec(-5.0f64..5.0, 3),
            ) {
                let n = 6;
                let w = weights_from(n, &vals);
                let z = DMatrix::from_fn(n, 3, |i, k| zs[i * 3 + k] + 0.05);
                let (c, s) = (angle.cos(), angle.sin());
                let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0., s, c, 0., 0., 0., -1.]);
                let moved = &z * &rot;
                let spec = Similarity::Spherical { tau: 0.4 };
                let loss = |m: &DMatrix<f64>, spec| {
                    infonce_loss(&w, &similarity_matrix(&Embedding::new(m.clone()), spec).unwrap()).unwrap()
                };
                let base = loss(&z, spec);
                let rescaled = DMatrix::from_fn(n, 3, |i, k| moved[(i, k)] * scales[i]);
                prop_assert!((loss(&rescaled, spec) - base).abs() < 1e-12);

                let base = loss(&z, Similarity::Euclidean);
                let mut translated = moved.clone();
                for mut row in translated.row_iter_mut() {
                    for k in 0..3 { row[k] += shift[k]; }
                }
                prop_assert!((loss(&translated, Similarity::Euclidean) - base).abs() < 1e-9 * base.abs().max(1.0));
            }

            #[test]
            fn equality_characterization(
                vals in proptest::collection::vec(0.05f64..3.0, 64),
                noise in proptest::collection::vec(-1.0f64..1.0, 64),
                amplitude in prop_oneof![Just(0.0f64), Just(1e-6), 1e-2f64..1.0],
                c in -3.0f64..3.0,
            ) {
                let n = 5;
                let w = weights_from(n, &vals);
                let mut s = w.as_matrix().map(f64::ln).add_scalar(c);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let e = amplitude * noise[i * 8 + j];
                        s[(i, j)] += e;
                        s[(j, i)] += e;
                    }
                }
                let gap = loss_report(&w, &s).unwrap().gap;
                let dev = optimality_residual(&w, &s).unwrap().max_deviation;
                if gap <= 1e-6 {
                    prop_assert!(dev <= 1e-3, "gap {gap} dev {dev}");
                }
                if dev <= 1e-6 {
                    prop_assert!(gap <= 1e-6);
                }
            }
        }
    }
}
