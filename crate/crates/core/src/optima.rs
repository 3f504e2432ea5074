//! Closed-form optimal embeddings and the collapsed Hard SupCon optimum.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{random_start, run, Constraint, Objective, Settings, StepRule};
use crate::distgeo::realize_spherical;
use crate::error::{Error, Result};
use crate::io::rows_of;
use crate::linalg::SortedEigen;
use crate::matrices::{grid_from_rows_rect, ClassPartition, DissimilarityMatrix, Embedding};
use crate::weights::LabelSet;

/// Unit class prototypes and their cosine Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PrototypeJson", try_from = "PrototypeJson")]
pub struct PrototypeGeometry {
    pub c: usize,
    /// `C x q`, one unit prototype per row.
    pub mu: DMatrix<f64>,
    /// `C x C`
    pub gram: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct PrototypeJson {
    #[serde(rename = "C")]
    c: usize,
    gram: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
}

impl From<PrototypeGeometry> for PrototypeJson {
    fn from(p: PrototypeGeometry) -> Self {
        Self {
            c: p.c,
            gram: rows_of(&p.gram),
            mu: rows_of(&p.mu),
        }
    }
}

impl TryFrom<PrototypeJson> for PrototypeGeometry {
    type Error = Error;

    fn try_from(raw: PrototypeJson) -> Result<Self> {
        let mu = grid_from_rows_rect(&raw.mu)?;
        let gram = grid_from_rows_rect(&raw.gram)?;
        if mu.nrows() != raw.c || gram.shape() != (raw.c, raw.c) {
            return Err(Error::SizeMismatch {
                expected: raw.c,
                found: mu.nrows(),
            });
        }
        Ok(Self { c: raw.c, mu, gram })
    }
}

impl PrototypeGeometry {
    fn from_prototypes(mu: DMatrix<f64>) -> Self {
        let gram = &mu * mu.transpose();
        Self {
            c: mu.nrows(),
            mu,
            gram,
        }
    }

    pub fn q(&self) -> usize {
        self.mu.ncols()
    }

    /// Collapsed embedding: sample `i` sits at the prototype of its class.
    pub fn expand(&self, p: &ClassPartition) -> Result<Embedding> {
        if p.num_classes() != self.c {
            return Err(Error::SizeMismatch {
                expected: self.c,
                found: p.num_classes(),
            });
        }
        let rows: Vec<usize> = p.assignment().to_vec();
        Ok(Embedding::new(self.mu.select_rows(rows.iter())))
    }

    /// Largest `|gram_cc' + 1/(C-1)|` over off-diagonal entries.
    pub fn simplex_deviation(&self) -> f64 {
        if self.c < 2 {
            return 0.0;
        }
        let target = -1.0 / (self.c - 1) as f64;
        let mut worst = 0.0f64;
        for a in 0..self.c {
            for b in 0..self.c {
                if a != b {
                    worst = worst.max((self.gram[(a, b)] - target).abs());
                }
            }
        }
        worst
    }
}

/// Labels zero-padded to `q` columns; the Euclidean optimum for label-distance weights.
pub fn optimum_euclidean_labels(labels: &LabelSet, q: usize) -> Result<Embedding> {
    Embedding::new(labels.as_matrix().clone()).padded(q)
}

/// `z_i = (y_i / ||y_i||, sqrt(tau'/tau - 1), 0, ..., 0)`.
pub fn optimum_xclr(labels: &LabelSet, tau: f64, tau_prime: f64, q: usize) -> Result<Embedding> {
    if !(tau > 0.0 && tau_prime > 0.0) {
        return Err(Error::BadParameter("temperatures must be positive".into()));
    }
    if tau > tau_prime {
        return Err(Error::TemperatureOrder { tau, tau_prime });
    }
    let l = labels.dim();
    if l >= q {
        return Err(Error::DimensionTooSmall {
            required: l + 1,
            available: q,
        });
    }
    labels.check_nonzero_rows()?;
    let lift = (tau_prime / tau - 1.0).max(0.0).sqrt();
    let y = labels.as_matrix();
    let mut z = DMatrix::zeros(labels.n(), q);
    for i in 0..labels.n() {
        let norm = y.row(i).norm();
        for k in 0..l {
            z[(i, k)] = y[(i, k)] / norm;
        }
        z[(i, l)] = lift;
    }
    Ok(Embedding::new(z))
}

/// Inter-class cosine `1 + tau log eps` of the collapsed Soft SupCon optimum.
pub fn soft_supcon_beta(epsilon: f64, tau: f64) -> f64 {
    1.0 + tau * epsilon.ln()
}

/// Temperature that makes the Soft SupCon prototypes a regular simplex.
pub fn soft_supcon_simplex_tau(c: usize, epsilon: f64) -> f64 {
    let c = c as f64;
    c / (-(c - 1.0) * epsilon.ln())
}

fn unit_vectors(c: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(c, q, |_, k| if k == 0 { 1.0 } else { 0.0 })
}

/// Soft SupCon prototypes with pairwise cosine `beta = 1 + tau log eps`, one per class.
pub fn soft_supcon_prototypes(c: usize, epsilon: f64, tau: f64, q: usize) -> Result<PrototypeGeometry> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::BadEpsilon(epsilon));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::BadParameter(format!("tau must be positive, got {tau}")));
    }
    if c > q {
        return Err(Error::DimensionTooSmall {
            required: c,
            available: q,
        });
    }
    if c == 1 {
        return Ok(PrototypeGeometry::from_prototypes(unit_vectors(1, q)));
    }
    let beta = soft_supcon_beta(epsilon, tau);
    let min = -1.0 / (c - 1) as f64;
    if beta < min - 1e-12 {
        return Err(Error::InfeasibleBeta { beta, min });
    }
    let gap = -epsilon.ln();
    let d = DissimilarityMatrix::new(DMatrix::from_fn(c, c, |a, b| if a == b { 0.0 } else { gap }))?;
    let mu = realize_spherical(&d, tau, q)?.into_matrix();
    Ok(PrototypeGeometry::from_prototypes(mu))
}

/// Fully collapsed Soft SupCon optimum.
pub fn optimum_soft_supcon(p: &ClassPartition, epsilon: f64, tau: f64, q: usize) -> Result<Embedding> {
    soft_supcon_prototypes(p.num_classes(), epsilon, tau, q)?.expand(p)
}

/// `C` unit vectors with pairwise cosine `-1/(C-1)`.
pub fn regular_simplex(c: usize, q: usize) -> Result<PrototypeGeometry> {
    if c < 2 {
        return Err(Error::BadParameter(
            "a simplex needs at least two vertices".into(),
        ));
    }
    if c - 1 > q {
        return Err(Error::DimensionTooSmall {
            required: c - 1,
            available: q,
        });
    }
    let off = 1.0 / (c - 1) as f64;
    let g = DMatrix::from_fn(c, c, |a, b| if a == b { 1.0 } else { -off });
    let eig = SortedEigen::new(&g);
    let mut mu = DMatrix::zeros(c, q);
    mu.columns_mut(0, c - 1)
        .copy_from(&eig.scaled_leading_vectors(c - 1));
    for mut row in mu.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    Ok(PrototypeGeometry::from_prototypes(mu))
}

/// Row-wise concatenation; squared distances add.
pub fn product_geometry(a: &Embedding, b: &Embedding) -> Result<Embedding> {
    if a.n() != b.n() {
        return Err(Error::SizeMismatch {
            expected: a.n(),
            found: b.n(),
        });
    }
    let (n, qa, qb) = (a.n(), a.q(), b.q());
    let mut z = DMatrix::zeros(n, qa + qb);
    z.columns_mut(0, qa).copy_from(a.as_matrix());
    z.columns_mut(qa, qb).copy_from(b.as_matrix());
    Ok(Embedding::new(z))
}

/// `z_i = m mu_{c_i}` for distinct prototypes.
pub fn quasi_optimum_euclidean_supcon(
    p: &ClassPartition,
    prototypes: &DMatrix<f64>,
    m: f64,
) -> Result<Embedding> {
    let c = p.num_classes();
    if prototypes.nrows() != c {
        return Err(Error::SizeMismatch {
            expected: c,
            found: prototypes.nrows(),
        });
    }
    for a in 0..c {
        for b in (a + 1)..c {
            if prototypes.row(a) == prototypes.row(b) {
                return Err(Error::DuplicatePrototypes { a, b });
            }
        }
    }
    let rows: Vec<usize> = p.assignment().to_vec();
    Ok(Embedding::new(prototypes.select_rows(rows.iter()) * m))
}

/// Collapsed Hard SupCon loss as a function of the prototype Gram:
/// `-(1/n) sum_c l_c [1/tau - log((l_c - 1) e^{1/tau} + sum_{c' != c} l_c' e^{g_cc'/tau})]`.
pub fn reduced_hard_supcon_loss(sizes: &[usize], gram: &DMatrix<f64>, tau: f64) -> f64 {
    hard_supcon_bound(sizes) + ReducedHardSupCon::new(sizes, tau).excess(gram, None)
}

/// Entropic bound of Hard SupCon weights: `(1/n) sum_c l_c log(l_c - 1)`.
pub fn hard_supcon_bound(sizes: &[usize]) -> f64 {
    let n: usize = sizes.iter().sum();
    sizes
        .iter()
        .map(|&l| l as f64 * ((l - 1) as f64).ln())
        .sum::<f64>()
        / n as f64
}

/// The reduced loss minus its bound:
/// `(1/n) sum_c l_c log(1 + sum_{c' != c} e^{t_cc'})` with
/// `t_cc' = log l_c' - log(l_c - 1) + (g_cc' - 1)/tau`.
struct ReducedHardSupCon {
    log_sizes: Vec<f64>,
    log_positive: Vec<f64>,
    weights: Vec<f64>,
    inv_tau: f64,
}

impl ReducedHardSupCon {
    fn new(sizes: &[usize], tau: f64) -> Self {
        let n: usize = sizes.iter().sum();
        Self {
            log_sizes: sizes.iter().map(|&l| (l as f64).ln()).collect(),
            log_positive: sizes.iter().map(|&l| ((l - 1) as f64).ln()).collect(),
            weights: sizes.iter().map(|&l| l as f64 / n as f64).collect(),
            inv_tau: 1.0 / tau,
        }
    }

    /// Excess over the bound. When `coeffs` is given it receives
    /// `d excess / d g_cc'` through class `c`'s term.
    fn excess(&self, gram: &DMatrix<f64>, mut coeffs: Option<&mut DMatrix<f64>>) -> f64 {
        let k = self.log_sizes.len();
        let mut t = vec![f64::NEG_INFINITY; k];
        let mut total = 0.0;
        for c in 0..k {
            let mut top = f64::NEG_INFINITY;
            for b in 0..k {
                if b != c {
                    t[b] = self.log_sizes[b] - self.log_positive[c] + (gram[(c, b)] - 1.0) * self.inv_tau;
                    top = top.max(t[b]);
                }
            }
            // log(1 + sum_b e^{t_b})
            let log1p_sum = if top > 0.0 {
                let rest: f64 = (0..k).filter(|&b| b != c).map(|b| (t[b] - top).exp()).sum();
                top + (rest + (-top).exp()).ln()
            } else {
                let sum: f64 = (0..k).filter(|&b| b != c).map(|b| t[b].exp()).sum();
                sum.ln_1p()
            };
            total += self.weights[c] * log1p_sum;
            if let Some(a) = coeffs.as_deref_mut() {
                for b in 0..k {
                    if b != c {
                        a[(c, b)] = self.weights[c] * (t[b] - log1p_sum).exp() * self.inv_tau;
                    }
                }
            }
        }
        total
    }
}

impl Objective for ReducedHardSupCon {
    fn value(&self, mu: &DMatrix<f64>) -> f64 {
        self.excess(&(mu * mu.transpose()), None)
    }

    fn value_and_grad(&self, mu: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let k = self.log_sizes.len();
        let mut a = DMatrix::zeros(k, k);
        let value = self.excess(&(mu * mu.transpose()), Some(&mut a));
        let sym = &a + a.transpose();
        (value, sym * mu)
    }
}

/// Restarts used by the reduced Hard SupCon solver.
pub const HARD_SUPCON_RESTARTS: usize = 8;
const HARD_SUPCON_STEPS: usize = 50_000;
const HARD_SUPCON_GRAD_TOL: f64 = 1e-6;

/// Collapsed Hard SupCon optimum: minimizes the reduced loss over unit
/// prototypes in `R^C` with multi-restart projected descent.
pub fn optimum_hard_supcon(p: &ClassPartition, tau: f64, q: usize) -> Result<PrototypeGeometry> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::BadParameter(format!("tau must be positive, got {tau}")));
    }
    let c = p.num_classes();
    if c > q {
        return Err(Error::DimensionTooSmall {
            required: c,
            available: q,
        });
    }
    if c == 1 {
        return Ok(PrototypeGeometry::from_prototypes(unit_vectors(1, q)));
    }
    let problem = ReducedHardSupCon::new(p.sizes(), tau);
    let settings = Settings {
        steps: HARD_SUPCON_STEPS,
        step_size: 0.1,
        max_step: 1e12,
        decay: 0.5,
        rule: StepRule::BarzilaiBorwein,
        stop_grad_norm: 1e-11,
        stop_value: 0.0,
        checkpoint_every: HARD_SUPCON_STEPS,
        constraint: Constraint::UnitSphere,
    };
    let runs = (0..HARD_SUPCON_RESTARTS)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
            run(&problem, random_start(c, c, 1.0, &mut rng), &settings)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.loss < runs[best].loss {
            best = i;
        }
    }
    let best = &runs[best];
    if best.grad_norm > HARD_SUPCON_GRAD_TOL {
        return Err(Error::NonConvergence {
            grad_norm: best.grad_norm,
        });
    }
    let mut mu = DMatrix::zeros(c, q);
    mu.columns_mut(0, c).copy_from(&best.x);
    Ok(PrototypeGeometry::from_prototypes(mu))
}
