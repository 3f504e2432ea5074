//! Convergence metrics comparing a learned embedding with a target.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distgeo::{grouped_procrustes, procrustes_align, AlignMode};
use crate::error::{Error, Result};
use crate::infonce::{loss_gap, similarity_matrix};
use crate::linalg::pairwise_sum;
use crate::matrices::{ClassPartition, Embedding, Similarity, WeightMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Relative loss gap, or the absolute gap when `ratio_undefined`.
    pub delta_w: f64,
    pub absolute_gap: f64,
    pub ratio_undefined: bool,
    pub r2_ssim: f64,
    pub r2_proc_rigid: f64,
    pub r2_proc_linear: f64,
    pub r2_proc_local: Option<f64>,
}

/// `1 - mean (s_ij - s*_ij)^2 / var(s*_ij)` over all ordered pairs, diagonal included.
pub fn coefficient_of_similarity(z: &Embedding, zstar: &Embedding, spec: Similarity) -> Result<f64> {
    if z.n() != zstar.n() {
        return Err(Error::SizeMismatch {
            expected: zstar.n(),
            found: z.n(),
        });
    }
    let s = similarity_matrix(z, spec)?;
    let t = similarity_matrix(zstar, spec)?;
    let count = (t.len()) as f64;
    let mean = pairwise_sum(t.as_slice()) / count;
    let spread: Vec<f64> = t.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&spread) / count;
    if var <= 1e-20 * (1.0 + mean * mean) {
        return Err(Error::DegenerateTarget);
    }
    let resid: Vec<f64> = s.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok(1.0 - pairwise_sum(&resid) / count / var)
}

/// Loss gap plus all similarity and Procrustes scores. Cosine specs compare
/// row-normalized embeddings.
pub fn full_report(
    w: &WeightMatrix,
    z: &Embedding,
    zstar: &Embedding,
    spec: Similarity,
    groups: Option<&ClassPartition>,
) -> Result<MetricsReport> {
    let gap = loss_gap(w, z, spec)?;
    let r2_ssim = coefficient_of_similarity(z, zstar, spec)?;
    let (a, b) = if spec.is_spherical() {
        (z.normalized()?, zstar.normalized()?)
    } else {
        (z.clone(), zstar.clone())
    };
    let r2_proc_rigid = procrustes_align(&a, &b, AlignMode::Rigid)?.r2;
    let r2_proc_linear = procrustes_align(&a, &b, AlignMode::Linear)?.r2;
    // undefined, not an error, when the target collapses every group
    let r2_proc_local = match groups.map(|g| grouped_procrustes(&a, &b, g)) {
        Some(Err(Error::DegenerateTarget)) => None,
        other => other.transpose()?,
    };
    Ok(MetricsReport {
        delta_w: gap.gap,
        absolute_gap: gap.absolute_gap,
        ratio_undefined: gap.ratio_undefined,
        r2_ssim,
        r2_proc_rigid,
        r2_proc_linear,
        r2_proc_local,
    })
}

/// Mean cosine between classes; diagonal blocks skip self pairs.
pub fn class_block_cosines(z: &Embedding, p: &ClassPartition) -> Result<DMatrix<f64>> {
    if z.n() != p.n() {
        return Err(Error::SizeMismatch {
            expected: p.n(),
            found: z.n(),
        });
    }
    let u = z.normalized()?;
    let cos = u.as_matrix() * u.as_matrix().transpose();
    let c = p.num_classes();
    let mut sums = DMatrix::zeros(c, c);
    let mut counts = DMatrix::<f64>::zeros(c, c);
    for i in 0..p.n() {
        for j in 0..p.n() {
            if i != j {
                let (a, b) = (p.class_of(i), p.class_of(j));
                sums[(a, b)] += cos[(i, j)];
                counts[(a, b)] += 1.0;
            }
        }
    }
    Ok(sums.component_div(&counts))
}

/// Smallest cosine between two members of the same class.
pub fn min_intra_class_cosine(z: &Embedding, p: &ClassPartition) -> Result<f64> {
    let u = z.normalized()?;
    let mut worst = f64::INFINITY;
    for i in 0..p.n() {
        for j in (i + 1)..p.n() {
            if p.class_of(i) == p.class_of(j) {
                worst = worst.min(u.row(i).dot(&u.row(j)));
            }
        }
    }
    Ok(worst)
}

/// Largest `|m_cc' + 1/(C-1)|` over off-diagonal entries of a class-level cosine matrix.
pub fn regularity_deviation(block: &DMatrix<f64>) -> f64 {
    let c = block.nrows();
    if c < 2 {
        return 0.0;
    }
    let target = -1.0 / (c - 1) as f64;
    let mut worst = 0.0f64;
    for a in 0..c {
        for b in 0..c {
            if a != b {
                worst = worst.max((block[(a, b)] - target).abs());
            }
        }
    }
    worst
}
