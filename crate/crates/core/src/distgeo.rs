//! Distance geometry: EDM and spherical-EDM certification, classical and
//! spherical realizations, and orthogonal Procrustes alignment.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{double_center, SortedEigen};
use crate::matrices::{ClassPartition, DissimilarityMatrix, Embedding};

/// Relative tolerance for the circumsphere residual `max_i | ||p_i - a|| - rho |`.
pub const SPHERE_RTOL: f64 = 1e-6;

/// Certification verdicts for a dissimilarity matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub is_edm: bool,
    /// Rank of the centered Gram matrix `B = -1/2 J D J`.
    pub embedding_dim: usize,
    pub is_spherical: bool,
    /// Circumradius of the generating points, when spherical.
    pub radius: Option<f64>,
    pub rank_d: usize,
    /// Eigenvalues of `B`, decreasing.
    pub eigen_spectrum: Vec<f64>,
}

impl GeometryReport {
    /// Whether a spherical realization with `s_ij = cos/tau` exists in `q` dimensions.
    pub fn spherically_realizable(&self, tau: f64, q: usize) -> bool {
        let Some(rho) = self.radius.filter(|_| self.is_edm && self.is_spherical) else {
            return false;
        };
        let limit = 1.0 / (2.0 * tau).sqrt();
        if rho > limit * (1.0 + 1e-9) {
            return false;
        }
        let r = self.embedding_dim;
        r < q || (r == q && (limit - rho).abs() <= 1e-9 * limit)
    }
}

struct Generators {
    report: GeometryReport,
    /// `n x r` classical realization centered on the centroid.
    points: DMatrix<f64>,
    /// Circumcenter in generator coordinates, when fitted.
    center: Option<DVector<f64>>,
}

fn generate(d: &DissimilarityMatrix) -> Generators {
    let b = double_center(d.as_matrix()) * -0.5;
    let eig = SortedEigen::new(&b);
    let is_edm = eig.is_psd();
    let r = eig.rank();
    let rank_d = SortedEigen::new(d.as_matrix()).rank_abs();
    let points = eig.scaled_leading_vectors(r);

    let (is_spherical, radius, center) = if !is_edm {
        (false, None, None)
    } else if r == 0 {
        (true, Some(0.0), Some(DVector::zeros(0)))
    } else {
        let (center, rho, worst) = circumsphere(&points);
        let fits = worst <= SPHERE_RTOL * rho;
        let spherical = if r + 2 <= d.n() {
            fits && rank_d == r + 1
        } else {
            fits
        };
        if spherical {
            (true, Some(rho), Some(center))
        } else {
            (false, None, None)
        }
    };

    Generators {
        report: GeometryReport {
            is_edm,
            embedding_dim: r,
            is_spherical,
            radius,
            rank_d,
            eigen_spectrum: eig.values,
        },
        points,
        center,
    }
}

/// Least-squares center `a` of `||p_i||^2 - 2 <a, p_i> = const`.
/// Returns `(a, rho, max_i | ||p_i - a|| - rho |)`.
fn circumsphere(points: &DMatrix<f64>) -> (DVector<f64>, f64, f64) {
    let (n, r) = points.shape();
    let a = DMatrix::from_fn(n, r + 1, |i, k| if k < r { 2.0 * points[(i, k)] } else { 1.0 });
    let rhs = DVector::from_fn(n, |i, _| points.row(i).norm_squared());
    let sol = SVD::new(a, true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(r + 1));
    let center = sol.rows(0, r).into_owned();
    let dists: Vec<f64> = (0..n)
        .map(|i| (points.row(i).transpose() - &center).norm())
        .collect();
    let rho = dists.iter().sum::<f64>() / n as f64;
    let worst = dists.iter().fold(0.0f64, |m, d| m.max((d - rho).abs()));
    (center, rho, worst)
}

/// EDM / spherical-EDM certification.
pub fn certify(d: &DissimilarityMatrix) -> GeometryReport {
    generate(d).report
}

/// Classical realization `U_r Lambda_r^{1/2}`, zero-padded to `q` columns.
pub fn realize_euclidean(d: &DissimilarityMatrix, q: usize) -> Result<Embedding> {
    let g = generate(d);
    if !g.report.is_edm {
        return Err(Error::NotEdm);
    }
    let r = g.report.embedding_dim;
    if r > q {
        return Err(Error::DimensionTooSmall {
            required: r,
            available: q,
        });
    }
    Embedding::new(g.points).padded(q)
}

/// Unit vectors with `cos(z_i, z_j) = 1 - tau d_ij`.
///
/// The generators are recentered on their circumcenter and lifted with the
/// extra coordinate `sqrt(1/(2 tau) - rho^2)` before normalization.
pub fn realize_spherical(d: &DissimilarityMatrix, tau: f64, q: usize) -> Result<Embedding> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::BadParameter(format!("tau must be positive, got {tau}")));
    }
    let g = generate(d);
    if !g.report.is_edm || !g.report.is_spherical {
        return Err(Error::NotSphericalEdm);
    }
    let rho = g.report.radius.unwrap_or(0.0);
    let center = g.center.unwrap_or_else(|| DVector::zeros(0));
    let limit_sq = 1.0 / (2.0 * tau);
    let limit = limit_sq.sqrt();
    if rho > limit * (1.0 + 1e-9) {
        return Err(Error::RadiusTooLarge {
            radius: rho,
            max: limit,
        });
    }
    let radicand = limit_sq - rho * rho;
    let lift = if radicand <= 1e-9 * limit_sq {
        0.0
    } else {
        radicand.sqrt()
    };
    let r = g.report.embedding_dim;
    let needed = if lift > 0.0 { r + 1 } else { r };
    if needed > q || q == 0 {
        return Err(Error::DimensionTooSmall {
            required: needed.max(1),
            available: q,
        });
    }
    let n = d.n();
    let mut z = DMatrix::zeros(n, q);
    for i in 0..n {
        for k in 0..r {
            z[(i, k)] = g.points[(i, k)] - center[k];
        }
        if r < q {
            z[(i, r)] = lift;
        }
    }
    if r == 0 && lift == 0.0 {
        // all points coincide at radius 0
        z.column_mut(0).fill(1.0);
    }
    Embedding::new(z).normalized()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Orthogonal map plus translation; both sets are centered.
    Rigid,
    /// Orthogonal map only, no centering.
    Linear,
}

/// Optimal `z -> Omega z + b` and the resulting Procrustes similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `Omega`, `q x q` orthogonal (reflections allowed).
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
    /// `sum_i ||Omega z_i + b - z*_i||^2`
    pub residual: f64,
    /// `sum_i ||z*_i - centroid||^2` (rigid) or `sum_i ||z*_i||^2` (linear).
    pub target_spread: f64,
    pub r2: f64,
}

impl Alignment {
    pub fn apply(&self, z: &Embedding) -> Embedding {
        let mut out = z.as_matrix() * self.rotation.transpose();
        let b = self.translation.transpose();
        for mut row in out.row_iter_mut() {
            row += &b;
        }
        Embedding::new(out)
    }
}

/// Orthogonal Procrustes: SVD of the cross-covariance, `Omega = (U V^T)^T`.
///
/// `r2 = 1 - mean ||Omega z_i + b - z*_i||^2 / sigma^2(Z*)`.
pub fn procrustes_align(z: &Embedding, zstar: &Embedding, mode: AlignMode) -> Result<Alignment> {
    if z.n() != zstar.n() {
        return Err(Error::SizeMismatch {
            expected: zstar.n(),
            found: z.n(),
        });
    }
    if z.q() != zstar.q() {
        return Err(Error::SizeMismatch {
            expected: zstar.q(),
            found: z.q(),
        });
    }
    let q = z.q();
    let (x, y, x_mean, y_mean) = match mode {
        AlignMode::Rigid => (
            z.centered().into_matrix(),
            zstar.centered().into_matrix(),
            z.centroid(),
            zstar.centroid(),
        ),
        AlignMode::Linear => (
            z.as_matrix().clone(),
            zstar.as_matrix().clone(),
            DVector::zeros(q),
            DVector::zeros(q),
        ),
    };
    let target_spread = y.norm_squared();
    if target_spread <= f64::MIN_POSITIVE {
        return Err(Error::DegenerateTarget);
    }
    let h = x.transpose() * &y;
    let svd = SVD::new(h, true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::BadParameter("SVD failed to converge".into()));
    };
    // rows: x_i R ~ y_i with R = U V^T, so Omega = R^T
    let r = u * v_t;
    let residual = (&x * &r - &y).norm_squared();
    let rotation = r.transpose();
    let translation = &y_mean - &rotation * &x_mean;
    Ok(Alignment {
        rotation,
        translation,
        residual,
        target_spread,
        r2: 1.0 - residual / target_spread,
    })
}

/// Pooled within-group rigid Procrustes similarity. A collapsed target group
/// adds its embedding spread to the residual and nothing to the spread;
/// `DegenerateTarget` when every group is collapsed.
pub fn grouped_procrustes(z: &Embedding, zstar: &Embedding, groups: &ClassPartition) -> Result<f64> {
    if groups.n() != z.n() || z.n() != zstar.n() {
        return Err(Error::SizeMismatch {
            expected: groups.n(),
            found: z.n(),
        });
    }
    // groups whose target spread is rounding noise next to the whole set count as collapsed
    let floor = 1e-20 * zstar.centered().as_matrix().norm_squared() + f64::MIN_POSITIVE;
    let mut residual = 0.0;
    let mut spread = 0.0;
    for c in 0..groups.num_classes() {
        let members = groups.members(c);
        let sub = |e: &Embedding| Embedding::new(e.as_matrix().select_rows(members.iter()));
        let (zs, ts) = (sub(z), sub(zstar));
        let target = ts.centered().as_matrix().norm_squared();
        if target <= floor {
            residual += zs.centered().as_matrix().norm_squared();
            continue;
        }
        let a = procrustes_align(&zs, &ts, AlignMode::Rigid)?;
        residual += a.residual;
        spread += a.target_spread;
    }
    if spread <= floor {
        return Err(Error::DegenerateTarget);
    }
    Ok(1.0 - residual / spread)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(rows: &[&[f64]]) -> DissimilarityMatrix {
        DissimilarityMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn collinear() -> DissimilarityMatrix {
        d(&[&[0., 1., 4.], &[1., 0., 1.], &[4., 1., 0.]])
    }

    fn square() -> DissimilarityMatrix {
        d(&[
            &[0., 2., 4., 2.],
            &[2., 0., 2., 4.],
            &[4., 2., 0., 2.],
            &[2., 4., 2., 0.],
        ])
    }

    #[test]
    fn certifies_collinear_points() {
        let r = certify(&collinear());
        assert!(r.is_edm);
        assert_eq!(r.embedding_dim, 1);
        assert_eq!(r.rank_d, 3);
        assert!(!r.is_spherical);
    }

    #[test]
    fn certifies_unit_square() {
        let r = certify(&square());
        assert!(r.is_edm && r.is_spherical);
        assert_eq!(r.embedding_dim, 2);
        assert_eq!(r.rank_d, 3);
        assert_abs_diff_eq!(r.radius.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_triangle_violation() {
        let r = certify(&d(&[&[0., 1., 9.], &[1., 0., 1.], &[9., 1., 0.]]));
        assert!(!r.is_edm);
        assert!(!r.is_spherical);
    }

    #[test]
    fn realizes_collinear_points_in_one_dimension() {
        let z = realize_euclidean(&collinear(), 1).unwrap();
        let mut coords: Vec<f64> = (0..3).map(|i| z.as_matrix()[(i, 0)]).collect();
        if coords[0] > coords[2] {
            coords.iter_mut().for_each(|c| *c = -*c);
        }
        let shift = coords[0];
        for (c, expect) in coords.iter().zip([0.0, 1.0, 2.0]) {
            assert_abs_diff_eq!(c - shift, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn square_needs_two_dimensions() {
        assert!(matches!(
            realize_euclidean(&square(), 1),
            Err(Error::DimensionTooSmall {
                required: 2,
                available: 1
            })
        ));
        assert!(matches!(
            realize_euclidean(&d(&[&[0., 1., 9.], &[1., 0., 1.], &[9., 1., 0.]]), 3),
            Err(Error::NotEdm)
        ));
    }

    #[test]
    fn regular_simplex_distances_are_reproduced() {
        let c = 5usize;
        let v = 2.0 * c as f64 / (c - 1) as f64;
        let dm =
            DissimilarityMatrix::new(DMatrix::from_fn(c, c, |i, j| if i == j { 0.0 } else { v })).unwrap();
        let z = realize_euclidean(&dm, c - 1).unwrap();
        for i in 0..c {
            for j in 0..c {
                assert_abs_diff_eq!(z.squared_distance(i, j), dm.get(i, j), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spherical_square_on_unit_circle() {
        let z = realize_spherical(&square(), 0.5, 2).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(z.row_norm(i), 1.0, epsilon = 1e-14);
            let next = (i + 1) % 4;
            assert_abs_diff_eq!(z.row(i).dot(&z.row(next)), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(z.row(i).dot(&z.row((i + 2) % 4)), -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn soft_supcon_prototypes_from_spherical_realization() {
        let unit = d(&[&[0., 1., 1.], &[1., 0., 1.], &[1., 1., 0.]]);
        let z = realize_spherical(&unit, 1.5, 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = 1.0 - 1.5 * unit.get(i, j);
                assert_abs_diff_eq!(z.row(i).dot(&z.row(j)), expect, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn spherical_realization_lifts_small_radius() {
        // radius 1 square, tau = 0.1 gives 1/(2 tau) = 5 > 1
        let z = realize_spherical(&square(), 0.1, 3).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = 1.0 - 0.1 * square().get(i, j);
                assert_abs_diff_eq!(z.row(i).dot(&z.row(j)), expect, epsilon = 1e-10);
            }
        }
        assert!(matches!(
            realize_spherical(&square(), 0.1, 2),
            Err(Error::DimensionTooSmall {
                required: 3,
                available: 2
            })
        ));
        assert!(matches!(
            realize_spherical(&square(), 1.0, 3),
            Err(Error::RadiusTooLarge { .. })
        ));
    }

    #[test]
    fn collinear_points_are_not_spherical() {
        // Oracle: numeric rank(D) = 3 = r + 2, and no circle fits three collinear points.
        let dm = collinear();
        assert_eq!(SortedEigen::new(dm.as_matrix()).rank_abs(), 3);
        let pts = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 1.0]);
        let (_, rho, worst) = circumsphere(&pts);
        assert!(worst > SPHERE_RTOL * rho);
        assert!(matches!(
            realize_spherical(&dm, 0.1, 3),
            Err(Error::NotSphericalEdm)
        ));
    }

    fn planar(points: &[[f64; 2]]) -> Embedding {
        Embedding::from_rows(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn transform(z: &Embedding, angle: f64, reflect: bool, shift: [f64; 2], scale: f64) -> Embedding {
        let (c, s) = (angle.cos(), angle.sin());
        let f = if reflect { -1.0 } else { 1.0 };
        let m = z.as_matrix();
        Embedding::new(DMatrix::from_fn(z.n(), 2, |i, k| {
            let (x, y) = (m[(i, 0)], f * m[(i, 1)]);
            scale * if k == 0 { c * x - s * y } else { s * x + c * y } + shift[k]
        }))
    }

    fn sample() -> Embedding {
        planar(&[[0.0, 0.0], [1.0, 0.2], [0.3, 1.5], [-0.7, 0.4], [2.0, -1.0]])
    }

    #[test]
    fn procrustes_recovers_isometries() {
        let z = sample();
        let rotated = transform(&z, std::f64::consts::FRAC_PI_2, false, [3.0, -1.0], 1.0);
        let a = procrustes_align(&z, &rotated, AlignMode::Rigid).unwrap();
        assert_abs_diff_eq!(a.r2, 1.0, epsilon = 1e-12);
        let mapped = a.apply(&z);
        assert!((mapped.as_matrix() - rotated.as_matrix()).amax() < 1e-12);

        let reflected = transform(&z, 0.0, true, [0.0, 0.0], 1.0);
        let a = procrustes_align(&z, &reflected, AlignMode::Rigid).unwrap();
        assert_abs_diff_eq!(a.r2, 1.0, epsilon = 1e-12);
        assert!(a.rotation.determinant() < 0.0);

        let scaled = transform(&z, 0.0, false, [0.0, 0.0], 2.0);
        assert!(procrustes_align(&z, &scaled, AlignMode::Rigid).unwrap().r2 < 1.0);
    }

    #[test]
    fn identical_configurations_score_exactly_one() {
        let z = sample();
        assert_eq!(procrustes_align(&z, &z, AlignMode::Rigid).unwrap().r2, 1.0);
        assert_eq!(procrustes_align(&z, &z, AlignMode::Linear).unwrap().r2, 1.0);
    }

    #[test]
    fn linear_mode_does_not_translate() {
        let z = sample();
        let shifted = transform(&z, 0.3, false, [5.0, 5.0], 1.0);
        assert!(procrustes_align(&z, &shifted, AlignMode::Linear).unwrap().r2 < 0.99);
        let rotated = transform(&z, 0.3, true, [0.0, 0.0], 1.0);
        assert_abs_diff_eq!(
            procrustes_align(&z, &rotated, AlignMode::Linear).unwrap().r2,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_target_is_rejected() {
        let z = sample();
        let flat = planar(&[[1.0, 1.0]; 5]);
        assert!(matches!(
            procrustes_align(&z, &flat, AlignMode::Rigid),
            Err(Error::DegenerateTarget)
        ));
    }

    #[test]
    fn grouped_procrustes_collapsed_groups() {
        let groups = ClassPartition::from_sizes(&[2, 2]).unwrap();
        let target = planar(&[[0., 0.], [1e-17, 0.], [5., 0.], [5., 0.]]);
        let z = planar(&[[0., 0.], [0., 1e-16], [5., 1.], [5., 1.]]);
        assert!(matches!(
            grouped_procrustes(&z, &target, &groups),
            Err(Error::DegenerateTarget)
        ));
        // one real group: the collapsed one only adds its residual
        let target = planar(&[[0., 0.], [2., 0.], [5., 0.], [5., 0.]]);
        let z = planar(&[[0., 0.], [0., 2.], [5., 0.], [5., 1.]]);
        assert_abs_diff_eq!(
            grouped_procrustes(&z, &target, &groups).unwrap(),
            1.0 - 0.5 / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn grouped_procrustes_sees_piecewise_isometry() {
        let z = planar(&[[0., 0.], [1., 0.], [0., 1.], [3., 3.], [4., 3.5], [3.2, 5.]]);
        let groups = ClassPartition::from_sizes(&[3, 3]).unwrap();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let first = transform(
            &Embedding::new(z.as_matrix().rows(0, 3).into_owned()),
            1.0,
            false,
            [1., 2.],
            1.0,
        );
        let second = transform(
            &Embedding::new(z.as_matrix().rows(3, 3).into_owned()),
            -2.0,
            true,
            [-4., 0.],
            1.0,
        );
        for e in [&first, &second] {
            for i in 0..3 {
                rows.push(e.row(i).iter().copied().collect());
            }
        }
        let target = Embedding::from_rows(&rows).unwrap();
        let local = grouped_procrustes(&z, &target, &groups).unwrap();
        assert_abs_diff_eq!(local, 1.0, epsilon = 1e-12);
        let global = procrustes_align(&z, &target, AlignMode::Rigid).unwrap().r2;
        assert!(global < 0.99);

        assert_abs_diff_eq!(grouped_procrustes(&z, &z, &groups).unwrap(), 1.0, epsilon = 1e-12);
        let single = ClassPartition::from_sizes(&[6]).unwrap();
        assert_abs_diff_eq!(
            grouped_procrustes(&z, &target, &single).unwrap(),
            global,
            epsilon = 1e-12
        );
    }
}
