//! Closed-form optima for dense weighting schemes, checked against the bound.

use contrastive_geometry::infonce::loss_gap;
use contrastive_geometry::matrices::{ClassPartition, Similarity};
use contrastive_geometry::optima::{
    optimum_euclidean_labels, optimum_soft_supcon, optimum_xclr, soft_supcon_simplex_tau,
};
use contrastive_geometry::weights::{soft_supcon_weights, xclr_weights, y_aware_weights, LabelSet};

fn main() -> contrastive_geometry::Result<()> {
    let labels = LabelSet::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.3, 1.2], vec![0.8, -0.9]])?;
    let z = optimum_euclidean_labels(&labels, 3)?;
    let gap = loss_gap(&y_aware_weights(&labels)?, &z, Similarity::Euclidean)?;
    println!("y-aware, euclidean: gap {:.3e}", gap.gap);

    let unit = LabelSet::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![0.6, 0.8, 0.0],
    ])?;
    let (tau, tau_prime) = (0.1, 0.1);
    let z = optimum_xclr(&unit, tau, tau_prime, 4)?;
    let gap = loss_gap(&xclr_weights(&unit, tau_prime)?, &z, Similarity::spherical(tau)?)?;
    println!("x-clr, spherical:   gap {:.3e}", gap.gap);

    let classes = ClassPartition::from_sizes(&[3, 5, 9, 2])?;
    let eps = (-1.0f64).exp();
    let tau = soft_supcon_simplex_tau(4, eps);
    let z = optimum_soft_supcon(&classes, eps, tau, 4)?;
    let gap = loss_gap(
        &soft_supcon_weights(&classes, eps)?,
        &z,
        Similarity::spherical(tau)?,
    )?;
    println!("soft supcon at tau = {tau:.4}: gap {:.3e}", gap.gap);
    Ok(())
}
