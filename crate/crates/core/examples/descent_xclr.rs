//! Gradient descent on X-CLR weights recovers the closed-form optimum up to
//! an orthogonal map.

use contrastive_geometry::descent::{minimize, DescentConfig};
use contrastive_geometry::distgeo::{procrustes_align, AlignMode};
use contrastive_geometry::matrices::Similarity;
use contrastive_geometry::optima::optimum_xclr;
use contrastive_geometry::weights::{xclr_weights, LabelSet};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> contrastive_geometry::Result<()> {
    let n = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut y = DMatrix::from_fn(n, 3, |_, _| StandardNormal.sample(&mut rng));
    for mut row in y.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    let labels = LabelSet::new(y);
    let (tau, tau_prime, q) = (0.1, 0.1, 6);

    let w = xclr_weights(&labels, tau_prime)?;
    let cfg = DescentConfig {
        restarts: 1,
        ..DescentConfig::default()
    };
    let trace = minimize(&w, Similarity::spherical(tau)?, q, &cfg)?;
    for c in trace.checkpoints.iter().step_by(10) {
        println!(
            "step {:>6}  gap {:.3e}  |grad| {:.3e}",
            c.step, c.gap, c.grad_norm
        );
    }
    let target = optimum_xclr(&labels, tau, tau_prime, q)?;
    let fit = procrustes_align(&trace.embedding.normalized()?, &target, AlignMode::Linear)?;
    println!("final gap {:.3e}, linear r2 {:.8}", trace.report.gap, fit.r2);
    Ok(())
}
