//! The loss never drops below the entropy of the target distribution, and
//! reaches it exactly when `s_ij = ln w_ij + const` row by row.

use contrastive_geometry::infonce::{entropic_bound, infonce_loss, loss_report, optimality_residual};
use contrastive_geometry::matrices::WeightMatrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> contrastive_geometry::Result<()> {
    let n = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.05..1.0));
    raw = (&raw + raw.transpose()) * 0.5;
    raw.fill_diagonal(1.0);
    let w = WeightMatrix::new(raw)?;

    let h = entropic_bound(&w);
    println!("H(p_W) = {h:.12}");

    let at_optimum = w.as_matrix().map(f64::ln);
    println!("loss at s = ln w  = {:.12}", infonce_loss(&w, &at_optimum)?);
    println!("optimality residual: {:?}", optimality_residual(&w, &at_optimum)?);

    for trial in 0..3 {
        let s = DMatrix::from_fn(n, n, |_, _| rng.random_range(-3.0..3.0));
        let s = (&s + s.transpose()) * 0.5;
        let r = loss_report(&w, &s)?;
        println!("random s #{trial}: loss {:.6}  gap {:.3e}", r.loss, r.gap);
    }
    Ok(())
}
