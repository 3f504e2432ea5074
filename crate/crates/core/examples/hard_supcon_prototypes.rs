//! Collapsed Hard SupCon prototypes: a regular simplex for balanced classes,
//! a distorted one otherwise.

use contrastive_geometry::matrices::ClassPartition;
use contrastive_geometry::optima::{hard_supcon_bound, optimum_hard_supcon, reduced_hard_supcon_loss};

fn main() -> contrastive_geometry::Result<()> {
    let tau = 0.1;
    for sizes in [vec![6; 5], vec![4, 8, 12, 16, 20]] {
        let p = ClassPartition::from_sizes(&sizes)?;
        let g = optimum_hard_supcon(&p, tau, sizes.len())?;
        println!("sizes {sizes:?}");
        println!(
            "  loss {:.6} vs bound {:.6}",
            reduced_hard_supcon_loss(&sizes, &g.gram, tau),
            hard_supcon_bound(&sizes)
        );
        println!("  simplex deviation {:.3e}", g.simplex_deviation());
        for i in 0..g.c {
            let row: Vec<String> = (0..g.c).map(|j| format!("{:7.4}", g.gram[(i, j)])).collect();
            println!("  {}", row.join(" "));
        }
    }
    Ok(())
}
