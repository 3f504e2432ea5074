//! Builds every weighting scheme on a tiny dataset and prints the matrices.

use contrastive_geometry::matrices::{ClassPartition, WeightMatrix};
use contrastive_geometry::weights::{
    combine_weights, kernel_weights, soft_supcon_weights, supcon_weights, xclr_weights, y_aware_weights,
    LabelSet,
};

fn show(name: &str, w: &WeightMatrix) {
    println!("{name} (well conditioned: {})", w.is_well_conditioned());
    for i in 0..w.n() {
        let row: Vec<String> = (0..w.n()).map(|j| format!("{:6.3}", w.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> contrastive_geometry::Result<()> {
    let classes = ClassPartition::from_sizes(&[2, 3])?;
    let labels = LabelSet::from_rows(&[
        vec![0.1, 0.0],
        vec![0.2, 0.1],
        vec![1.0, 0.0],
        vec![0.9, 0.3],
        vec![1.1, -0.2],
    ])?;

    let supcon = supcon_weights(&classes)?;
    show("supcon", &supcon);
    show(
        "soft supcon, eps = 1/e",
        &soft_supcon_weights(&classes, (-1.0f64).exp())?,
    );
    let yaware = y_aware_weights(&labels)?;
    show("y-aware", &yaware);
    show("x-clr, tau' = 0.5", &xclr_weights(&labels, 0.5)?);
    show("linear kernel", &kernel_weights(&labels.linear_kernel())?);
    // class membership and label distance at once
    show("supcon x y-aware", &combine_weights(&supcon, &yaware)?);
    Ok(())
}
