//! Hard and Soft SupCon descent under class imbalance.
//!
//! `cargo run --release --example imbalanced_supcon -- [out_dir]`

use std::path::PathBuf;

use contrastive_geometry::experiments::{run_imbalanced_supcon, ImbalancedSupconConfig};

fn main() -> contrastive_geometry::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let report = run_imbalanced_supcon(&ImbalancedSupconConfig::default(), out.as_deref())?;
    println!(
        "{:<5} {:<10} {:>4} {:>10} {:>10} {:>10} {:>10}",
        "loss", "profile", "n", "gap", "min_cos", "reg_dev", "eq_shape"
    );
    for r in &report.runs {
        println!(
            "{:<5} {:<10} {:>4} {:>10.2e} {:>10.6} {:>10.2e} {:>10.2e}",
            r.loss, r.profile, r.n, r.gap, r.min_intra_cosine, r.regularity_deviation, r.equal_shape_spread
        );
        if let Some(a) = r.reduced_gram_agreement {
            println!("      max |block - reduced gram| = {a:.2e}");
        }
    }
    Ok(())
}
