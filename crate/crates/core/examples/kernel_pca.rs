//! Kernel weights recover kernel PCA coordinates.
//!
//! `cargo run --release --example kernel_pca -- [out_dir]`

use std::path::PathBuf;

use contrastive_geometry::experiments::{run_kernel_pca, KernelPcaConfig};

fn main() -> contrastive_geometry::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let r = run_kernel_pca(&KernelPcaConfig::default(), out.as_deref())?;
    println!("gap                    {:.3e}", r.gap);
    println!("rigid r2 vs PCs        {:.8}", r.r2_rigid);
    if let Some(g) = r.underdimensioned_gap {
        println!("gap with q = rank - 1  {g:.3e}");
    }
    println!(
        "identity kernel max/min distance {:.8}",
        r.identity_distance_ratio
    );
    Ok(())
}
