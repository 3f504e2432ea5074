//! Label-distance weights on the sphere: line labels cannot reach the bound,
//! circle labels can.
//!
//! `cargo run --release --example yaware_sphere -- [out_dir]`

use std::path::PathBuf;

use contrastive_geometry::experiments::{run_yaware_sphere, YAwareSphereConfig};

fn main() -> contrastive_geometry::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let r = run_yaware_sphere(&YAwareSphereConfig::default(), out.as_deref())?;
    println!("line labels, spherical gap per restart:");
    for (i, g) in r.line_spherical_gaps.iter().enumerate() {
        println!("  restart {i}: {g:.4e}");
    }
    println!("line labels, spherical floor   {:.4e}", r.line_spherical_floor);
    println!("line labels, euclidean gap     {:.4e}", r.line_euclidean_gap);
    println!("line labels, euclidean r2      {:.6}", r.line_euclidean_r2_rigid);
    println!(
        "circle labels (tau {}), gap    {:.4e}",
        r.circle_tau, r.circle_spherical_gap
    );
    Ok(())
}
