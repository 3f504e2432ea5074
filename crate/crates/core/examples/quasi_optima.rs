//! Euclidean SupCon has no minimizer: scaled prototypes approach the bound
//! whatever their shape.
//!
//! `cargo run --release --example quasi_optima -- [out_dir]`

use std::path::PathBuf;

use contrastive_geometry::experiments::{run_quasi_optima, QuasiOptimaConfig};

fn main() -> contrastive_geometry::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let r = run_quasi_optima(&QuasiOptimaConfig::default(), out.as_deref())?;
    print!("{:<12}", "shape");
    for m in &r.scales {
        print!(" {:>11}", format!("m={m}"));
    }
    println!();
    for s in &r.sweeps {
        print!("{:<12}", s.shape);
        for g in &s.gaps {
            print!(" {g:>11.3e}");
        }
        println!("  decreasing: {}", s.strictly_decreasing);
    }
    for (a, b, r2) in &r.mutual_r2 {
        println!("rigid r2 {a} vs {b}: {r2:.4}");
    }
    Ok(())
}
