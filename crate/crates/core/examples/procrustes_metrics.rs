//! Procrustes and similarity scores between an embedding and a target.

use contrastive_geometry::distgeo::{procrustes_align, AlignMode};
use contrastive_geometry::matrices::{Embedding, Similarity};
use contrastive_geometry::metrics::coefficient_of_similarity;
use nalgebra::{DMatrix, Rotation2};

fn transform(z: &Embedding, angle: f64, shift: [f64; 2]) -> Embedding {
    let rot = Rotation2::new(angle);
    Embedding::new(DMatrix::from_fn(z.n(), 2, |i, k| {
        (rot * z.row(i).transpose())[k] + shift[k]
    }))
}

fn main() -> contrastive_geometry::Result<()> {
    let target = Embedding::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0], vec![1.5, 1.0]])?;

    let rotated = transform(&target, 0.7, [0.0, 0.0]);
    let moved = transform(&target, 0.7, [3.0, -1.0]);
    for (name, z) in [("rotated", &rotated), ("rotated + shifted", &moved)] {
        let rigid = procrustes_align(z, &target, AlignMode::Rigid)?.r2;
        // no translation allowed here
        let linear = procrustes_align(z, &target, AlignMode::Linear)?.r2;
        let ssim = coefficient_of_similarity(z, &target, Similarity::Euclidean)?;
        println!("{name:<18} rigid {rigid:>10.6}  linear {linear:>10.6}  s-sim {ssim:>10.6}");
    }

    let stretched = Embedding::new(target.as_matrix() * DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
    println!(
        "{:<18} rigid {:>10.6}  s-sim {:>10.6}",
        "stretched",
        procrustes_align(&stretched, &target, AlignMode::Rigid)?.r2,
        coefficient_of_similarity(&stretched, &target, Similarity::Euclidean)?
    );
    Ok(())
}
