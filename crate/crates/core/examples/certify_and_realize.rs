//! Certifies dissimilarity matrices and realizes them as point sets.

use contrastive_geometry::distgeo::{certify, realize_euclidean, realize_spherical};
use contrastive_geometry::matrices::DissimilarityMatrix;
use nalgebra::DMatrix;

fn main() -> contrastive_geometry::Result<()> {
    // four points on a circle of radius 0.5
    let pts = DMatrix::from_row_slice(4, 2, &[0.5, 0.0, 0.0, 0.5, -0.5, 0.0, 0.0, -0.5]);
    let d = DissimilarityMatrix::from_points(&pts);
    let report = certify(&d);
    println!("{}", serde_json::to_string_pretty(&report)?);

    let z = realize_euclidean(&d, 2)?;
    println!("euclidean realization:\n{}", z.as_matrix());
    let tau = 1.0;
    println!(
        "spherically realizable at tau = {tau}, q = 3: {}",
        report.spherically_realizable(tau, 3)
    );
    let u = realize_spherical(&d, tau, 3)?;
    println!("spherical realization (unit rows):\n{}", u.as_matrix());

    // the triangle inequality fails for squared distances 1, 1, 9
    let bad =
        DissimilarityMatrix::from_rows(&[vec![0.0, 1.0, 9.0], vec![1.0, 0.0, 1.0], vec![9.0, 1.0, 0.0]])?;
    let r = certify(&bad);
    println!(
        "non-EDM: is_edm = {}, spectrum = {:?}",
        r.is_edm, r.eigen_spectrum
    );
    Ok(())
}
