//! Pick a cluster count by silhouette for k-means and Ward clustering, and
//! test whether the two disagree on cluster quality.

use ndarray::Array2;
use rand::Rng;
use portdrift::mlcore::{
    mann_whitney_u, select_k, silhouette, DistanceMatrix, KMeansClusterer, WardClusterer, DEFAULT_K_MAX,
};

fn main() -> portdrift::Result<()> {
    // three blobs of 12 points each
    let centres = [(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)];
    let mut rng = portdrift::rng::seeded(9);
    let x = Array2::from_shape_fn((36, 2), |(i, j)| {
        let (cx, cy) = centres[i / 12];
        let jitter = rng.random_range(-0.5..0.5);
        if j == 0 { cx + jitter } else { cy + jitter }
    });
    let d = DistanceMatrix::euclidean(x.view());

    let km = select_k(&d, &KMeansClusterer::new(x.view(), 1), DEFAULT_K_MAX)?;
    let ward = select_k(&d, &WardClusterer::new(&d), DEFAULT_K_MAX)?;
    for (name, sel) in [("k-means", &km), ("ward", &ward)] {
        println!("{name:<8} k={} sizes={:?}", sel.k, sel.clustering.sizes());
    }

    let a = silhouette(&d, &km.clustering)?.per_point;
    let b = silhouette(&d, &ward.clustering)?.per_point;
    let test = mann_whitney_u(&a, &b)?;
    println!("silhouette k-means vs ward: U={} p={:.3} (exact: {})", test.u, test.p, test.exact);
    Ok(())
}
