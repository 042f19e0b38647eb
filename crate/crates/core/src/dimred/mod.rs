//! Sample-level dimensionality reduction and clustering.

mod hclust;
mod pca;
mod tsne;

pub use hclust::{cut_dendrogram, cut_into_clusters, hierarchical_cluster, Dendrogram, Linkage, Merge};
pub use pca::{pca, pca_points, PcaResult};
pub use tsne::{
    joint_probabilities, kl_divergence_and_gradient, low_dim_affinities, silhouette, tsne, tsne_points, TsneParams,
    TsneResult,
};

use nalgebra::DMatrix;

use crate::exec::Exec;

/// Squared Euclidean distances between the rows of `points`.
///
/// Uses `‖a‖² + ‖b‖² − 2a·b` with the Gram matrix from a single GEMM, then
/// clamps tiny negative round-off to zero. The diagonal is exactly zero.
pub fn pairwise_sq_dists(points: &DMatrix<f64>, exec: Exec) -> DMatrix<f64> {
    let (n, d) = points.shape();
    // Row-major copy so each sample is contiguous.
    let rows: Vec<f64> = (0..n).flat_map(|i| points.row(i).iter().copied().collect::<Vec<_>>()).collect();
    let mut gram = vec![0.0; n * n];
    // SAFETY: `rows` is n × d row-major and `gram` is n × n row-major.
    unsafe {
        matrixmultiply::dgemm(
            n,
            d,
            n,
            1.0,
            rows.as_ptr(),
            d as isize,
            1,
            rows.as_ptr(),
            1,
            d as isize,
            0.0,
            gram.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    let norms: Vec<f64> = (0..n).map(|i| gram[i * n + i]).collect();
    let cols = exec.map(n, |j| {
        (0..n)
            .map(|i| {
                if i == j {
                    0.0
                } else {
                    // Symmetrize: use the upper-triangle product for both halves.
                    let g = gram[i.min(j) * n + i.max(j)];
                    (norms[i] + norms[j] - 2.0 * g).max(0.0)
                }
            })
            .collect::<Vec<_>>()
    });
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}
