use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exprmatrix::ExpressionMatrix;

#[derive(Debug, Clone, Serialize)]
pub struct PcaResult {
    /// G × d, orthonormal columns.
    pub components: DMatrix<f64>,
    /// S × d, centred data times `components`.
    pub projected: DMatrix<f64>,
    /// Variance captured by each component (population convention, divisor S).
    pub eigenvalues: Vec<f64>,
    pub explained_variance_fraction: Vec<f64>,
    /// Column means removed before projection.
    pub mean: Vec<f64>,
    /// Sum of all column variances of the input.
    pub total_variance: f64,
}

/// PCA of the samples of `m`, keeping `d` components.
pub fn pca(m: &ExpressionMatrix, d: usize) -> Result<PcaResult> {
    let x = DMatrix::from_row_slice(m.n_samples(), m.n_genes(), m.values());
    pca_points(&x, d)
}

/// PCA of the rows of `x` via the spectral decomposition of the column-centred
/// matrix.
///
/// Each component is sign-normalized so that its largest-magnitude
/// coordinate is positive (first such coordinate on ties).
pub fn pca_points(x: &DMatrix<f64>, d: usize) -> Result<PcaResult> {
    let (s, g) = x.shape();
    if s < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 samples, got {s}")));
    }
    let max_d = (s - 1).min(g);
    if d == 0 || d > max_d {
        return Err(Error::invalid(format!("d = {d} must lie in 1..={max_d}")));
    }
    let mean: Vec<f64> = (0..g).map(|j| x.column(j).mean()).collect();
    let mut xc = x.clone();
    for (j, mu) in mean.iter().enumerate() {
        xc.column_mut(j).add_scalar_mut(-mu);
    }
    let total_variance = xc.iter().map(|v| v * v).sum::<f64>() / s as f64;

    // Right singular vectors of xc (G × r) and squared singular values.
    let (v_full, sq): (DMatrix<f64>, Vec<f64>) = if g > s {
        // Wide panels: SVD of xcᵀ through a thin QR, xcᵀ = QR and R = UΣWᵀ,
        // so the right singular vectors of xc are QU. Only S × S factors are
        // decomposed.
        let qr = xc.transpose().qr();
        let svd = qr.r().svd(true, false);
        let v = qr.q() * svd.u.expect("u requested");
        (v, svd.singular_values.iter().map(|x| x * x).collect())
    } else {
        let svd = xc.clone().svd(false, true);
        let v = svd.v_t.expect("v_t requested").transpose();
        (v, svd.singular_values.iter().map(|x| x * x).collect())
    };
    let mut order: Vec<usize> = (0..sq.len()).collect();
    order.sort_by(|&a, &b| sq[b].total_cmp(&sq[a]).then(a.cmp(&b)));

    let mut components = DMatrix::zeros(g, d);
    let mut eigenvalues = Vec::with_capacity(d);
    for (c, &k) in order.iter().take(d).enumerate() {
        let mut col = v_full.column(k).into_owned();
        let pivot = (0..g)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        components.set_column(c, &col);
        eigenvalues.push(sq[k] / s as f64);
    }
    let projected = &xc * &components;
    let explained_variance_fraction = eigenvalues
        .iter()
        .map(|l| if total_variance > 0.0 { l / total_variance } else { 0.0 })
        .collect();
    Ok(PcaResult {
        components,
        projected,
        eigenvalues,
        explained_variance_fraction,
        mean,
        total_variance,
    })
}
