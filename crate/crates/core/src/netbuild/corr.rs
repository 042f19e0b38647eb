use serde::{Deserialize, Serialize};

use super::graph::{BuildMeta, NodeKind, SparseGraph};
use super::EdgeRule;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::exprmatrix::{CancerType, ExpressionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Correlate samples across genes.
    Patients,
    /// Correlate genes across samples.
    Genes,
}

impl Axis {
    pub fn node_kind(self) -> NodeKind {
        match self {
            Axis::Patients => NodeKind::Patient,
            Axis::Genes => NodeKind::Gene,
        }
    }
}

/// Pearson correlation of two equal-length vectors; `None` if either is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let a = Standardized::from_rows(&[x, y]);
    if a.degenerate.iter().any(|&d| d) {
        return None;
    }
    Some(a.dot(0, 1).clamp(-1.0, 1.0))
}

/// Variables as rows, each centred and scaled to unit Euclidean norm, so the
/// correlation of two variables is the dot product of their rows.
#[derive(Debug, Clone)]
pub struct Standardized {
    data: Vec<f64>,
    n_vars: usize,
    len: usize,
    pub degenerate: Vec<bool>,
}

impl Standardized {
    fn from_rows(rows: &[&[f64]]) -> Self {
        let len = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * len);
        let mut degenerate = Vec::with_capacity(rows.len());
        for r in rows {
            let start = data.len();
            data.extend_from_slice(r);
            degenerate.push(standardize_in_place(&mut data[start..]));
        }
        Self {
            data,
            n_vars: rows.len(),
            len,
            degenerate,
        }
    }

    /// Standardizes the variables of `m` along `axis`.
    pub fn from_matrix(m: &ExpressionMatrix, axis: Axis, exec: Exec) -> Self {
        let (n_vars, len) = match axis {
            Axis::Patients => (m.n_samples(), m.n_genes()),
            Axis::Genes => (m.n_genes(), m.n_samples()),
        };
        let rows: Vec<(Vec<f64>, bool)> = exec.map(n_vars, |v| {
            let mut row = match axis {
                Axis::Patients => m.row(v).to_vec(),
                Axis::Genes => m.column(v),
            };
            let deg = standardize_in_place(&mut row);
            (row, deg)
        });
        let mut data = Vec::with_capacity(n_vars * len);
        let mut degenerate = Vec::with_capacity(n_vars);
        for (row, deg) in rows {
            data.extend(row);
            degenerate.push(deg);
        }
        Self {
            data,
            n_vars,
            len,
            degenerate,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.len..(i + 1) * self.len]
    }

    fn dot(&self, i: usize, j: usize) -> f64 {
        self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum()
    }

    /// Fills `out` (row-major, `rows.len() × cols.len()`) with correlations
    /// between variables `rows` and `cols`. Degenerate variables get 0.
    fn tile(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, out: &mut [f64]) {
        let (m, n, k) = (rows.len(), cols.len(), self.len);
        debug_assert_eq!(out.len(), m * n);
        // SAFETY: both operands lie within `self.data` (row-major n_vars × len)
        // and `out` holds exactly m × n elements with row stride n.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr().add(rows.start * k),
                k as isize,
                1,
                self.data.as_ptr().add(cols.start * k),
                1,
                k as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        for (a, i) in rows.clone().enumerate() {
            for (b, j) in cols.clone().enumerate() {
                let v = &mut out[a * n + b];
                *v = if self.degenerate[i] || self.degenerate[j] {
                    0.0
                } else {
                    v.clamp(-1.0, 1.0)
                };
            }
        }
    }
}

/// Centres `x` and scales it to unit norm. Returns true (and zeroes `x`) when
/// the vector is constant.
fn standardize_in_place(x: &mut [f64]) -> bool {
    let first = x[0];
    if x.iter().all(|&v| v == first) {
        x.iter_mut().for_each(|v| *v = 0.0);
        return true;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        x.iter_mut().for_each(|v| *v = 0.0);
        return true;
    }
    x.iter_mut().for_each(|v| *v /= norm);
    false
}

/// Dense symmetric Pearson matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub values: Vec<f64>,
    pub n: usize,
    pub axis: Axis,
    /// `None` means all classes pooled.
    pub source_label: Option<CancerType>,
    pub n_observations: usize,
    pub node_ids: Vec<String>,
    /// Zero-variance variables; their rows are all zero.
    pub degenerate: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Thresholds the matrix into a graph. Degenerate nodes stay isolated.
    pub fn build_graph(&self, rule: EdgeRule) -> Result<SparseGraph> {
        rule.validate()?;
        let mut skip = vec![false; self.n];
        self.degenerate.iter().for_each(|&i| skip[i] = true);
        let mut edges = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if !skip[i] && !skip[j] && rule.admits(self.get(i, j), self.n_observations) {
                    edges.push((i, j));
                }
            }
        }
        let meta = BuildMeta::new(rule, self.source_label, self.n_observations, self.degenerate.clone());
        SparseGraph::new(self.n, edges, self.node_ids.clone(), self.axis.node_kind(), meta)
    }
}

fn source_of(m: &ExpressionMatrix) -> Option<CancerType> {
    match m.classes().as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

fn check_axis(m: &ExpressionMatrix, axis: Axis) -> Result<()> {
    let len = match axis {
        Axis::Patients => m.n_genes(),
        Axis::Genes => m.n_samples(),
    };
    if len < 2 {
        return Err(Error::invalid(format!(
            "correlated vectors have length {len}; need at least 2"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedOptions {
    /// Tile edge length in variables.
    pub block: usize,
    pub exec: Exec,
}

impl Default for BlockedOptions {
    fn default() -> Self {
        Self {
            block: 512,
            exec: Exec::default(),
        }
    }
}

/// Full dense correlation matrix along `axis`. Memory is `8·N²` bytes; use
/// [`build_graph_blocked`] for the gene axis of a full panel.
pub fn correlation_matrix(m: &ExpressionMatrix, axis: Axis, opts: BlockedOptions) -> Result<CorrelationMatrix> {
    check_axis(m, axis)?;
    let z = Standardized::from_matrix(m, axis, opts.exec);
    if z.degenerate.iter().all(|&d| d) {
        return Err(Error::AllDegenerate);
    }
    let n = z.n_vars;
    let block = opts.block.max(1);
    let n_blocks = n.div_ceil(block);
    let pairs: Vec<(usize, usize)> = (0..n_blocks)
        .flat_map(|bi| (bi..n_blocks).map(move |bj| (bi, bj)))
        .collect();
    let tiles = opts.exec.map_slice(&pairs, |&(bi, bj)| {
        let rows = bi * block..((bi + 1) * block).min(n);
        let cols = bj * block..((bj + 1) * block).min(n);
        let mut out = vec![0.0; rows.len() * cols.len()];
        z.tile(rows, cols, &mut out);
        out
    });
    let mut values = vec![0.0; n * n];
    for (&(bi, bj), tile) in pairs.iter().zip(tiles) {
        let (r0, c0) = (bi * block, bj * block);
        let width = ((bj + 1) * block).min(n) - c0;
        for (a, row) in tile.chunks(width).enumerate() {
            for (b, &v) in row.iter().enumerate() {
                let (i, j) = (r0 + a, c0 + b);
                // Upper triangle only, so (i, j) and (j, i) share one GEMM result.
                if i < j {
                    values[i * n + j] = v;
                    values[j * n + i] = v;
                }
            }
        }
    }
    for i in 0..n {
        values[i * n + i] = if z.degenerate[i] { 0.0 } else { 1.0 };
    }
    Ok(CorrelationMatrix {
        values,
        n,
        axis,
        source_label: source_of(m),
        n_observations: z.len,
        node_ids: node_ids(m, axis),
        degenerate: degenerate_list(&z),
    })
}

fn node_ids(m: &ExpressionMatrix, axis: Axis) -> Vec<String> {
    match axis {
        Axis::Patients => m.sample_ids().to_vec(),
        Axis::Genes => m.gene_ids().to_vec(),
    }
}

fn degenerate_list(z: &Standardized) -> Vec<usize> {
    (0..z.n_vars).filter(|&i| z.degenerate[i]).collect()
}

/// Correlates along `axis` tile by tile and keeps only the pairs admitted by
/// `rule`. Peak memory is one tile per worker plus the edge list.
pub fn build_graph_blocked(m: &ExpressionMatrix, axis: Axis, rule: EdgeRule, opts: BlockedOptions) -> Result<SparseGraph> {
    rule.validate()?;
    check_axis(m, axis)?;
    let z = Standardized::from_matrix(m, axis, opts.exec);
    if z.degenerate.iter().all(|&d| d) {
        return Err(Error::AllDegenerate);
    }
    let n = z.n_vars;
    let n_obs = z.len;
    let block = opts.block.max(1);
    let n_blocks = n.div_ceil(block);
    let pairs: Vec<(usize, usize)> = (0..n_blocks)
        .flat_map(|bi| (bi..n_blocks).map(move |bj| (bi, bj)))
        .collect();
    let per_tile = opts.exec.map_slice(&pairs, |&(bi, bj)| {
        let rows = bi * block..((bi + 1) * block).min(n);
        let cols = bj * block..((bj + 1) * block).min(n);
        let width = cols.len();
        let mut out = vec![0.0; rows.len() * width];
        z.tile(rows.clone(), cols.clone(), &mut out);
        let mut edges = Vec::new();
        for (a, i) in rows.enumerate() {
            if z.degenerate[i] {
                continue;
            }
            for (b, j) in cols.clone().enumerate() {
                if j > i && !z.degenerate[j] && rule.admits(out[a * width + b], n_obs) {
                    edges.push((i, j));
                }
            }
        }
        edges
    });
    let mut edges: Vec<(usize, usize)> = per_tile.into_iter().flatten().collect();
    edges.sort_unstable();
    let meta = BuildMeta::new(rule, source_of(m), n_obs, degenerate_list(&z));
    SparseGraph::new(n, edges, node_ids(m, axis), axis.node_kind(), meta)
}
