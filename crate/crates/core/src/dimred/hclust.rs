use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::pairwise_sq_dists;
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Ward,
    Average,
    Complete,
    Single,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ward" => Ok(Linkage::Ward),
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            _ => Err(Error::invalid(format!("unknown linkage {s:?}"))),
        }
    }
}

/// One agglomeration step. Leaves are nodes `0..n`; the cluster created by
/// merge `t` is node `n + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
    pub leaf_order: Vec<usize>,
    pub linkage: Linkage,
}

/// Agglomerative clustering of the rows of `x` under Euclidean distance.
///
/// Distances between clusters are maintained with Lance–Williams updates;
/// Ward operates on squared distances and reports heights as their square
/// roots. Ties pick the lexicographically smallest pair of active slots.
pub fn hierarchical_cluster(x: &DMatrix<f64>, linkage: Linkage, exec: Exec) -> Result<Dendrogram> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("clustering needs at least 2 samples, got {n}")));
    }
    let sq = pairwise_sq_dists(x, exec);
    let mut dist: Vec<f64> = match linkage {
        Linkage::Ward => sq.transpose().as_slice().to_vec(),
        _ => sq.transpose().iter().map(|v| v.sqrt()).collect(),
    };
    let at = |i: usize, j: usize| i * n + j;
    let mut active: Vec<bool> = vec![true; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    let mut merges = Vec::with_capacity(n - 1);

    for t in 0..n - 1 {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                if dist[at(i, j)] < best.0 {
                    best = (dist[at(i, j)], i, j);
                }
            }
        }
        let (d_ij, i, j) = best;
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let (d_ik, d_jk) = (dist[at(i, k)], dist[at(j, k)]);
            let sk = size[k] as f64;
            let updated = match linkage {
                Linkage::Single => d_ik.min(d_jk),
                Linkage::Complete => d_ik.max(d_jk),
                Linkage::Average => (si * d_ik + sj * d_jk) / (si + sj),
                Linkage::Ward => ((si + sk) * d_ik + (sj + sk) * d_jk - sk * d_ij) / (si + sj + sk),
            };
            dist[at(i, k)] = updated;
            dist[at(k, i)] = updated;
        }
        let height = match linkage {
            Linkage::Ward => d_ij.max(0.0).sqrt(),
            _ => d_ij,
        };
        let (a, b) = (node[i].min(node[j]), node[i].max(node[j]));
        merges.push(Merge {
            left: a,
            right: b,
            height,
            size: size[i] + size[j],
        });
        active[j] = false;
        size[i] += size[j];
        node[i] = n + t;
    }

    Ok(Dendrogram {
        n_leaves: n,
        leaf_order: leaf_order(n, &merges),
        merges,
        linkage,
    })
}

fn leaf_order(n: usize, merges: &[Merge]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut stack = vec![n + merges.len() - 1];
    while let Some(v) = stack.pop() {
        if v < n {
            out.push(v);
        } else {
            let m = &merges[v - n];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
    out
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

/// Applies the first `n_merges` merges and labels leaves by cluster,
/// numbering clusters in order of first appearance.
fn apply_merges(d: &Dendrogram, n_merges: usize) -> Vec<usize> {
    let n = d.n_leaves;
    let mut parent: Vec<usize> = (0..n + d.merges.len()).collect();
    for (t, m) in d.merges.iter().take(n_merges).enumerate() {
        parent[m.left] = n + t;
        parent[m.right] = n + t;
    }
    let mut label_of_root = std::collections::HashMap::new();
    (0..n)
        .map(|leaf| {
            let r = find(&mut parent, leaf);
            let next = label_of_root.len();
            *label_of_root.entry(r).or_insert(next)
        })
        .collect()
}

/// Cluster label per sample after joining every merge at height ≤ `height`.
pub fn cut_dendrogram(d: &Dendrogram, height: f64) -> Vec<usize> {
    // Heights need not be monotone in general, so count qualifying merges
    // along the sequence rather than bisecting.
    let mut parent: Vec<usize> = (0..d.n_leaves + d.merges.len()).collect();
    let n = d.n_leaves;
    for (t, m) in d.merges.iter().enumerate() {
        if m.height <= height {
            parent[m.left] = n + t;
            parent[m.right] = n + t;
        }
    }
    let mut label_of_root = std::collections::HashMap::new();
    (0..n)
        .map(|leaf| {
            let r = find(&mut parent, leaf);
            let next = label_of_root.len();
            *label_of_root.entry(r).or_insert(next)
        })
        .collect()
}

/// Labels for exactly `k` clusters (1 ≤ k ≤ n).
pub fn cut_into_clusters(d: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > d.n_leaves {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", d.n_leaves)));
    }
    Ok(apply_merges(d, d.n_leaves - k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(xs.len(), 1, xs)
    }

    #[test]
    fn three_points_single_linkage() {
        let d = hierarchical_cluster(&line(&[0.0, 1.0, 10.0]), Linkage::Single, Exec::Sequential).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
        assert_eq!(d.merges[0].height, 1.0);
        assert_eq!(d.merges[1].height, 9.0);
        assert_eq!(d.merges[1].size, 3);
        assert_eq!(cut_dendrogram(&d, 5.0), vec![0, 0, 1]);
        assert_eq!(cut_dendrogram(&d, 0.5), vec![0, 1, 2]);
        assert_eq!(cut_dendrogram(&d, 100.0), vec![0, 0, 0]);
        assert_eq!(d.leaf_order, vec![2, 0, 1]);
    }

    #[test]
    fn two_far_pairs() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 50.0, 0.0, 50.0, 1.0]);
        for linkage in [Linkage::Ward, Linkage::Average, Linkage::Complete, Linkage::Single] {
            let d = hierarchical_cluster(&x, linkage, Exec::Sequential).unwrap();
            for h in [1.5, 10.0, 40.0] {
                assert_eq!(cut_dendrogram(&d, h), vec![0, 0, 1, 1], "{linkage:?} at {h}");
            }
        }
    }

    #[test]
    fn ward_matches_known_heights() {
        // scipy.cluster.hierarchy.ward on [[0],[1],[3],[7]].
        let d = hierarchical_cluster(&line(&[0.0, 1.0, 3.0, 7.0]), Linkage::Ward, Exec::Sequential).unwrap();
        let h: Vec<f64> = d.merges.iter().map(|m| m.height).collect();
        approx::assert_relative_eq!(h[0], 1.0, epsilon = 1e-12);
        approx::assert_relative_eq!(h[1], 2.886_751_345_948_129, epsilon = 1e-12);
        approx::assert_relative_eq!(h[2], 6.940_220_937_885_672, epsilon = 1e-12);
    }

    #[test]
    fn cut_into_k() {
        let d = hierarchical_cluster(&line(&[0.0, 1.0, 10.0, 11.0, 30.0]), Linkage::Complete, Exec::Sequential).unwrap();
        assert_eq!(cut_into_clusters(&d, 3).unwrap(), vec![0, 0, 1, 1, 2]);
        assert_eq!(cut_into_clusters(&d, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(cut_into_clusters(&d, 0).is_err());
        assert!(hierarchical_cluster(&line(&[1.0]), Linkage::Ward, Exec::Sequential).is_err());
    }
}
