use serde::{Deserialize, Serialize};

use super::EdgeRule;
use crate::error::{Error, Result};
use crate::exprmatrix::CancerType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Patient,
    Gene,
}

/// How a graph was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub rule: Option<EdgeRule>,
    /// `None` for pooled classes or imported graphs.
    pub source_label: Option<CancerType>,
    pub n_observations: usize,
    /// Standard error convention for Fisher rules.
    pub fisher_standard_error: Option<String>,
    pub degenerate_nodes: Vec<usize>,
}

impl BuildMeta {
    pub fn new(rule: EdgeRule, source_label: Option<CancerType>, n_observations: usize, degenerate_nodes: Vec<usize>) -> Self {
        let fisher_standard_error = matches!(rule, EdgeRule::FisherSignificance { .. })
            .then(|| "1/sqrt(n_observations - 3)".to_string());
        Self {
            rule: Some(rule),
            source_label,
            n_observations,
            fisher_standard_error,
            degenerate_nodes,
        }
    }

    pub fn imported() -> Self {
        Self {
            rule: None,
            source_label: None,
            n_observations: 0,
            fisher_standard_error: None,
            degenerate_nodes: Vec::new(),
        }
    }
}

/// Undirected simple graph. Edges are stored once as `(u, v)` with `u < v`,
/// sorted, alongside a CSR adjacency for traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_ids: Vec<String>,
    kind: NodeKind,
    meta: BuildMeta,
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl SparseGraph {
    /// Validates and normalizes the edge list: endpoints are reordered so
    /// `u < v` and the list is sorted. Self-loops, duplicates and
    /// out-of-range endpoints are rejected.
    pub fn new(n_nodes: usize, mut edges: Vec<(usize, usize)>, node_ids: Vec<String>, kind: NodeKind, meta: BuildMeta) -> Result<Self> {
        if node_ids.len() != n_nodes {
            return Err(Error::DimensionMismatch {
                expected: n_nodes,
                found: node_ids.len(),
            });
        }
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(Error::invalid(format!("self-loop on node {}", e.0)));
            }
            if e.0.max(e.1) >= n_nodes {
                return Err(Error::invalid(format!("edge {e:?} out of range for {n_nodes} nodes")));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate edge {:?}", w[0])));
        }

        let mut degree = vec![0usize; n_nodes];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n_nodes].to_vec();
        let mut targets = vec![0; offsets[n_nodes]];
        // Edges are sorted, so each adjacency list comes out sorted as well.
        for &(u, v) in &edges {
            targets[fill[u]] = v;
            fill[u] += 1;
        }
        for &(u, v) in &edges {
            targets[fill[v]] = u;
            fill[v] += 1;
        }
        for v in 0..n_nodes {
            targets[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Ok(Self {
            n_nodes,
            edges,
            node_ids,
            kind,
            meta,
            offsets,
            targets,
        })
    }

    /// Graph with numeric node ids `0..n`.
    pub fn from_edges(n_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let ids = (0..n_nodes).map(|i| i.to_string()).collect();
        Self::new(n_nodes, edges, ids, NodeKind::Gene, BuildMeta::imported())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn meta(&self) -> &BuildMeta {
        &self.meta
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n_nodes).map(|v| self.degree(v)).collect()
    }

    /// Connected component id per node, numbered by smallest member.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n_nodes];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..self.n_nodes {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            stack.push(s);
            while let Some(v) = stack.pop() {
                for &w in self.neighbors(v) {
                    if comp[w] == usize::MAX {
                        comp[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn stats(&self) -> GraphStats {
        let degrees = self.degrees();
        let non_isolated = degrees.iter().filter(|&&d| d > 0).count();
        let e = self.n_edges() as f64;
        GraphStats {
            n_nodes: self.n_nodes,
            n_non_isolated: non_isolated,
            n_edges: self.n_edges(),
            mean_degree: if self.n_nodes == 0 { 0.0 } else { 2.0 * e / self.n_nodes as f64 },
            mean_degree_non_isolated: if non_isolated == 0 { 0.0 } else { 2.0 * e / non_isolated as f64 },
            n_degenerate: self.meta.degenerate_nodes.len(),
        }
    }
}

/// Node/edge counts in the form of a network summary table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_non_isolated: usize,
    pub n_edges: usize,
    pub mean_degree: f64,
    pub mean_degree_non_isolated: f64,
    pub n_degenerate: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netbuild::degree_distribution;

    #[test]
    fn normalizes_and_validates() {
        let g = SparseGraph::from_edges(4, vec![(2, 1), (0, 3)]).unwrap();
        assert_eq!(g.edges(), &[(0, 3), (1, 2)]);
        assert_eq!(g.neighbors(3), &[0]);
        assert!(SparseGraph::from_edges(3, vec![(1, 1)]).is_err());
        assert!(SparseGraph::from_edges(3, vec![(0, 1), (1, 0)]).is_err());
        assert!(SparseGraph::from_edges(3, vec![(0, 3)]).is_err());
    }

    #[test]
    fn degree_histograms() {
        let empty = SparseGraph::from_edges(5, vec![]).unwrap();
        assert_eq!(degree_distribution(&empty).into_iter().collect::<Vec<_>>(), vec![(0, 5)]);
        let tri = SparseGraph::from_edges(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(degree_distribution(&tri).into_iter().collect::<Vec<_>>(), vec![(2, 3)]);
        let s = tri.stats();
        assert_eq!((s.n_non_isolated, s.n_edges), (3, 3));
        assert_eq!(s.mean_degree, 2.0);
    }

    #[test]
    fn components_number_by_first_member() {
        let g = SparseGraph::from_edges(6, vec![(0, 4), (2, 3), (3, 5)]).unwrap();
        assert_eq!(g.components(), vec![0, 1, 2, 2, 0, 2]);
    }
}
