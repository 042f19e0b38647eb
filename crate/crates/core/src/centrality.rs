//! Node centrality on undirected [`SparseGraph`]s.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::netbuild::SparseGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Degree,
    Eigenvector,
    Pagerank,
    Betweenness,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::Degree,
        Measure::Eigenvector,
        Measure::Pagerank,
        Measure::Betweenness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Degree => "degree",
            Measure::Eigenvector => "eigenvector",
            Measure::Pagerank => "pagerank",
            Measure::Betweenness => "betweenness",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown centrality measure {s:?}")))
    }
}

/// Parameters a score vector was computed with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CentralityParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled_sources: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Size of the component eigenvector scores were computed on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub component_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityScores {
    pub measure: Measure,
    pub scores: Vec<f64>,
    pub params: CentralityParams,
}

/// Number of incident edges per node.
pub fn degree_centrality(g: &SparseGraph) -> CentralityScores {
    CentralityScores {
        measure: Measure::Degree,
        scores: g.degrees().into_iter().map(|d| d as f64).collect(),
        params: CentralityParams::default(),
    }
}

/// Nodes of the largest connected component (ties go to the component with
/// the smallest member).
pub fn largest_component(g: &SparseGraph) -> Vec<usize> {
    let comp = g.components();
    let n_comp = comp.iter().copied().max().map_or(0, |c| c + 1);
    let mut sizes = vec![0usize; n_comp];
    comp.iter().for_each(|&c| sizes[c] += 1);
    let best = (0..n_comp).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c)));
    match best {
        Some(b) => (0..g.n_nodes()).filter(|&v| comp[v] == b).collect(),
        None => Vec::new(),
    }
}

/// Principal adjacency eigenvector on the largest connected component, zero
/// elsewhere, unit L2 norm and non-negative.
///
/// Iterates `x ← (A + I)x / ‖(A + I)x‖`. The shift keeps the dominant
/// eigenvalue strictly largest in modulus on bipartite components, where the
/// unshifted iteration oscillates.
pub fn eigenvector_centrality(g: &SparseGraph, tol: f64, max_iter: usize) -> Result<CentralityScores> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let n = g.n_nodes();
    let lcc = largest_component(g);
    let mut in_lcc = vec![false; n];
    lcc.iter().for_each(|&v| in_lcc[v] = true);
    let mut x = vec![0.0; n];
    let start = 1.0 / (lcc.len().max(1) as f64).sqrt();
    lcc.iter().for_each(|&v| x[v] = start);

    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for &v in &lcc {
            next[v] = x[v] + g.neighbors(v).iter().map(|&w| x[w]).sum::<f64>();
        }
        let norm = lcc.iter().map(|&v| next[v] * next[v]).sum::<f64>().sqrt();
        residual = 0.0f64;
        for &v in &lcc {
            let nv = next[v] / norm;
            residual = residual.max((nv - x[v]).abs());
            x[v] = nv;
        }
        if residual < tol {
            return Ok(CentralityScores {
                measure: Measure::Eigenvector,
                scores: x,
                params: CentralityParams {
                    tol: Some(tol),
                    max_iter: Some(max_iter),
                    iterations: Some(iterations),
                    component_size: Some(lcc.len()),
                    ..Default::default()
                },
            });
        }
    }
    Err(Error::NonConvergence {
        what: "eigenvector centrality",
        iterations,
        residual,
    })
}

/// PageRank with each undirected edge as two arcs. Mass sitting on isolated
/// (dangling) nodes is spread uniformly. Stops when the L1 change drops
/// below `tol`.
pub fn pagerank(g: &SparseGraph, damping: f64, tol: f64, max_iter: usize, exec: Exec) -> Result<CentralityScores> {
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::invalid(format!("damping must lie in (0,1), got {damping}")));
    }
    let n = g.n_nodes();
    if n == 0 {
        return Err(Error::Empty("graph has no nodes".into()));
    }
    let nf = n as f64;
    let deg = g.degrees();
    let mut x = vec![1.0 / nf; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let dangling: f64 = (0..n).filter(|&v| deg[v] == 0).map(|v| x[v]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        let share: Vec<f64> = (0..n)
            .map(|v| if deg[v] > 0 { x[v] / deg[v] as f64 } else { 0.0 })
            .collect();
        let next = exec.map(n, |v| base + damping * g.neighbors(v).iter().map(|&u| share[u]).sum::<f64>());
        residual = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if residual < tol {
            return Ok(CentralityScores {
                measure: Measure::Pagerank,
                scores: x,
                params: CentralityParams {
                    damping: Some(damping),
                    tol: Some(tol),
                    max_iter: Some(max_iter),
                    iterations: Some(iterations),
                    ..Default::default()
                },
            });
        }
    }
    Err(Error::NonConvergence {
        what: "pagerank",
        iterations,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Sampling {
    Exact,
    /// `k` sources drawn uniformly without replacement; scores scaled by n/k.
    Sampled { k: usize, seed: u64 },
}

/// Sources per accumulation block. Fixed so merged sums do not depend on the
/// number of threads.
const SOURCE_BLOCK: usize = 32;

struct BrandesScratch {
    scores: Vec<f64>,
    sigma: Vec<f64>,
    dist: Vec<i64>,
    delta: Vec<f64>,
    order: Vec<usize>,
    queue: VecDeque<usize>,
}

impl BrandesScratch {
    fn new(n: usize) -> Self {
        Self {
            scores: vec![0.0; n],
            sigma: vec![0.0; n],
            dist: vec![-1; n],
            delta: vec![0.0; n],
            order: Vec::with_capacity(n),
            queue: VecDeque::with_capacity(n),
        }
    }

    /// Adds the dependencies of source `s` to `scores`.
    fn accumulate(&mut self, g: &SparseGraph, s: usize) {
        self.order.clear();
        self.sigma[s] = 1.0;
        self.dist[s] = 0;
        self.queue.push_back(s);
        while let Some(v) = self.queue.pop_front() {
            self.order.push(v);
            for &w in g.neighbors(v) {
                if self.dist[w] < 0 {
                    self.dist[w] = self.dist[v] + 1;
                    self.queue.push_back(w);
                }
                if self.dist[w] == self.dist[v] + 1 {
                    self.sigma[w] += self.sigma[v];
                }
            }
        }
        for &v in self.order.iter().rev() {
            let mut dv = 0.0;
            for &w in g.neighbors(v) {
                if self.dist[w] == self.dist[v] + 1 {
                    dv += self.sigma[v] / self.sigma[w] * (1.0 + self.delta[w]);
                }
            }
            self.delta[v] = dv;
            if v != s {
                self.scores[v] += dv;
            }
        }
        for &v in &self.order {
            self.sigma[v] = 0.0;
            self.dist[v] = -1;
            self.delta[v] = 0.0;
        }
    }
}

/// Unnormalized node betweenness (each unordered pair counted once).
pub fn betweenness(g: &SparseGraph, sampling: Sampling, exec: Exec) -> Result<CentralityScores> {
    let n = g.n_nodes();
    let (sources, scale, params) = match sampling {
        Sampling::Exact => ((0..n).collect::<Vec<_>>(), 0.5, CentralityParams::default()),
        Sampling::Sampled { k, seed } => {
            if k > n || k == 0 {
                return Err(Error::invalid(format!("sample size {k} must lie in 1..={n}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
            picked.sort_unstable();
            let params = CentralityParams {
                sampled_sources: Some(k),
                seed: Some(seed),
                ..Default::default()
            };
            (picked, 0.5 * n as f64 / k as f64, params)
        }
    };
    let acc = exec.fold_blocks(
        sources.len(),
        SOURCE_BLOCK,
        || BrandesScratch::new(n),
        |scratch, i| scratch.accumulate(g, sources[i]),
        |total, part| {
            total.scores.iter_mut().zip(part.scores).for_each(|(t, p)| *t += p);
        },
    );
    Ok(CentralityScores {
        measure: Measure::Betweenness,
        scores: acc.scores.into_iter().map(|s| s * scale).collect(),
        params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub node: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTable {
    pub measure: Measure,
    pub top: Vec<RankedEntry>,
    /// Every group of two or more nodes sharing a score that appears in the
    /// top k, listed in full (so a group straddling rank k is visible).
    pub ties: Vec<Vec<usize>>,
    pub params: CentralityParams,
}

/// Top `k` nodes by score descending, index ascending on ties.
pub fn rank_table(scores: &CentralityScores, k: usize) -> Result<RankedTable> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let s = &scores.scores;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let k = k.min(s.len());
    let top: Vec<RankedEntry> = order[..k]
        .iter()
        .enumerate()
        .map(|(r, &v)| RankedEntry {
            rank: r + 1,
            node: v,
            score: s[v],
        })
        .collect();
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() && i < k {
        let mut j = i + 1;
        while j < order.len() && s[order[j]] == s[order[i]] {
            j += 1;
        }
        if j - i > 1 {
            ties.push(order[i..j].to_vec());
        }
        i = j;
    }
    Ok(RankedTable {
        measure: scores.measure,
        top,
        ties,
        params: scores.params.clone(),
    })
}

/// All nodes attaining the maximum score.
pub fn argmax_set(scores: &CentralityScores) -> Vec<usize> {
    let max = scores.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..scores.scores.len()).filter(|&v| scores.scores[v] == max).collect()
}

/// `rank,node_index,node_id,score`.
pub fn write_ranked_csv(table: &RankedTable, node_ids: &[String], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "rank,node_index,node_id,score").map_err(io)?;
    for e in &table.top {
        writeln!(w, "{},{},{},{:?}", e.rank, e.node, node_ids[e.node], e.score).map_err(io)?;
    }
    w.flush().map_err(io)
}
