//! Expression-level grouping of genes within a cancer type, same-group
//! networks, and cross-type conservation of the grouping.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::exprmatrix::{CancerType, ExpressionMatrix};
use crate::netbuild::io::{write_graphml_edges, NodeAttr};
use crate::netbuild::{BuildMeta, NodeKind, SparseGraph};
use crate::stats::adjusted_rand_index;

/// Default bin boundaries between A|B, B|C and C|D.
pub const DEFAULT_EDGES: [f64; 3] = [-2.0, 2.0, 8.0];

/// Groups above this size are exported as membership only, without clique edges.
pub const MAX_MATERIALIZED_CLIQUE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "0")]
    Missing,
    A,
    B,
    C,
    D,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Missing, Group::A, Group::B, Group::C, Group::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Missing => "0",
            Group::A => "A",
            Group::B => "B",
            Group::C => "C",
            Group::D => "D",
        }
    }

    /// Node colour used in figure exports.
    pub fn color(self) -> &'static str {
        match self {
            Group::Missing => "grey",
            Group::A => "red",
            Group::B => "yellow",
            Group::C => "black",
            Group::D => "blue",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown group {s:?}")))
    }
}

/// Mean, over samples of `class`, of each gene z-scored against all samples
/// (population σ). Globally constant genes give `None`.
pub fn group_statistic(m: &ExpressionMatrix, class: CancerType, exec: Exec) -> Result<Vec<Option<f64>>> {
    if m.n_samples() < 2 {
        return Err(Error::invalid("group statistic needs at least two samples"));
    }
    let rows: Vec<usize> = (0..m.n_samples()).filter(|&i| m.labels()[i] == class).collect();
    if rows.is_empty() {
        return Err(Error::EmptySubset(class.to_string()));
    }
    let (mean, sd) = m.column_moments(0);
    Ok(exec.map(m.n_genes(), |g| {
        let sd = sd[g];
        if !(sd > 0.0) || (0..m.n_samples()).all(|i| m.get(i, g) == m.get(0, g)) {
            return None;
        }
        let s: f64 = rows.iter().map(|&i| (m.get(i, g) - mean[g]) / sd).sum();
        Some(s / rows.len() as f64)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub cancer_type: CancerType,
    pub gene_ids: Vec<String>,
    pub groups: Vec<Group>,
    pub bin_edges: [f64; 3],
}

impl GroupAssignment {
    pub fn members(&self, g: Group) -> Vec<usize> {
        (0..self.groups.len()).filter(|&i| self.groups[i] == g).collect()
    }

    pub fn counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for g in &self.groups {
            c[g.index()] += 1;
        }
        c
    }
}

fn validate_edges(edges: &[f64; 3]) -> Result<()> {
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("bin edges must be finite and strictly increasing, got {edges:?}")));
    }
    Ok(())
}

/// Bins each statistic: `< e1` → A, `[e1,e2)` → B, `[e2,e3)` → C, `≥ e3` → D;
/// missing (or non-finite) → 0.
pub fn bin(value: Option<f64>, edges: &[f64; 3]) -> Group {
    match value {
        Some(v) if v.is_finite() => {
            if v < edges[0] {
                Group::A
            } else if v < edges[1] {
                Group::B
            } else if v < edges[2] {
                Group::C
            } else {
                Group::D
            }
        }
        _ => Group::Missing,
    }
}

pub fn assign_groups(
    cancer_type: CancerType,
    gene_ids: &[String],
    stats: &[Option<f64>],
    edges: [f64; 3],
) -> Result<GroupAssignment> {
    validate_edges(&edges)?;
    if gene_ids.len() != stats.len() {
        return Err(Error::DimensionMismatch {
            expected: gene_ids.len(),
            found: stats.len(),
        });
    }
    Ok(GroupAssignment {
        cancer_type,
        gene_ids: gene_ids.to_vec(),
        groups: stats.iter().map(|&s| bin(s, &edges)).collect(),
        bin_edges: edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComponent {
    pub group: Group,
    pub size: usize,
    pub n_edges: u64,
    pub materialized: bool,
}

/// Same-group network held as memberships; each non-0 group is a clique.
#[derive(Debug, Clone)]
pub struct GroupGraph {
    assignment: GroupAssignment,
    members: [Vec<usize>; 5],
}

impl GroupGraph {
    pub fn new(a: &GroupAssignment) -> Self {
        let members = Group::ALL.map(|g| a.members(g));
        Self {
            assignment: a.clone(),
            members,
        }
    }

    pub fn assignment(&self) -> &GroupAssignment {
        &self.assignment
    }

    pub fn n_nodes(&self) -> usize {
        self.assignment.groups.len()
    }

    pub fn n_edges(&self) -> u64 {
        self.component_summary().iter().map(|c| c.n_edges).sum()
    }

    /// One component per non-empty non-0 group, in group order.
    pub fn component_summary(&self) -> Vec<GroupComponent> {
        Group::ALL[1..]
            .iter()
            .filter(|g| !self.members[g.index()].is_empty())
            .map(|&g| {
                let n = self.members[g.index()].len();
                GroupComponent {
                    group: g,
                    size: n,
                    n_edges: (n as u64) * (n as u64 - 1) / 2,
                    materialized: n <= MAX_MATERIALIZED_CLIQUE,
                }
            })
            .collect()
    }

    /// Clique edges of groups whose size is at most `max_clique`.
    pub fn edges(&self, max_clique: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.members[1..]
            .iter()
            .filter(move |m| m.len() <= max_clique)
            .flat_map(|m| (0..m.len()).flat_map(move |i| (i + 1..m.len()).map(move |j| (m[i], m[j]))))
    }

    /// Fully materialized graph; intended for small instances.
    pub fn to_sparse_graph(&self) -> Result<SparseGraph> {
        SparseGraph::new(
            self.n_nodes(),
            self.edges(usize::MAX).collect(),
            self.assignment.gene_ids.clone(),
            NodeKind::Gene,
            BuildMeta::imported(),
        )
    }

    /// GraphML with `group` and `color` node attributes. Groups larger than
    /// [`MAX_MATERIALIZED_CLIQUE`] contribute nodes but no edges.
    pub fn write_graphml(&self, path: &Path) -> Result<()> {
        let groups: Vec<String> = self.assignment.groups.iter().map(|g| g.to_string()).collect();
        let colors: Vec<String> = self.assignment.groups.iter().map(|g| g.color().to_string()).collect();
        write_graphml_edges(
            &self.assignment.gene_ids,
            self.edges(MAX_MATERIALIZED_CLIQUE),
            path,
            &[
                NodeAttr { name: "group", values: &groups },
                NodeAttr { name: "color", values: &colors },
            ],
        )
    }
}

pub fn build_group_graph(a: &GroupAssignment) -> GroupGraph {
    GroupGraph::new(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub type_1: CancerType,
    pub type_2: CancerType,
    /// Rows: groups in type 1, columns: groups in type 2, both in 0,A,B,C,D order.
    pub contingency: [[u64; 5]; 5],
    pub agreement: f64,
    pub adjusted_rand: f64,
    pub n_genes: usize,
}

impl ConservationReport {
    pub fn count(&self, g1: Group, g2: Group) -> u64 {
        self.contingency[g1.index()][g2.index()]
    }
}

pub fn compare_grouping(a1: &GroupAssignment, a2: &GroupAssignment) -> Result<ConservationReport> {
    if a1.gene_ids != a2.gene_ids {
        return Err(Error::invalid("group assignments cover different gene lists"));
    }
    let mut contingency = [[0u64; 5]; 5];
    for (g1, g2) in a1.groups.iter().zip(&a2.groups) {
        contingency[g1.index()][g2.index()] += 1;
    }
    let n = a1.groups.len();
    let trace: u64 = (0..5).map(|i| contingency[i][i]).sum();
    let table: Vec<Vec<u64>> = contingency.iter().map(|r| r.to_vec()).collect();
    Ok(ConservationReport {
        type_1: a1.cancer_type,
        type_2: a2.cancer_type,
        contingency,
        agreement: if n == 0 { 1.0 } else { trace as f64 / n as f64 },
        adjusted_rand: adjusted_rand_index(&table),
        n_genes: n,
    })
}

/// `gene_id,group` per gene.
pub fn write_assignment_csv(a: &GroupAssignment, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "gene_id,group").map_err(io)?;
    for (id, g) in a.gene_ids.iter().zip(&a.groups) {
        writeln!(w, "{id},{g}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i}")).collect()
    }

    #[test]
    fn bins_follow_edges() {
        let e = DEFAULT_EDGES;
        assert_eq!(bin(Some(0.0), &e), Group::B);
        assert_eq!(bin(Some(9.0), &e), Group::D);
        assert_eq!(bin(Some(8.0), &e), Group::D);
        assert_eq!(bin(Some(-2.0), &e), Group::B);
        assert_eq!(bin(Some(-50.0), &e), Group::A);
        assert_eq!(bin(Some(2.0), &e), Group::C);
        assert_eq!(bin(None, &e), Group::Missing);
        assert_eq!(bin(Some(f64::NAN), &e), Group::Missing);
        assert!(assign_groups(CancerType::BRCA, &ids(1), &[None], [1.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn statistic_matches_direct_formula() {
        // Two types, one gene shifted in the second.
        let labels = vec![CancerType::LUAD, CancerType::LUAD, CancerType::PRAD, CancerType::PRAD];
        let values = vec![1.0, 5.0, 2.0, 5.0, 4.0, 5.0, 6.0, 5.0];
        let m = ExpressionMatrix::new(values, ids(4), ids(2), labels).unwrap();
        let s = group_statistic(&m, CancerType::PRAD, Exec::Sequential).unwrap();
        let x = [1.0, 2.0, 4.0, 6.0];
        let mu = 13.0 / 4.0;
        let sd = (x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 4.0).sqrt();
        let expected = ((4.0 - mu) / sd + (6.0 - mu) / sd) / 2.0;
        assert_relative_eq!(s[0].unwrap(), expected, epsilon = 1e-12);
        assert_eq!(s[1], None);
        let l = group_statistic(&m, CancerType::LUAD, Exec::Sequential).unwrap();
        assert_relative_eq!(l[0].unwrap(), -expected, epsilon = 1e-12);
        assert!(group_statistic(&m, CancerType::KIRC, Exec::Sequential).is_err());
    }

    #[test]
    fn small_graphs() {
        let a = assign_groups(CancerType::BRCA, &ids(3), &[Some(0.0); 3], DEFAULT_EDGES).unwrap();
        let g = build_group_graph(&a).to_sparse_graph().unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        let a = assign_groups(CancerType::BRCA, &ids(3), &[Some(-3.0), Some(0.0), None], DEFAULT_EDGES).unwrap();
        let gg = build_group_graph(&a);
        assert_eq!(gg.n_edges(), 0);
        assert_eq!(gg.component_summary().len(), 2);
    }

    #[test]
    fn identical_and_trivial_comparisons() {
        let stats: Vec<Option<f64>> = vec![Some(-3.0), Some(0.0), Some(3.0), Some(9.0), None, Some(1.0)];
        let a = assign_groups(CancerType::LUAD, &ids(6), &stats, DEFAULT_EDGES).unwrap();
        let r = compare_grouping(&a, &a).unwrap();
        assert_eq!(r.agreement, 1.0);
        assert_relative_eq!(r.adjusted_rand, 1.0, epsilon = 1e-12);
        let other = assign_groups(CancerType::PRAD, &ids(5), &stats[..5], DEFAULT_EDGES).unwrap();
        assert!(compare_grouping(&a, &other).is_err());
    }

    #[test]
    fn all_b_versus_random_has_zero_ari() {
        let n = 500;
        let all_b = assign_groups(CancerType::LUAD, &ids(n), &vec![Some(0.0); n], DEFAULT_EDGES).unwrap();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let groups = (0..n).map(|_| Group::ALL[rng.random_range(0..5)]).collect();
            let random = GroupAssignment { cancer_type: CancerType::PRAD, groups, ..all_b.clone() };
            let r = compare_grouping(&all_b, &random).unwrap();
            assert!(r.adjusted_rand.abs() < 0.05, "seed {seed}: {}", r.adjusted_rand);
        }
    }

    #[test]
    fn graphml_skips_large_cliques() {
        let dir = tempfile::tempdir().unwrap();
        let n = MAX_MATERIALIZED_CLIQUE + 1;
        let mut stats = vec![Some(0.0); n];
        stats.push(Some(5.0));
        stats.push(Some(5.5));
        let a = assign_groups(CancerType::LUAD, &ids(n + 2), &stats, DEFAULT_EDGES).unwrap();
        let gg = build_group_graph(&a);
        let p = dir.path().join("g.graphml");
        gg.write_graphml(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.matches("<edge ").count(), 1);
        assert!(text.contains(">yellow<") && text.contains(">black<"));
        let summary = gg.component_summary();
        assert!(!summary[0].materialized && summary[1].materialized);
    }

    fn group_strategy() -> impl Strategy<Value = Vec<Option<f64>>> {
        proptest::collection::vec(proptest::option::of(-12.0f64..12.0), 0..100)
    }

    fn union_find_components(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut x = x;
            while p[x] != r {
                let next = p[x];
                p[x] = r;
                x = next;
            }
            r
        }
        for (u, v) in edges {
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru != rv {
                parent[ru] = rv;
            }
        }
        let mut sizes = std::collections::BTreeMap::new();
        for x in 0..n {
            *sizes.entry(find(&mut parent, x)).or_insert(0usize) += 1;
        }
        sizes.into_values().collect()
    }

    proptest! {
        #[test]
        fn every_value_gets_exactly_one_label(stats in group_strategy()) {
            let a = assign_groups(CancerType::BRCA, &ids(stats.len()), &stats, DEFAULT_EDGES).unwrap();
            for (s, g) in stats.iter().zip(&a.groups) {
                prop_assert_eq!(s.is_none(), *g == Group::Missing);
            }
        }

        #[test]
        fn components_match_union_find(stats in group_strategy()) {
            let a = assign_groups(CancerType::BRCA, &ids(stats.len()), &stats, DEFAULT_EDGES).unwrap();
            let gg = build_group_graph(&a);
            let sizes = union_find_components(gg.n_nodes(), gg.edges(usize::MAX));
            let missing = a.counts()[0];
            let multi: Vec<usize> = sizes.iter().copied().filter(|&s| s > 1).collect();
            let summary = gg.component_summary();
            // Singleton groups and group-0 genes are the only isolated nodes.
            let singleton_groups = summary.iter().filter(|c| c.size == 1).count();
            prop_assert_eq!(sizes.len() - multi.len(), missing + singleton_groups);
            prop_assert_eq!(multi.len(), summary.iter().filter(|c| c.size > 1).count());
            prop_assert_eq!(sizes.len() - missing, summary.len());
            let g = gg.to_sparse_graph().unwrap();
            let comps = g.components();
            let n_comp = comps.iter().max().map_or(0, |m| m + 1);
            prop_assert_eq!(n_comp, sizes.len());
        }

        #[test]
        fn comparison_is_symmetric(
            pairs in proptest::collection::vec((proptest::option::of(-12.0f64..12.0), proptest::option::of(-12.0f64..12.0)), 1..80)
        ) {
            let (s1, s2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let a1 = assign_groups(CancerType::LUAD, &ids(s1.len()), &s1, DEFAULT_EDGES).unwrap();
            let a2 = assign_groups(CancerType::PRAD, &ids(s2.len()), &s2, DEFAULT_EDGES).unwrap();
            let r12 = compare_grouping(&a1, &a2).unwrap();
            let r21 = compare_grouping(&a2, &a1).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    prop_assert_eq!(r12.contingency[i][j], r21.contingency[j][i]);
                }
            }
            prop_assert_eq!(r12.agreement, r21.agreement);
            prop_assert_eq!(r12.adjusted_rand, r21.adjusted_rand);
            prop_assert_eq!(r12.contingency.iter().flatten().sum::<u64>(), s1.len() as u64);
        }
    }
}
