//! Pipeline configuration: built-in defaults, overlaid by a TOML file, then
//! by command-line `key=value` overrides.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use coexpr::dimred::Linkage;
use coexpr::exprmatrix::NormalizationSpec;
use coexpr::genesel::SelectionRule;
use coexpr::netbuild::EdgeRule;
use coexpr::CancerType;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Reduce,
    Gmm,
    Net,
    Centrality,
    Screen,
    Groups,
    Compare,
}

impl Stage {
    /// Execution order.
    pub const ALL: [Stage; 8] = [
        Stage::Load,
        Stage::Reduce,
        Stage::Gmm,
        Stage::Net,
        Stage::Centrality,
        Stage::Screen,
        Stage::Groups,
        Stage::Compare,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Reduce => "reduce",
            Stage::Gmm => "gmm",
            Stage::Net => "net",
            Stage::Centrality => "centrality",
            Stage::Screen => "screen",
            Stage::Groups => "groups",
            Stage::Compare => "compare",
        }
    }

    /// Stages whose outputs this one reads.
    pub fn requires(self, cfg: &PipelineConfig) -> Vec<Stage> {
        match self {
            Stage::Load => vec![],
            Stage::Reduce | Stage::Net | Stage::Screen => vec![Stage::Load],
            Stage::Gmm => vec![Stage::Reduce],
            Stage::Centrality => vec![Stage::Net],
            Stage::Groups if cfg.groups.gene_set == GeneSet::Selected => vec![Stage::Load, Stage::Screen],
            Stage::Groups => vec![Stage::Load],
            Stage::Compare => vec![Stage::Groups],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .with_context(|| format!("unknown stage {s:?}"))
    }
}

/// `stages` plus everything they transitively require, in execution order.
pub fn close_stages(stages: &BTreeSet<Stage>, cfg: &PipelineConfig) -> BTreeSet<Stage> {
    let mut out = stages.clone();
    let mut frontier: Vec<Stage> = stages.iter().copied().collect();
    while let Some(s) = frontier.pop() {
        for dep in s.requires(cfg) {
            if out.insert(dep) {
                frontier.push(dep);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub data: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaConfig {
    pub dims: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneConfig {
    pub enabled: bool,
    pub dim: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Defaults to S/12 when absent.
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HclustConfig {
    pub enabled: bool,
    pub linkage: Linkage,
    /// Cut into this many clusters.
    pub clusters: usize,
    /// Additionally cut at this height when set.
    pub cut_height: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Number of leading principal components the mixture is fitted on.
    pub pca_dims: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFamilyConfig {
    pub enabled: bool,
    pub rule: EdgeRule,
    /// One network per cancer type; otherwise a single pooled network.
    pub per_type: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub block: usize,
    pub patients: NetworkFamilyConfig,
    pub genes: NetworkFamilyConfig,
    /// Write GraphML next to each edge list.
    pub graphml: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralityConfig {
    pub measures: Vec<String>,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub top_k: usize,
    /// Sampled betweenness with this many sources; exact when absent.
    pub betweenness_samples: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenConfig {
    pub baseline: CancerType,
    pub alpha: f64,
    pub rule: SelectionRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneSet {
    /// Genes kept by the screening stage.
    Selected,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupsConfig {
    pub edges: [f64; 3],
    pub gene_set: GeneSet,
    pub types: Vec<CancerType>,
    /// Pairs compared by the compare stage.
    pub compare: Vec<[CancerType; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub output_dir: PathBuf,
    /// 0 uses every available core.
    pub threads: usize,
    pub stages: Vec<Stage>,
    pub normalization: NormalizationSpec,
    pub pca: PcaConfig,
    pub tsne: TsneConfig,
    pub hclust: HclustConfig,
    pub gmm: GmmConfig,
    pub network: NetworkConfig,
    pub centrality: CentralityConfig,
    pub screen: ScreenConfig,
    pub groups: GroupsConfig,
    /// Also write SVG scatter plots for projections.
    pub svg: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputConfig {
                data: "data.csv".into(),
                labels: "labels.csv".into(),
            },
            output_dir: "coexpr-run".into(),
            threads: 0,
            stages: Stage::ALL.to_vec(),
            normalization: NormalizationSpec::center(),
            pca: PcaConfig { dims: 3 },
            tsne: TsneConfig {
                enabled: true,
                dim: 2,
                perplexity: 30.0,
                iterations: 1000,
                seed: 0,
                learning_rate: None,
            },
            hclust: HclustConfig {
                enabled: true,
                linkage: Linkage::Ward,
                clusters: 5,
                cut_height: None,
            },
            gmm: GmmConfig {
                k: 5,
                seed: 0,
                restarts: 5,
                max_iter: 500,
                tol: 1e-8,
                pca_dims: 2,
            },
            network: NetworkConfig {
                block: 512,
                patients: NetworkFamilyConfig {
                    enabled: true,
                    rule: EdgeRule::fisher(0.05),
                    per_type: true,
                },
                genes: NetworkFamilyConfig {
                    enabled: true,
                    rule: EdgeRule::threshold(0.8),
                    per_type: true,
                },
                graphml: true,
            },
            centrality: CentralityConfig {
                measures: ["degree", "eigenvector", "pagerank", "betweenness"].map(String::from).to_vec(),
                damping: 0.85,
                tol: 1e-10,
                max_iter: 10_000,
                top_k: 10,
                betweenness_samples: None,
                seed: 0,
            },
            screen: ScreenConfig {
                baseline: CancerType::BRCA,
                alpha: 0.005,
                rule: SelectionRule::AnyContrast,
            },
            groups: GroupsConfig {
                edges: coexpr::exprgroup::DEFAULT_EDGES,
                gene_set: GeneSet::Selected,
                types: vec![CancerType::LUAD, CancerType::PRAD],
                compare: vec![[CancerType::LUAD, CancerType::PRAD]],
            },
            svg: false,
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back to
/// a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> anyhow::Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .with_context(|| format!("override {key:?}: {} is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    bail!("empty override key")
}

impl PipelineConfig {
    /// Defaults < `file` < `overrides` (each `dotted.key=value`). Relative
    /// input paths in a file are resolved against the file's directory.
    pub fn layered(file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut value = toml::Value::try_from(PipelineConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut parsed: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                resolve_relative(&mut parsed, dir);
            }
            merge(&mut value, parsed);
        }
        for ov in overrides {
            let (k, v) = ov.split_once('=').with_context(|| format!("override {ov:?} is not key=value"))?;
            set_path(&mut value, k.trim(), parse_override_value(v.trim()))?;
        }
        value.try_into().context("invalid configuration")
    }

    /// Every problem found, empty when the configuration is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, p) in [("input.data", &self.input.data), ("input.labels", &self.input.labels)] {
            if !p.is_file() {
                v.push(format!("path: {name} = {} does not exist", p.display()));
            }
        }
        let selected: BTreeSet<Stage> = self.stages.iter().copied().collect();
        if selected.is_empty() {
            v.push("stages: no stage selected".into());
        }
        for s in &selected {
            for dep in s.requires(self) {
                if !selected.contains(&dep) {
                    v.push(format!("dependency: stage {s} requires stage {dep}, which is not selected"));
                }
            }
        }
        if let Err(e) = self.normalization.validate() {
            v.push(format!("normalization: {e}"));
        }
        if self.pca.dims == 0 {
            v.push("pca.dims must be at least 1".into());
        }
        if self.tsne.enabled {
            if !(self.tsne.dim == 2 || self.tsne.dim == 3) {
                v.push(format!("tsne.dim must be 2 or 3, got {}", self.tsne.dim));
            }
            if !(self.tsne.perplexity > 1.0) {
                v.push(format!("tsne.perplexity must exceed 1, got {}", self.tsne.perplexity));
            }
            if self.tsne.iterations == 0 {
                v.push("tsne.iterations must be at least 1".into());
            }
            if self.tsne.learning_rate.is_some_and(|l| !(l > 0.0)) {
                v.push("tsne.learning_rate must be positive".into());
            }
        }
        if self.hclust.enabled && self.hclust.clusters == 0 {
            v.push("hclust.clusters must be at least 1".into());
        }
        if self.hclust.cut_height.is_some_and(|h| !(h > 0.0)) {
            v.push("hclust.cut_height must be positive".into());
        }
        if self.gmm.k == 0 || self.gmm.restarts == 0 || self.gmm.max_iter == 0 {
            v.push("gmm.k, gmm.restarts and gmm.max_iter must be at least 1".into());
        }
        if self.gmm.pca_dims == 0 || self.gmm.pca_dims > self.pca.dims {
            v.push(format!("gmm.pca_dims must lie in 1..=pca.dims ({}), got {}", self.pca.dims, self.gmm.pca_dims));
        }
        if self.network.block == 0 {
            v.push("network.block must be at least 1".into());
        }
        for (name, fam) in [("patients", &self.network.patients), ("genes", &self.network.genes)] {
            if let Err(e) = fam.rule.validate() {
                v.push(format!("network.{name}.rule: {e}"));
            }
        }
        for m in &self.centrality.measures {
            if m.parse::<coexpr::centrality::Measure>().is_err() {
                v.push(format!("centrality.measures: unknown measure {m:?}"));
            }
        }
        if !(self.centrality.damping > 0.0 && self.centrality.damping < 1.0) {
            v.push(format!("centrality.damping must lie in (0,1), got {}", self.centrality.damping));
        }
        if !(self.centrality.tol > 0.0) || self.centrality.max_iter == 0 || self.centrality.top_k == 0 {
            v.push("centrality.tol, max_iter and top_k must be positive".into());
        }
        if self.centrality.betweenness_samples == Some(0) {
            v.push("centrality.betweenness_samples must be at least 1".into());
        }
        if !(self.screen.alpha > 0.0 && self.screen.alpha < 1.0) {
            v.push(format!("screen.alpha must lie in (0,1), got {}", self.screen.alpha));
        }
        let e = self.groups.edges;
        if e.iter().any(|x| !x.is_finite()) || e[0] >= e[1] || e[1] >= e[2] {
            v.push(format!("groups.edges must be strictly increasing, got {e:?}"));
        }
        for [a, b] in &self.groups.compare {
            if a == b {
                v.push(format!("groups.compare: pair {a}/{b} compares a type with itself"));
            }
            for t in [a, b] {
                if !self.groups.types.contains(t) {
                    v.push(format!("groups.compare: {t} is not listed in groups.types"));
                }
            }
        }
        v
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  {}", v.join("\n  "))
        }
    }
}

fn resolve_relative(value: &mut toml::Value, dir: &Path) {
    let Some(input) = value.get_mut("input").and_then(|v| v.as_table_mut()) else {
        return;
    };
    for key in ["data", "labels"] {
        if let Some(toml::Value::String(s)) = input.get_mut(key) {
            if Path::new(s.as_str()).is_relative() {
                *s = dir.join(&*s).to_string_lossy().into_owned();
            }
        }
    }
}
