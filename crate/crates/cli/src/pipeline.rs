//! Stage execution. Each stage writes its files under `<run>/<stage>/` and
//! reads upstream results from disk, so any stage can be re-run alone
//! against an existing run directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use coexpr::centrality::{self, CentralityScores, Measure, RankedTable, Sampling};
use coexpr::dimred::{self, cut_dendrogram, cut_into_clusters, hierarchical_cluster, silhouette, TsneParams};
use coexpr::exprgroup::{self, Group, GroupAssignment};
use coexpr::exprmatrix::{load_dataset, write_meta, MatrixMeta};
use coexpr::genesel::{self, ScreenOptions, SelectionRule};
use coexpr::mixture::{self, GmmOptions};
use coexpr::netbuild::io::{read_edge_list, write_degree_histogram, write_edge_list, write_graphml, write_json, write_node_list};
use coexpr::netbuild::{build_graph_blocked, degree_distribution, Axis, BlockedOptions, SparseGraph};
use coexpr::{CancerType, Exec, ExpressionMatrix};
use log::info;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{GeneSet, PipelineConfig, Stage};
use crate::manifest::{self, OutputRecord, RunManifest, Seeds, StageError, StageRecord, StageStatus};
use crate::svg;

/// What a stage produced: files relative to the run root, and failures of
/// individual units that did not abort the stage.
#[derive(Default)]
struct StageOutput {
    files: Vec<PathBuf>,
    errors: Vec<StageError>,
}

impl StageOutput {
    fn add(&mut self, rel: impl Into<PathBuf>) {
        self.files.push(rel.into());
    }

    fn fail(&mut self, scope: impl Into<String>, err: impl std::fmt::Display) {
        self.errors.push(StageError {
            scope: scope.into(),
            message: err.to_string(),
        });
    }
}

/// One built network, as listed in `net/networks.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkEntry {
    family: String,
    unit: String,
    edges: PathBuf,
    nodes: PathBuf,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    root: PathBuf,
    force: bool,
    threads: usize,
    raw: Option<ExpressionMatrix>,
    normalized: Option<ExpressionMatrix>,
    keys: BTreeMap<Stage, String>,
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn stage_dir(stage: Stage) -> PathBuf {
    PathBuf::from(stage.as_str())
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, force: bool, threads: usize) -> Self {
        Self {
            root: cfg.output_dir.clone(),
            cfg,
            force,
            threads,
            raw: None,
            normalized: None,
            keys: BTreeMap::new(),
        }
    }

    fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    fn raw(&mut self) -> anyhow::Result<&ExpressionMatrix> {
        if self.raw.is_none() {
            info!("loading {}", self.cfg.input.data.display());
            self.raw = Some(load_dataset(&self.cfg.input.data, &self.cfg.input.labels)?);
        }
        Ok(self.raw.as_ref().unwrap())
    }

    fn normalized(&mut self) -> anyhow::Result<&ExpressionMatrix> {
        if self.normalized.is_none() {
            let spec = self.cfg.normalization;
            let n = self.raw()?.normalize(spec)?;
            self.normalized = Some(n.matrix);
        }
        Ok(self.normalized.as_ref().unwrap())
    }

    /// Parameters that determine a stage's outputs, beyond its upstream stages.
    fn stage_params(&self, stage: Stage) -> serde_json::Value {
        let c = &self.cfg;
        match stage {
            Stage::Load => json!({ "normalization": c.normalization }),
            Stage::Reduce => json!({
                "normalization": c.normalization,
                "pca": c.pca,
                "tsne": c.tsne,
                "hclust": c.hclust,
                "svg": c.svg,
            }),
            Stage::Gmm => json!({ "gmm": c.gmm, "svg": c.svg }),
            Stage::Net => json!({ "network": c.network }),
            Stage::Centrality => json!({ "centrality": c.centrality }),
            Stage::Screen => json!({ "screen": c.screen }),
            Stage::Groups => json!({
                "edges": c.groups.edges,
                "gene_set": c.groups.gene_set,
                "types": c.groups.types,
            }),
            Stage::Compare => json!({ "edges": c.groups.edges, "compare": c.groups.compare }),
        }
    }

    fn cache_key(&self, stage: Stage, input_digests: &[OutputRecord]) -> String {
        let deps: Vec<&String> = stage.requires(&self.cfg).iter().filter_map(|d| self.keys.get(d)).collect();
        let inputs = if stage == Stage::Load { input_digests } else { &[] };
        let doc = json!({
            "stage": stage,
            "version": env!("CARGO_PKG_VERSION"),
            "params": self.stage_params(stage),
            "deps": deps,
            "inputs": inputs,
        });
        manifest::sha256_str(&doc.to_string())
    }

    /// Runs `stages` in dependency order, writing the manifest after each.
    pub fn run(&mut self, stages: &BTreeSet<Stage>) -> anyhow::Result<RunManifest> {
        let start = Instant::now();
        std::fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let mut input_digests = Vec::new();
        for p in [&self.cfg.input.data, &self.cfg.input.labels] {
            input_digests.push(OutputRecord {
                path: p.clone(),
                sha256: manifest::sha256_file(p)?,
                bytes: std::fs::metadata(p)?.len(),
            });
        }
        let mut m = RunManifest {
            tool: "coexpr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            threads: self.threads,
            config: self.cfg.clone(),
            seeds: Seeds {
                tsne: self.cfg.tsne.seed,
                gmm: self.cfg.gmm.seed,
                gmm_restart_rule: "restart r uses seed + r".into(),
                betweenness_sampling: self.cfg.centrality.betweenness_samples.map(|_| self.cfg.centrality.seed),
            },
            input_digests: input_digests.clone(),
            stages: Vec::new(),
            total_wall_seconds: 0.0,
        };
        let mut failed: BTreeSet<Stage> = BTreeSet::new();
        for stage in Stage::ALL.into_iter().filter(|s| stages.contains(s)) {
            let key = self.cache_key(stage, &input_digests);
            self.keys.insert(stage, key.clone());
            let t0 = Instant::now();
            let blocked: Vec<Stage> = stage.requires(&self.cfg).into_iter().filter(|d| failed.contains(d)).collect();
            let record = if !blocked.is_empty() {
                failed.insert(stage);
                StageRecord {
                    stage,
                    status: StageStatus::Failed,
                    cache_key: key,
                    wall_seconds: 0.0,
                    peak_rss_kib: manifest::peak_rss_kib(),
                    outputs: vec![],
                    errors: blocked
                        .iter()
                        .map(|d| StageError {
                            scope: "dependency".into(),
                            message: format!("upstream stage {d} failed"),
                        })
                        .collect(),
                }
            } else if let Some(outputs) = (!self.force).then(|| manifest::cache_lookup(&self.root, stage, &key)).flatten() {
                info!("{stage}: unchanged, skipping");
                StageRecord {
                    stage,
                    status: StageStatus::Cached,
                    cache_key: key,
                    wall_seconds: t0.elapsed().as_secs_f64(),
                    peak_rss_kib: manifest::peak_rss_kib(),
                    outputs,
                    errors: vec![],
                }
            } else {
                info!("{stage}: running");
                manifest::cache_invalidate(&self.root, stage);
                std::fs::create_dir_all(self.path(&stage_dir(stage)))?;
                let result = self.run_stage(stage);
                let (status, outputs, errors) = match result {
                    Ok(out) => {
                        let mut files = out.files;
                        files.sort();
                        files.dedup();
                        let outputs = files
                            .iter()
                            .map(|f| OutputRecord::of(&self.root, f))
                            .collect::<anyhow::Result<Vec<_>>>()?;
                        let status = if out.errors.is_empty() {
                            manifest::cache_store(&self.root, stage, &key, &outputs)?;
                            StageStatus::Completed
                        } else {
                            StageStatus::Partial
                        };
                        (status, outputs, out.errors)
                    }
                    Err(e) => {
                        failed.insert(stage);
                        (
                            StageStatus::Failed,
                            vec![],
                            vec![StageError {
                                scope: stage.to_string(),
                                message: format!("{e:#}"),
                            }],
                        )
                    }
                };
                StageRecord {
                    stage,
                    status,
                    cache_key: key,
                    wall_seconds: t0.elapsed().as_secs_f64(),
                    peak_rss_kib: manifest::peak_rss_kib(),
                    outputs,
                    errors,
                }
            };
            info!("{stage}: {:?} in {:.2} s", record.status, record.wall_seconds);
            m.stages.push(record);
            m.total_wall_seconds = start.elapsed().as_secs_f64();
            m.write(&self.root)?;
        }
        Ok(m)
    }

    fn run_stage(&mut self, stage: Stage) -> anyhow::Result<StageOutput> {
        match stage {
            Stage::Load => self.load(),
            Stage::Reduce => self.reduce(),
            Stage::Gmm => self.gmm(),
            Stage::Net => self.net(),
            Stage::Centrality => self.centrality(),
            Stage::Screen => self.screen(),
            Stage::Groups => self.groups(),
            Stage::Compare => self.compare(),
        }
    }

    fn load(&mut self) -> anyhow::Result<StageOutput> {
        let spec = self.cfg.normalization;
        let m = self.raw()?;
        let constant = m.normalize(spec)?.constant_columns;
        let meta = MatrixMeta::describe(m, spec, &constant);
        let mut out = StageOutput::default();
        let rel = PathBuf::from("load/meta.json");
        write_meta(&meta, &self.path(&rel))?;
        out.add(rel);
        info!("{} samples × {} genes", meta.n_samples, meta.n_genes);
        Ok(out)
    }

    fn reduce(&mut self) -> anyhow::Result<StageOutput> {
        let cfg = self.cfg.clone();
        let root = self.root.clone();
        let m = self.normalized()?.clone();
        let mut out = StageOutput::default();

        let t0 = Instant::now();
        let pca = dimred::pca(&m, cfg.pca.dims)?;
        info!("reduce: pca in {:.1} s", t0.elapsed().as_secs_f64());
        let rel = PathBuf::from("reduce/pca_projection.csv");
        write_projection(&root.join(&rel), &m, &pca.projected, "PC")?;
        out.add(rel);
        let rel = PathBuf::from("reduce/pca_loadings.csv");
        {
            let mut w = create(&root.join(&rel))?;
            write!(w, "gene_id")?;
            for c in 0..cfg.pca.dims {
                write!(w, ",PC{}", c + 1)?;
            }
            writeln!(w)?;
            for (g, id) in m.gene_ids().iter().enumerate() {
                write!(w, "{id}")?;
                for c in 0..cfg.pca.dims {
                    write!(w, ",{:?}", pca.components[(g, c)])?;
                }
                writeln!(w)?;
            }
            w.flush()?;
        }
        out.add(rel);
        let rel = PathBuf::from("reduce/pca_summary.json");
        write_json(
            &json!({
                "dims": cfg.pca.dims,
                "normalization": cfg.normalization,
                "eigenvalues": pca.eigenvalues,
                "explained_variance_fraction": pca.explained_variance_fraction,
                "total_variance": pca.total_variance,
                "sign_convention": "largest-magnitude loading of each component is positive",
            }),
            &root.join(&rel),
        )?;
        out.add(rel);
        if cfg.svg && cfg.pca.dims >= 2 {
            let rel = PathBuf::from("reduce/pca.svg");
            svg::scatter(&root.join(&rel), &pca.projected, m.labels(), "PCA", ("PC1", "PC2"))?;
            out.add(rel);
        }

        let class_index: Vec<usize> = m.labels().iter().map(|l| l.index()).collect();
        if cfg.tsne.enabled {
            let params = TsneParams {
                dim: cfg.tsne.dim,
                perplexity: cfg.tsne.perplexity,
                iterations: cfg.tsne.iterations,
                seed: cfg.tsne.seed,
                learning_rate: cfg.tsne.learning_rate,
                exec: Exec::default(),
            };
            let t0 = Instant::now();
            match dimred::tsne(&m, params) {
                Ok(t) => {
                    info!("reduce: t-SNE in {:.1} s", t0.elapsed().as_secs_f64());
                    let rel = PathBuf::from("reduce/tsne_embedding.csv");
                    write_projection(&root.join(&rel), &m, &t.embedding, "tSNE")?;
                    out.add(rel);
                    let rel = PathBuf::from("reduce/tsne_summary.json");
                    write_json(
                        &json!({
                            "params": params,
                            "final_kl": t.final_kl,
                            "iterations_run": t.iterations_run,
                            "silhouette_vs_labels": silhouette(&t.embedding, &class_index),
                            "kl_trace": t.kl_trace,
                        }),
                        &root.join(&rel),
                    )?;
                    out.add(rel);
                    if cfg.svg {
                        let rel = PathBuf::from("reduce/tsne.svg");
                        svg::scatter(&root.join(&rel), &t.embedding, m.labels(), "t-SNE", ("tSNE1", "tSNE2"))?;
                        out.add(rel);
                    }
                }
                Err(e) => out.fail("tsne", e),
            }
        }

        if cfg.hclust.enabled {
            let x = DMatrix::from_row_slice(m.n_samples(), m.n_genes(), m.values());
            let t0 = Instant::now();
            match hierarchical_cluster(&x, cfg.hclust.linkage, Exec::default()) {
                Ok(d) => {
                    info!("reduce: hierarchical clustering in {:.1} s", t0.elapsed().as_secs_f64());
                    let rel = PathBuf::from("reduce/dendrogram.csv");
                    let mut w = create(&root.join(&rel))?;
                    writeln!(w, "step,node,left,right,height,size")?;
                    for (t, mg) in d.merges.iter().enumerate() {
                        writeln!(w, "{t},{},{},{},{:?},{}", d.n_leaves + t, mg.left, mg.right, mg.height, mg.size)?;
                    }
                    w.flush()?;
                    out.add(rel);

                    let by_k = cut_into_clusters(&d, cfg.hclust.clusters.min(m.n_samples()))?;
                    let by_h = cfg.hclust.cut_height.map(|h| cut_dendrogram(&d, h));
                    let rel = PathBuf::from("reduce/hclust_clusters.csv");
                    let mut w = create(&root.join(&rel))?;
                    write!(w, "sample_id,label,leaf_position,cluster_k")?;
                    if by_h.is_some() {
                        write!(w, ",cluster_height")?;
                    }
                    writeln!(w)?;
                    let mut position = vec![0; m.n_samples()];
                    d.leaf_order.iter().enumerate().for_each(|(p, &leaf)| position[leaf] = p);
                    for i in 0..m.n_samples() {
                        write!(w, "{},{},{},{}", m.sample_ids()[i], m.labels()[i], position[i], by_k[i])?;
                        if let Some(h) = &by_h {
                            write!(w, ",{}", h[i])?;
                        }
                        writeln!(w)?;
                    }
                    w.flush()?;
                    out.add(rel);

                    let k = by_k.iter().max().map_or(0, |x| x + 1);
                    let mut table = vec![vec![0u64; CancerType::ALL.len()]; k];
                    for (c, l) in by_k.iter().zip(m.labels()) {
                        table[*c][l.index()] += 1;
                    }
                    let rel = PathBuf::from("reduce/hclust_summary.json");
                    write_json(
                        &json!({
                            "linkage": cfg.hclust.linkage,
                            "metric": "euclidean",
                            "clusters": k,
                            "top_merge_height": d.merges.last().map(|m| m.height),
                            "cluster_by_label": table,
                            "label_order": CancerType::ALL,
                            "adjusted_rand_vs_labels": coexpr::stats::adjusted_rand_index(&table),
                        }),
                        &root.join(&rel),
                    )?;
                    out.add(rel);
                }
                Err(e) => out.fail("hclust", e),
            }
        }
        Ok(out)
    }

    fn gmm(&mut self) -> anyhow::Result<StageOutput> {
        let cfg = self.cfg.gmm.clone();
        let (ids, labels, points) = read_projection(&self.path(Path::new("reduce/pca_projection.csv")), cfg.pca_dims)?;
        let model = mixture::fit_gmm(
            &points,
            GmmOptions {
                k: cfg.k,
                seed: cfg.seed,
                max_iter: cfg.max_iter,
                tol: cfg.tol,
                restarts: cfg.restarts,
            },
        )?;
        let mut out = StageOutput::default();
        let mapping = match mixture::match_components(&model, &labels, &points) {
            Ok(m) => Some(m),
            Err(e) => {
                out.fail("match_components", e);
                None
            }
        };
        let mut proportions: BTreeMap<CancerType, f64> = BTreeMap::new();
        for l in &labels {
            *proportions.entry(*l).or_default() += 1.0 / labels.len() as f64;
        }
        let weights_by_label: Option<BTreeMap<CancerType, f64>> = mapping
            .as_ref()
            .map(|m| m.iter().zip(&model.weights).map(|(l, w)| (*l, *w)).collect());
        let rel = PathBuf::from("gmm/model.json");
        write_json(
            &json!({
                "options": cfg,
                "model": model,
                "component_labels": mapping,
                "weights_by_label": weights_by_label,
                "label_proportions": proportions,
            }),
            &self.path(&rel),
        )?;
        out.add(rel);
        let resp = mixture::responsibilities(&model, &points)?.0;
        let rel = PathBuf::from("gmm/responsibilities.csv");
        let mut w = create(&self.path(&rel))?;
        write!(w, "sample_id,label")?;
        for c in 0..model.k() {
            match &mapping {
                Some(m) => write!(w, ",component_{c}_{}", m[c])?,
                None => write!(w, ",component_{c}")?,
            }
        }
        writeln!(w)?;
        for i in 0..ids.len() {
            write!(w, "{},{}", ids[i], labels[i])?;
            for c in 0..model.k() {
                write!(w, ",{:?}", resp[(i, c)])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        out.add(rel);
        Ok(out)
    }

    fn net(&mut self) -> anyhow::Result<StageOutput> {
        let cfg = self.cfg.network.clone();
        let root = self.root.clone();
        let m = self.raw()?.clone();
        let mut out = StageOutput::default();
        let mut entries = Vec::new();
        let mut summary = create(&root.join("net/summary.csv"))?;
        writeln!(
            summary,
            "family,unit,n_nodes,n_non_isolated,n_edges,mean_degree,mean_degree_non_isolated,n_degenerate"
        )?;
        let opts = BlockedOptions {
            block: cfg.block,
            exec: Exec::default(),
        };
        for (family, fam, axis) in [("patients", &cfg.patients, Axis::Patients), ("genes", &cfg.genes, Axis::Genes)] {
            if !fam.enabled {
                continue;
            }
            let units: Vec<Option<CancerType>> = if fam.per_type {
                m.classes().into_iter().map(Some).collect()
            } else {
                vec![None]
            };
            for unit in units {
                let name = unit.map_or("ALL".to_string(), |c| c.to_string());
                let scope = format!("{family}/{name}");
                info!("net: {scope}");
                let built = match unit {
                    Some(c) => m.subset_by_label(c).map_err(anyhow::Error::from).and_then(|sub| {
                        build_graph_blocked(&sub, axis, fam.rule, opts).map_err(Into::into)
                    }),
                    None => build_graph_blocked(&m, axis, fam.rule, opts).map_err(Into::into),
                };
                let g = match built {
                    Ok(g) => g,
                    Err(e) => {
                        out.fail(scope, e);
                        continue;
                    }
                };
                let base = format!("net/{family}_{name}");
                let edges = PathBuf::from(format!("{base}_edges.csv"));
                let nodes = PathBuf::from(format!("{base}_nodes.csv"));
                write_edge_list(&g, &root.join(&edges))?;
                write_node_list(&g, &root.join(&nodes))?;
                let hist = PathBuf::from(format!("{base}_degree_hist.csv"));
                write_degree_histogram(&degree_distribution(&g), &root.join(&hist))?;
                let meta = PathBuf::from(format!("{base}_meta.json"));
                write_json(&json!({ "build": g.meta(), "stats": g.stats() }), &root.join(&meta))?;
                out.files.extend([edges.clone(), nodes.clone(), hist, meta]);
                if cfg.graphml {
                    let rel = PathBuf::from(format!("{base}.graphml"));
                    write_graphml(&g, &root.join(&rel), &[])?;
                    out.add(rel);
                }
                let s = g.stats();
                writeln!(
                    summary,
                    "{family},{name},{},{},{},{:?},{:?},{}",
                    s.n_nodes, s.n_non_isolated, s.n_edges, s.mean_degree, s.mean_degree_non_isolated, s.n_degenerate
                )?;
                entries.push(NetworkEntry {
                    family: family.into(),
                    unit: name,
                    edges,
                    nodes,
                });
            }
        }
        summary.flush()?;
        out.add("net/summary.csv");
        write_json(&entries, &root.join("net/networks.json"))?;
        out.add("net/networks.json");
        Ok(out)
    }

    fn centrality(&mut self) -> anyhow::Result<StageOutput> {
        let cfg = self.cfg.centrality.clone();
        let root = self.root.clone();
        let entries: Vec<NetworkEntry> = serde_json::from_str(
            &std::fs::read_to_string(root.join("net/networks.json")).context("reading net/networks.json")?,
        )?;
        let measures: Vec<Measure> = cfg.measures.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
        let mut out = StageOutput::default();
        for e in entries {
            let scope = format!("{}/{}", e.family, e.unit);
            info!("centrality: {scope}");
            let g = match read_edge_list(&root.join(&e.edges), Some(&root.join(&e.nodes))) {
                Ok(g) => g,
                Err(err) => {
                    out.fail(scope, err);
                    continue;
                }
            };
            let mut computed: Vec<CentralityScores> = Vec::new();
            for &measure in &measures {
                match compute_measure(&g, measure, &cfg) {
                    Ok(s) => computed.push(s),
                    Err(err) => out.fail(format!("{scope}/{}", measure.as_str()), err),
                }
            }
            let base = format!("centrality/{}_{}", e.family, e.unit);
            let mut tables: Vec<RankedTable> = Vec::new();
            for s in &computed {
                let table = centrality::rank_table(s, cfg.top_k)?;
                let rel = PathBuf::from(format!("{base}_{}_top.csv", s.measure.as_str()));
                centrality::write_ranked_csv(&table, g.node_ids(), &root.join(&rel))?;
                out.add(rel);
                tables.push(table);
            }
            let rel = PathBuf::from(format!("{base}_ranked.json"));
            write_json(&tables, &root.join(&rel))?;
            out.add(rel);
            let rel = PathBuf::from(format!("{base}_scores.csv"));
            let mut w = create(&root.join(&rel))?;
            write!(w, "node_index,node_id")?;
            for s in &computed {
                write!(w, ",{}", s.measure.as_str())?;
            }
            writeln!(w)?;
            for (v, id) in g.node_ids().iter().enumerate() {
                write!(w, "{v},{id}")?;
                for s in &computed {
                    write!(w, ",{:?}", s.scores[v])?;
                }
                writeln!(w)?;
            }
            w.flush()?;
            out.add(rel);
        }
        Ok(out)
    }

    fn screen(&mut self) -> anyhow::Result<StageOutput> {
        let cfg = self.cfg.screen.clone();
        let root = self.root.clone();
        let m = self.raw()?;
        let results = genesel::screen_all(
            m,
            ScreenOptions {
                baseline: cfg.baseline,
                ..Default::default()
            },
        )?;
        let mut out = StageOutput::default();
        let rel = PathBuf::from("screen/results.csv");
        genesel::write_results_csv(&results, &root.join(&rel))?;
        out.add(rel);
        let report = genesel::select_genes(&results, cfg.alpha, cfg.rule)?;
        let rel = PathBuf::from("screen/manhattan.csv");
        genesel::manhattan_export(&report, &root.join(&rel))?;
        out.add(rel);
        let count = |rule| genesel::select_genes(&results, cfg.alpha, rule).map(|r| r.selected_indices.len());
        let mut statuses: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &results {
            *statuses.entry(r.status.as_str()).or_default() += 1;
        }
        let rel = PathBuf::from("screen/selection.json");
        write_json(
            &json!({
                "baseline": cfg.baseline,
                "alpha": report.alpha,
                "threshold_neg_log10_p": report.threshold(),
                "rule": report.rule,
                "rule_description": report.rule_description,
                "test_reference": report.test_reference,
                "n_genes": results.len(),
                "n_selected": report.selected_indices.len(),
                "selected_by_rule": {
                    "any_contrast": count(SelectionRule::AnyContrast)?,
                    "all_contrasts": count(SelectionRule::AllContrasts)?,
                },
                "status_counts": statuses,
            }),
            &root.join(&rel),
        )?;
        out.add(rel);
        let rel = PathBuf::from("screen/selected_genes.csv");
        let mut w = create(&root.join(&rel))?;
        writeln!(w, "gene_index,gene_id")?;
        for (i, id) in report.selected_indices.iter().zip(&report.selected_gene_ids) {
            writeln!(w, "{i},{id}")?;
        }
        w.flush()?;
        out.add(rel);
        info!("screen: {} of {} genes selected", report.selected_indices.len(), results.len());
        Ok(out)
    }

    fn groups(&mut self) -> anyhow::Result<StageOutput> {
        let cfg = self.cfg.groups.clone();
        let root = self.root.clone();
        let m = self.raw()?;
        let genes: Vec<usize> = match cfg.gene_set {
            GeneSet::All => (0..m.n_genes()).collect(),
            GeneSet::Selected => read_selected(&root.join("screen/selected_genes.csv"), m)?,
        };
        let sub = m.select_genes(&genes);
        let mut out = StageOutput::default();
        for &t in &cfg.types {
            let stats = match exprgroup::group_statistic(&sub, t, Exec::default()) {
                Ok(s) => s,
                Err(e) => {
                    out.fail(t.to_string(), e);
                    continue;
                }
            };
            let a = exprgroup::assign_groups(t, sub.gene_ids(), &stats, cfg.edges)?;
            let rel = PathBuf::from(format!("groups/{t}_groups.csv"));
            exprgroup::write_assignment_csv(&a, &root.join(&rel))?;
            out.add(rel);
            let gg = exprgroup::build_group_graph(&a);
            let rel = PathBuf::from(format!("groups/{t}_graph.graphml"));
            gg.write_graphml(&root.join(&rel))?;
            out.add(rel);
            let counts = a.counts();
            let rel = PathBuf::from(format!("groups/{t}_summary.json"));
            write_json(
                &json!({
                    "cancer_type": t,
                    "bin_edges": cfg.edges,
                    "gene_set": cfg.gene_set,
                    "n_genes": a.groups.len(),
                    "counts": Group::ALL.iter().map(|g| (g.as_str(), counts[g.index()])).collect::<BTreeMap<_, _>>(),
                    "components": gg.component_summary(),
                    "n_edges": gg.n_edges(),
                }),
                &root.join(&rel),
            )?;
            out.add(rel);
        }
        Ok(out)
    }

    fn compare(&mut self) -> anyhow::Result<StageOutput> {
        let cfg = self.cfg.groups.clone();
        let mut out = StageOutput::default();
        for [a, b] in &cfg.compare {
            let scope = format!("{a}_vs_{b}");
            let loaded = read_assignment(&self.path(Path::new(&format!("groups/{a}_groups.csv"))), *a, cfg.edges)
                .and_then(|x| Ok((x, read_assignment(&self.path(Path::new(&format!("groups/{b}_groups.csv"))), *b, cfg.edges)?)));
            let report = loaded.and_then(|(x, y)| Ok(exprgroup::compare_grouping(&x, &y)?));
            match report {
                Ok(r) => {
                    let rel = PathBuf::from(format!("compare/{scope}.json"));
                    write_json(
                        &json!({
                            "report": r,
                            "group_order": Group::ALL.iter().map(|g| g.as_str()).collect::<Vec<_>>(),
                            "b_c_mixing": r.count(Group::B, Group::C) + r.count(Group::C, Group::B),
                            "b_d_mixing": r.count(Group::B, Group::D) + r.count(Group::D, Group::B),
                        }),
                        &self.path(&rel),
                    )?;
                    out.add(rel);
                }
                Err(e) => out.fail(scope, e),
            }
        }
        Ok(out)
    }
}

fn compute_measure(g: &SparseGraph, measure: Measure, cfg: &crate::config::CentralityConfig) -> coexpr::Result<CentralityScores> {
    match measure {
        Measure::Degree => Ok(centrality::degree_centrality(g)),
        Measure::Eigenvector => centrality::eigenvector_centrality(g, cfg.tol, cfg.max_iter),
        Measure::Pagerank => centrality::pagerank(g, cfg.damping, cfg.tol, cfg.max_iter, Exec::default()),
        Measure::Betweenness => {
            let sampling = match cfg.betweenness_samples {
                Some(k) => Sampling::Sampled {
                    k: k.min(g.n_nodes()).max(1),
                    seed: cfg.seed,
                },
                None => Sampling::Exact,
            };
            centrality::betweenness(g, sampling, Exec::default())
        }
    }
}

/// `sample_id,label,<prefix>1,...` with exact float formatting.
fn write_projection(path: &Path, m: &ExpressionMatrix, coords: &DMatrix<f64>, prefix: &str) -> anyhow::Result<()> {
    let mut w = create(path)?;
    write!(w, "sample_id,label")?;
    for c in 0..coords.ncols() {
        write!(w, ",{prefix}{}", c + 1)?;
    }
    writeln!(w)?;
    for i in 0..coords.nrows() {
        write!(w, "{},{}", m.sample_ids()[i], m.labels()[i])?;
        for c in 0..coords.ncols() {
            write!(w, ",{:?}", coords[(i, c)])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn read_projection(path: &Path, dims: usize) -> anyhow::Result<(Vec<String>, Vec<CancerType>, DMatrix<f64>)> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 2 + dims {
            bail!("{}: expected at least {} columns, found {}", path.display(), 2 + dims, rec.len());
        }
        ids.push(rec[0].to_string());
        labels.push(rec[1].parse::<CancerType>()?);
        for c in 0..dims {
            values.push(rec[2 + c].parse::<f64>()?);
        }
    }
    let n = ids.len();
    Ok((ids, labels, DMatrix::from_row_slice(n, dims, &values)))
}

fn read_selected(path: &Path, m: &ExpressionMatrix) -> anyhow::Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let idx: usize = rec[0].parse()?;
        if m.gene_ids().get(idx).map(String::as_str) != Some(&rec[1]) {
            bail!("{}: gene {} at index {idx} does not match the loaded matrix", path.display(), &rec[1]);
        }
        out.push(idx);
    }
    Ok(out)
}

fn read_assignment(path: &Path, t: CancerType, edges: [f64; 3]) -> anyhow::Result<GroupAssignment> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut gene_ids = Vec::new();
    let mut groups = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        gene_ids.push(rec[0].to_string());
        groups.push(rec[1].parse::<Group>()?);
    }
    Ok(GroupAssignment {
        cancer_type: t,
        gene_ids,
        groups,
        bin_edges: edges,
    })
}
