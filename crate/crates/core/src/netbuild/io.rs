//! Graph import/export: edge-list CSV, GraphML, degree histograms and build
//! metadata.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::graph::{BuildMeta, NodeKind, SparseGraph};
use crate::error::{Error, Result};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// `source,target` by node id, one row per edge in `(u, v)` order.
pub fn write_edge_list(g: &SparseGraph, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "source,target").map_err(io)?;
    let ids = g.node_ids();
    for &(u, v) in g.edges() {
        writeln!(w, "{},{}", ids[u], ids[v]).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// `index,id,degree` for every node, including isolated ones.
pub fn write_node_list(g: &SparseGraph, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "index,id,degree").map_err(io)?;
    for (i, id) in g.node_ids().iter().enumerate() {
        writeln!(w, "{i},{id},{}", g.degree(i)).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a `source,target` edge list. When `nodes` is given (one id per line,
/// optionally in the `index,id,degree` layout), node order and isolated nodes
/// come from it; otherwise nodes are numbered in order of first appearance.
pub fn read_edge_list(path: &Path, nodes: Option<&Path>) -> Result<SparseGraph> {
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    if let Some(np) = nodes {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(np)
            .map_err(|source| Error::Csv {
                path: np.to_path_buf(),
                source,
            })?;
        let id_col = rdr
            .headers()
            .ok()
            .and_then(|h| h.iter().position(|c| c == "id"))
            .unwrap_or(0);
        for rec in rdr.records() {
            let rec = rec.map_err(|source| Error::Csv {
                path: np.to_path_buf(),
                source,
            })?;
            let id = rec.get(id_col).unwrap_or("").to_string();
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId { kind: "node", id });
            }
            ids.push(id);
        }
    }
    let fixed = nodes.is_some();
    let mut rdr = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if rec.len() < 2 {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row: edges.len() + 1,
                expected: 2,
                found: rec.len(),
            });
        }
        let mut endpoint = |name: &str| -> Result<usize> {
            if let Some(&i) = index.get(name) {
                return Ok(i);
            }
            if fixed {
                return Err(Error::invalid(format!("edge endpoint {name:?} not in node list")));
            }
            index.insert(name.to_string(), ids.len());
            ids.push(name.to_string());
            Ok(ids.len() - 1)
        };
        let u = endpoint(&rec[0])?;
        let v = endpoint(&rec[1])?;
        edges.push((u, v));
    }
    SparseGraph::new(ids.len(), edges, ids, NodeKind::Gene, BuildMeta::imported())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A string-valued node attribute for GraphML export.
pub struct NodeAttr<'a> {
    pub name: &'a str,
    pub values: &'a [String],
}

/// Writes an undirected GraphML document. Each node carries its id plus the
/// given attributes.
pub fn write_graphml(g: &SparseGraph, path: &Path, attrs: &[NodeAttr<'_>]) -> Result<()> {
    write_graphml_edges(g.node_ids(), g.edges().iter().copied(), path, attrs)
}

/// GraphML from an explicit node list and edge iterator; used for graphs
/// whose edges are generated on the fly.
pub fn write_graphml_edges(
    node_ids: &[String],
    edges: impl Iterator<Item = (usize, usize)>,
    path: &Path,
    attrs: &[NodeAttr<'_>],
) -> Result<()> {
    for a in attrs {
        if a.values.len() != node_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: node_ids.len(),
                found: a.values.len(),
            });
        }
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#).map_err(io)?;
    writeln!(w, r#"<graphml xmlns="http://graphml.graphdrawing.org/xmlns">"#).map_err(io)?;
    writeln!(w, r#"  <key id="label" for="node" attr.name="label" attr.type="string"/>"#).map_err(io)?;
    for (k, a) in attrs.iter().enumerate() {
        writeln!(
            w,
            r#"  <key id="a{k}" for="node" attr.name="{}" attr.type="string"/>"#,
            xml_escape(a.name)
        )
        .map_err(io)?;
    }
    writeln!(w, r#"  <graph id="G" edgedefault="undirected">"#).map_err(io)?;
    for (i, id) in node_ids.iter().enumerate() {
        write!(w, r#"    <node id="n{i}"><data key="label">{}</data>"#, xml_escape(id)).map_err(io)?;
        for (k, a) in attrs.iter().enumerate() {
            write!(w, r#"<data key="a{k}">{}</data>"#, xml_escape(&a.values[i])).map_err(io)?;
        }
        writeln!(w, "</node>").map_err(io)?;
    }
    for (u, v) in edges {
        writeln!(w, r#"    <edge source="n{u}" target="n{v}"/>"#).map_err(io)?;
    }
    writeln!(w, "  </graph>\n</graphml>").map_err(io)?;
    w.flush().map_err(io)
}

pub fn write_degree_histogram(hist: &BTreeMap<usize, usize>, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "degree,count").map_err(io)?;
    for (d, c) in hist {
        writeln!(w, "{d},{c}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush().map_err(|e| Error::io(path, e))
}
