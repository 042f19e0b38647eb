//! Expression matrix loading, labeling, subsetting and normalization.
//!
//! The on-disk format is a pair of CSV files: `data.csv` has a header row of
//! gene ids (first cell blank) and one row per sample keyed by sample id;
//! `labels.csv` maps each sample id to a class string.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tumour class. Variant order is the canonical (alphabetical) report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CancerType {
    BRCA,
    COAD,
    KIRC,
    LUAD,
    PRAD,
}

impl CancerType {
    pub const ALL: [CancerType; 5] = [
        CancerType::BRCA,
        CancerType::COAD,
        CancerType::KIRC,
        CancerType::LUAD,
        CancerType::PRAD,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CancerType::BRCA => "BRCA",
            CancerType::COAD => "COAD",
            CancerType::KIRC => "KIRC",
            CancerType::LUAD => "LUAD",
            CancerType::PRAD => "PRAD",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CancerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CancerType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BRCA" => Ok(CancerType::BRCA),
            "COAD" => Ok(CancerType::COAD),
            "KIRC" => Ok(CancerType::KIRC),
            "LUAD" => Ok(CancerType::LUAD),
            "PRAD" => Ok(CancerType::PRAD),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

/// Samples × genes matrix of expression levels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    values: Vec<f64>,
    n_samples: usize,
    n_genes: usize,
    sample_ids: Vec<String>,
    gene_ids: Vec<String>,
    labels: Vec<CancerType>,
}

impl ExpressionMatrix {
    /// Builds a matrix from row-major values, validating every invariant.
    pub fn new(
        values: Vec<f64>,
        sample_ids: Vec<String>,
        gene_ids: Vec<String>,
        labels: Vec<CancerType>,
    ) -> Result<Self> {
        let (s, g) = (sample_ids.len(), gene_ids.len());
        if s == 0 || g == 0 {
            return Err(Error::Empty(format!("matrix with {s} samples and {g} genes")));
        }
        if values.len() != s * g {
            return Err(Error::DimensionMismatch {
                expected: s * g,
                found: values.len(),
            });
        }
        if labels.len() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                found: labels.len(),
            });
        }
        check_unique("sample", &sample_ids)?;
        check_unique("gene", &gene_ids)?;
        Ok(Self {
            values,
            n_samples: s,
            n_genes: g,
            sample_ids,
            gene_ids,
            labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn labels(&self) -> &[CancerType] {
        &self.labels
    }

    pub fn get(&self, sample: usize, gene: usize) -> f64 {
        self.values[sample * self.n_genes + gene]
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        &self.values[sample * self.n_genes..(sample + 1) * self.n_genes]
    }

    pub fn column(&self, gene: usize) -> Vec<f64> {
        (0..self.n_samples).map(|i| self.get(i, gene)).collect()
    }

    /// Number of samples per class, in canonical class order.
    pub fn label_histogram(&self) -> BTreeMap<CancerType, usize> {
        let mut h = BTreeMap::new();
        for &l in &self.labels {
            *h.entry(l).or_insert(0) += 1;
        }
        h
    }

    /// Classes present, in canonical order.
    pub fn classes(&self) -> Vec<CancerType> {
        self.label_histogram().into_keys().collect()
    }

    /// Rows whose label equals `class`, in original order.
    pub fn subset_by_label(&self, class: CancerType) -> Result<Self> {
        let rows: Vec<usize> = (0..self.n_samples)
            .filter(|&i| self.labels[i] == class)
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptySubset(class.to_string()));
        }
        Ok(self.select_rows(&rows))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.n_genes);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Self {
            values,
            n_samples: rows.len(),
            n_genes: self.n_genes,
            sample_ids: rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            gene_ids: self.gene_ids.clone(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    pub fn select_genes(&self, genes: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.n_samples * genes.len());
        for i in 0..self.n_samples {
            let row = self.row(i);
            values.extend(genes.iter().map(|&g| row[g]));
        }
        Self {
            values,
            n_samples: self.n_samples,
            n_genes: genes.len(),
            sample_ids: self.sample_ids.clone(),
            gene_ids: genes.iter().map(|&g| self.gene_ids[g].clone()).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Same ids and labels, new values of identical shape.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    /// Per-column mean and population-or-sample standard deviation.
    pub fn column_moments(&self, ddof: usize) -> (Vec<f64>, Vec<f64>) {
        let s = self.n_samples as f64;
        let mut mean = vec![0.0; self.n_genes];
        for i in 0..self.n_samples {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= s);
        let mut ss = vec![0.0; self.n_genes];
        for i in 0..self.n_samples {
            for ((acc, v), m) in ss.iter_mut().zip(self.row(i)).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        let denom = (self.n_samples.saturating_sub(ddof)).max(1) as f64;
        let sd = ss.into_iter().map(|x| (x / denom).sqrt()).collect();
        (mean, sd)
    }

    /// Applies `spec` column-wise. Constant columns under z-scoring become all
    /// zeros and are listed in [`Normalized::constant_columns`].
    pub fn normalize(&self, spec: NormalizationSpec) -> Result<Normalized> {
        spec.validate()?;
        if spec.mode == NormalizationMode::None {
            return Ok(Normalized {
                matrix: self.clone(),
                constant_columns: Vec::new(),
            });
        }
        let (mean, sd) = self.column_moments(spec.ddof as usize);
        let constant: Vec<bool> = (0..self.n_genes)
            .map(|g| {
                let first = self.get(0, g);
                (0..self.n_samples).all(|i| self.get(i, g) == first)
            })
            .collect();
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.n_genes) {
            for (g, v) in row.iter_mut().enumerate() {
                *v = match spec.mode {
                    NormalizationMode::Center => *v - mean[g],
                    NormalizationMode::Zscore if constant[g] => 0.0,
                    NormalizationMode::Zscore => (*v - mean[g]) / sd[g],
                    NormalizationMode::None => unreachable!(),
                };
            }
        }
        let constant_columns = match spec.mode {
            NormalizationMode::Zscore => (0..self.n_genes).filter(|&g| constant[g]).collect(),
            _ => Vec::new(),
        };
        Ok(Normalized {
            matrix: self.with_values(values),
            constant_columns,
        })
    }
}

fn check_unique(kind: &'static str, ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationMode {
    #[serde(rename = "center-columns")]
    Center,
    #[serde(rename = "zscore-columns")]
    Zscore,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mode: NormalizationMode,
    /// 0 for population variance, 1 for sample variance.
    pub ddof: u8,
}

impl NormalizationSpec {
    pub fn center() -> Self {
        Self {
            mode: NormalizationMode::Center,
            ddof: 0,
        }
    }

    pub fn zscore() -> Self {
        Self {
            mode: NormalizationMode::Zscore,
            ddof: 0,
        }
    }

    pub fn none() -> Self {
        Self {
            mode: NormalizationMode::None,
            ddof: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ddof > 1 {
            return Err(Error::invalid(format!("ddof must be 0 or 1, got {}", self.ddof)));
        }
        Ok(())
    }
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub matrix: ExpressionMatrix,
    pub constant_columns: Vec<usize>,
}

/// Metadata sidecar written next to an exported matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub n_samples: usize,
    pub n_genes: usize,
    pub label_histogram: BTreeMap<CancerType, usize>,
    pub normalization: NormalizationSpec,
    pub constant_columns: Vec<usize>,
}

impl MatrixMeta {
    pub fn describe(m: &ExpressionMatrix, normalization: NormalizationSpec, constant_columns: &[usize]) -> Self {
        Self {
            n_samples: m.n_samples(),
            n_genes: m.n_genes(),
            label_histogram: m.label_histogram(),
            normalization,
            constant_columns: constant_columns.to_vec(),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads `labels.csv`: `sample_id,class` rows with an optional header.
pub fn load_labels(path: &Path) -> Result<Vec<(String, CancerType)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 2 {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row,
                expected: 2,
                found: rec.len(),
            });
        }
        match rec[1].parse::<CancerType>() {
            Ok(class) => out.push((rec[0].trim().to_string(), class)),
            // Header line.
            Err(_) if row == 0 => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Loads the data/labels CSV pair into a validated matrix.
pub fn load_dataset(data_path: &Path, labels_path: &Path) -> Result<ExpressionMatrix> {
    let labels = load_labels(labels_path)?;
    let mut label_of: HashMap<String, CancerType> = HashMap::with_capacity(labels.len());
    for (id, class) in &labels {
        if label_of.insert(id.clone(), *class).is_some() {
            return Err(Error::DuplicateId {
                kind: "label",
                id: id.clone(),
            });
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(std::io::BufReader::with_capacity(1 << 20, open(data_path)?));
    let mut records = rdr.byte_records();
    let header = match records.next() {
        Some(h) => h.map_err(csv_err(data_path))?,
        None => return Err(Error::Empty(format!("{} has no header", data_path.display()))),
    };
    let width = header.len();
    if width < 2 {
        return Err(Error::Empty(format!("{} has no gene columns", data_path.display())));
    }
    let gene_ids: Vec<String> = header
        .iter()
        .skip(1)
        .map(|f| String::from_utf8_lossy(f).trim().to_string())
        .collect();

    let mut values = Vec::new();
    let mut sample_ids = Vec::new();
    let mut sample_labels = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(csv_err(data_path))?;
        if rec.len() != width {
            return Err(Error::RaggedRow {
                path: data_path.to_path_buf(),
                row,
                expected: width,
                found: rec.len(),
            });
        }
        let id = String::from_utf8_lossy(&rec[0]).trim().to_string();
        let class = *label_of
            .get(&id)
            .ok_or_else(|| Error::UnlabeledSample(id.clone()))?;
        for (column, field) in rec.iter().enumerate().skip(1) {
            let text = std::str::from_utf8(field).unwrap_or("").trim();
            let v: f64 = text.parse().map_err(|_| Error::NonNumeric {
                path: data_path.to_path_buf(),
                row,
                column,
                value: String::from_utf8_lossy(field).into_owned(),
            })?;
            values.push(v);
        }
        sample_ids.push(id);
        sample_labels.push(class);
    }

    if sample_ids.len() < labels.len() {
        let present: HashSet<&str> = sample_ids.iter().map(String::as_str).collect();
        if let Some((id, _)) = labels.iter().find(|(id, _)| !present.contains(id.as_str())) {
            return Err(Error::LabelWithoutData(id.clone()));
        }
    }
    ExpressionMatrix::new(values, sample_ids, gene_ids, sample_labels)
}

/// Writes the canonical CSV pair. Values use shortest round-trip formatting,
/// so re-loading reproduces every value bit for bit.
pub fn write_dataset(m: &ExpressionMatrix, data_path: &Path, labels_path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(data_path).map_err(|e| Error::io(data_path, e))?);
    let io = |e| Error::io(data_path, e);
    for g in m.gene_ids() {
        write!(w, ",{g}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for i in 0..m.n_samples() {
        write!(w, "{}", m.sample_ids()[i]).map_err(io)?;
        for v in m.row(i) {
            write!(w, ",{v:?}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let mut w = BufWriter::new(File::create(labels_path).map_err(|e| Error::io(labels_path, e))?);
    let io = |e| Error::io(labels_path, e);
    writeln!(w, ",Class").map_err(io)?;
    for (id, l) in m.sample_ids().iter().zip(m.labels()) {
        writeln!(w, "{id},{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_meta(meta: &MatrixMeta, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(f, meta)?;
    Ok(())
}
