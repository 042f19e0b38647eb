//! Per-gene multinomial logistic screening against a baseline class.
//!
//! Each gene gets its own model `ln(P(c) / P(baseline)) = β₀_c + β_c·x` for
//! every non-baseline class `c`, fitted by maximum likelihood. The predictor
//! is z-scored before fitting and the coefficients are mapped back to the
//! original scale; Wald statistics are unaffected by the rescaling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::exprmatrix::{CancerType, ExpressionMatrix};
use crate::stats::normal_two_sided_p;

/// Cap on |slope| for the standardized predictor.
pub const BETA_CAP: f64 = 30.0;
/// Largest Newton step accepted as converged.
const STEP_TOL: f64 = 1e-6;
/// Cap on plotted −log10 p.
pub const NEG_LOG10_P_CAP: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenStatus {
    Ok,
    DegenerateConstant,
    SeparatedNonconverged,
}

impl ScreenStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ScreenStatus::Ok => "ok",
            ScreenStatus::DegenerateConstant => "degenerate_constant",
            ScreenStatus::SeparatedNonconverged => "separated_nonconverged",
        }
    }
}

/// One non-baseline class versus the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastFit {
    pub class: CancerType,
    /// Log relative-risk slope per unit of expression; `exp(beta)` is the
    /// relative risk ratio.
    pub beta: f64,
    pub intercept: f64,
    pub std_err: f64,
    pub p_value: f64,
    /// False when the class has no samples; the contrast then reports p = 1.
    pub fitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneScreenResult {
    pub gene_index: usize,
    pub gene_id: String,
    pub baseline: CancerType,
    /// Non-baseline classes in canonical order (always four).
    pub contrasts: Vec<ContrastFit>,
    pub status: ScreenStatus,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl GeneScreenResult {
    pub fn min_p(&self) -> f64 {
        self.contrasts.iter().map(|c| c.p_value).fold(1.0, f64::min)
    }

    pub fn max_p(&self) -> f64 {
        self.contrasts.iter().map(|c| c.p_value).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenOptions {
    pub baseline: CancerType,
    pub max_iter: usize,
    /// Newton stops once the score vector's L∞ norm drops below this.
    pub grad_tol: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        Self {
            baseline: CancerType::BRCA,
            max_iter: 100,
            grad_tol: 1e-8,
            exec: Exec::default(),
        }
    }
}

/// Maximum-likelihood fit of a one-predictor multinomial logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitFit {
    /// Per non-baseline category.
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Standard errors of the slopes from the inverse observed information.
    pub slope_std_err: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// A slope hit [`BETA_CAP`].
    pub capped: bool,
}

/// Log-likelihood, score and observed information at `theta = [a_1..a_J, b_1..b_J]`.
fn logit_terms(x: &[f64], y: &[usize], j: usize, theta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let dim = 2 * j;
    let mut ll = 0.0;
    let mut grad = DVector::zeros(dim);
    let mut info = DMatrix::zeros(dim, dim);
    let mut eta = vec![0.0; j];
    let mut p = vec![0.0; j];
    for (&xi, &yi) in x.iter().zip(y) {
        let mut max = 0.0f64;
        for c in 0..j {
            eta[c] = theta[c] + theta[j + c] * xi;
            max = max.max(eta[c]);
        }
        let mut denom = (-max).exp();
        for c in 0..j {
            p[c] = (eta[c] - max).exp();
            denom += p[c];
        }
        p.iter_mut().for_each(|v| *v /= denom);
        let log_denom = max + denom.ln();
        ll += if yi == 0 { -log_denom } else { eta[yi - 1] - log_denom };
        for c in 0..j {
            let r = f64::from(u8::from(yi == c + 1)) - p[c];
            grad[c] += r;
            grad[j + c] += r * xi;
            for d in 0..j {
                let w = if c == d { p[c] * (1.0 - p[c]) } else { -p[c] * p[d] };
                info[(c, d)] += w;
                info[(c, j + d)] += w * xi;
                info[(j + c, d)] += w * xi;
                info[(j + c, j + d)] += w * xi * xi;
            }
        }
    }
    (ll, grad, info)
}

/// Fits `ln(P(k)/P(0)) = a_k + b_k x` for categories `1..n_categories` by
/// Newton–Raphson with step halving. `y` holds category indices, 0 being
/// the baseline.
pub fn fit_multinomial_logit(x: &[f64], y: &[usize], n_categories: usize, max_iter: usize, grad_tol: f64) -> Result<LogitFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if n_categories < 2 {
        return Err(Error::invalid("need at least two categories"));
    }
    let j = n_categories - 1;
    let mut counts = vec![0usize; n_categories];
    for &c in y {
        if c >= n_categories {
            return Err(Error::invalid(format!("category {c} out of range")));
        }
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::invalid("every category needs at least one sample"));
    }
    let mut theta: Vec<f64> = (0..j)
        .map(|c| (counts[c + 1] as f64 / counts[0] as f64).ln())
        .chain(std::iter::repeat_n(0.0, j))
        .collect();
    let (mut ll, mut grad, mut info) = logit_terms(x, y, j, &theta);
    let mut last_good_info = info.clone();
    let mut converged = false;
    let mut capped = false;
    let mut iterations = 0;
    while let Some(chol) = info.clone().cholesky() {
        last_good_info = info.clone();
        let step = chol.solve(&grad);
        // Under separation the score vanishes while Newton steps stay O(1),
        // so both must be small.
        if grad.amax() < grad_tol && step.amax() < STEP_TOL {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }
        iterations += 1;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let (tll, tgrad, tinfo) = logit_terms(x, y, j, &trial);
            if tll.is_finite() && tll >= ll - 1e-12 * ll.abs().max(1.0) {
                theta = trial;
                ll = tll;
                grad = tgrad;
                info = tinfo;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if theta[j..].iter().any(|b| b.abs() > BETA_CAP) {
            for b in theta[j..].iter_mut() {
                *b = b.clamp(-BETA_CAP, BETA_CAP);
            }
            capped = true;
            let (cll, _, cinfo) = logit_terms(x, y, j, &theta);
            ll = cll;
            info = cinfo;
            break;
        }
    }
    let info_for_se = if info.clone().cholesky().is_some() { &info } else { &last_good_info };
    let slope_std_err = match info_for_se.clone().try_inverse() {
        Some(cov) => (0..j).map(|c| cov[(j + c, j + c)].max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; j],
    };
    Ok(LogitFit {
        intercepts: theta[..j].to_vec(),
        slopes: theta[j..].to_vec(),
        slope_std_err,
        log_likelihood: ll,
        iterations,
        converged,
        capped,
    })
}

/// Class encoding shared by every gene of one screen.
struct Design {
    baseline: CancerType,
    /// Category index per sample (0 = baseline).
    y: Vec<usize>,
    /// Non-baseline classes present, category `k` ↔ `present[k - 1]`.
    present: Vec<CancerType>,
}

impl Design {
    fn new(m: &ExpressionMatrix, baseline: CancerType) -> Result<Self> {
        let classes = m.classes();
        if !classes.contains(&baseline) {
            return Err(Error::invalid(format!("baseline {baseline} has no samples")));
        }
        if classes.len() < 2 {
            return Err(Error::invalid("screening needs at least two classes"));
        }
        let present: Vec<CancerType> = classes.into_iter().filter(|&c| c != baseline).collect();
        let y = m
            .labels()
            .iter()
            .map(|l| {
                if *l == baseline {
                    0
                } else {
                    1 + present.iter().position(|c| c == l).unwrap()
                }
            })
            .collect();
        Ok(Self { baseline, y, present })
    }

    fn screen(&self, m: &ExpressionMatrix, gene: usize, opts: &ScreenOptions) -> Result<GeneScreenResult> {
        let x = m.column(gene);
        let others: Vec<CancerType> = CancerType::ALL.into_iter().filter(|&c| c != self.baseline).collect();
        let unfitted = |class| ContrastFit {
            class,
            beta: f64::NAN,
            intercept: f64::NAN,
            std_err: f64::NAN,
            p_value: 1.0,
            fitted: false,
        };
        let mean = crate::stats::mean(&x);
        let sd = crate::stats::variance(&x, 0).sqrt();
        let constant = x.iter().all(|&v| v == x[0]) || sd == 0.0;
        let mut result = GeneScreenResult {
            gene_index: gene,
            gene_id: m.gene_ids()[gene].clone(),
            baseline: self.baseline,
            contrasts: others.iter().map(|&c| unfitted(c)).collect(),
            status: ScreenStatus::DegenerateConstant,
            iterations: 0,
            log_likelihood: f64::NAN,
        };
        if constant {
            return Ok(result);
        }
        let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
        let fit = fit_multinomial_logit(&z, &self.y, self.present.len() + 1, opts.max_iter, opts.grad_tol)?;
        for (k, class) in self.present.iter().enumerate() {
            let slot = others.iter().position(|c| c == class).unwrap();
            let (a, b, se) = (fit.intercepts[k], fit.slopes[k], fit.slope_std_err[k]);
            let wald = b / se;
            result.contrasts[slot] = ContrastFit {
                class: *class,
                beta: b / sd,
                intercept: a - b * mean / sd,
                std_err: se / sd,
                p_value: if se.is_finite() && se > 0.0 { normal_two_sided_p(wald) } else { 1.0 },
                fitted: true,
            };
        }
        result.status = if fit.converged && !fit.capped {
            ScreenStatus::Ok
        } else {
            ScreenStatus::SeparatedNonconverged
        };
        result.iterations = fit.iterations;
        result.log_likelihood = fit.log_likelihood;
        Ok(result)
    }
}

pub fn screen_gene(m: &ExpressionMatrix, gene_index: usize, opts: ScreenOptions) -> Result<GeneScreenResult> {
    if gene_index >= m.n_genes() {
        return Err(Error::invalid(format!("gene index {gene_index} out of range")));
    }
    Design::new(m, opts.baseline)?.screen(m, gene_index, &opts)
}

/// Screens every gene; results are in gene order regardless of scheduling.
pub fn screen_all(m: &ExpressionMatrix, opts: ScreenOptions) -> Result<Vec<GeneScreenResult>> {
    let design = Design::new(m, opts.baseline)?;
    opts.exec.map(m.n_genes(), |g| design.screen(m, g, &opts)).into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Keep a gene if any contrast has p < alpha.
    AnyContrast,
    /// Keep a gene only if every contrast has p < alpha.
    AllContrasts,
}

impl SelectionRule {
    pub fn describe(self) -> &'static str {
        match self {
            SelectionRule::AnyContrast => "min over contrasts of p < alpha",
            SelectionRule::AllContrasts => "max over contrasts of p < alpha",
        }
    }
}

impl std::str::FromStr for SelectionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" | "any_contrast" | "any-contrast" => Ok(SelectionRule::AnyContrast),
            "all" | "all_contrasts" | "all-contrasts" => Ok(SelectionRule::AllContrasts),
            _ => Err(Error::invalid(format!("unknown selection rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManhattanPoint {
    pub contrast: CancerType,
    pub gene_position: usize,
    pub gene_id: String,
    pub neg_log10_p: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub alpha: f64,
    pub rule: SelectionRule,
    pub rule_description: String,
    pub test_reference: String,
    pub selected_gene_ids: Vec<String>,
    pub selected_indices: Vec<usize>,
    pub manhattan: Vec<ManhattanPoint>,
}

impl SelectionReport {
    pub fn threshold(&self) -> f64 {
        -self.alpha.log10()
    }
}

fn neg_log10(p: f64) -> f64 {
    if p <= 0.0 {
        NEG_LOG10_P_CAP
    } else {
        (-p.log10()).min(NEG_LOG10_P_CAP)
    }
}

pub fn select_genes(results: &[GeneScreenResult], alpha: f64, rule: SelectionRule) -> Result<SelectionReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let mut selected_gene_ids = Vec::new();
    let mut selected_indices = Vec::new();
    let mut manhattan = Vec::with_capacity(results.len() * 4);
    for r in results {
        let keep = match rule {
            SelectionRule::AnyContrast => r.min_p() < alpha,
            SelectionRule::AllContrasts => r.max_p() < alpha,
        };
        if keep {
            selected_gene_ids.push(r.gene_id.clone());
            selected_indices.push(r.gene_index);
        }
        for c in &r.contrasts {
            manhattan.push(ManhattanPoint {
                contrast: c.class,
                gene_position: r.gene_index,
                gene_id: r.gene_id.clone(),
                neg_log10_p: neg_log10(c.p_value),
                selected: keep,
            });
        }
    }
    Ok(SelectionReport {
        alpha,
        rule,
        rule_description: rule.describe().to_string(),
        test_reference: "two-sided Wald z against the standard normal".to_string(),
        selected_gene_ids,
        selected_indices,
        manhattan,
    })
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v:?}")
    }
}

/// One row per gene × contrast.
pub fn write_results_csv(results: &[GeneScreenResult], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "gene_index,gene_id,baseline,contrast,beta,intercept,std_err,p_value,fitted,status").map_err(io)?;
    for r in results {
        for c in &r.contrasts {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.gene_index,
                r.gene_id,
                r.baseline,
                c.class,
                fmt_float(c.beta),
                fmt_float(c.intercept),
                fmt_float(c.std_err),
                fmt_float(c.p_value),
                c.fitted,
                r.status.as_str()
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Manhattan data: `#`-prefixed metadata lines, then
/// `contrast,gene_position,gene_id,neg_log10_p,selected`.
pub fn manhattan_export(report: &SelectionReport, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "# alpha={:?}", report.alpha).map_err(io)?;
    writeln!(w, "# threshold_neg_log10_p={:?}", report.threshold()).map_err(io)?;
    writeln!(w, "# rule={}", serde_json::to_value(report.rule)?.as_str().unwrap_or("")).map_err(io)?;
    writeln!(w, "contrast,gene_position,gene_id,neg_log10_p,selected").map_err(io)?;
    for p in &report.manhattan {
        writeln!(
            w,
            "{},{},{},{:?},{}",
            p.contrast,
            p.gene_position,
            p.gene_id,
            p.neg_log10_p,
            u8::from(p.selected)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanTable {
    pub alpha: f64,
    pub threshold: f64,
    pub rule: SelectionRule,
    pub points: Vec<ManhattanPoint>,
}

pub fn manhattan_import(path: &Path) -> Result<ManhattanTable> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut alpha = None;
    let mut threshold = None;
    let mut rule = None;
    let mut points = Vec::new();
    let bad = |what: &str| Error::invalid(format!("{}: malformed {what}", path.display()));
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(meta) = line.strip_prefix("# ") {
            let (k, v) = meta.split_once('=').ok_or_else(|| bad("metadata"))?;
            match k {
                "alpha" => alpha = v.parse().ok(),
                "threshold_neg_log10_p" => threshold = v.parse().ok(),
                "rule" => rule = v.parse().ok(),
                _ => {}
            }
            continue;
        }
        if line.starts_with("contrast,") || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row: i,
                expected: 5,
                found: f.len(),
            });
        }
        points.push(ManhattanPoint {
            contrast: f[0].parse()?,
            gene_position: f[1].parse().map_err(|_| bad("gene position"))?,
            gene_id: f[2].to_string(),
            neg_log10_p: f[3].parse().map_err(|_| bad("-log10 p"))?,
            selected: f[4] == "1",
        });
    }
    Ok(ManhattanTable {
        alpha: alpha.ok_or_else(|| bad("alpha"))?,
        threshold: threshold.ok_or_else(|| bad("threshold"))?,
        rule: rule.ok_or_else(|| bad("rule"))?,
        points,
    })
}
