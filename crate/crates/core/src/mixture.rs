//! Gaussian mixtures with axis-aligned covariances, fitted by EM.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprmatrix::CancerType;
use crate::stats::log_sum_exp;

/// Variances never drop below this fraction of the per-axis data variance.
pub const VARIANCE_FLOOR_FRACTION: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Independent initializations; restart `r` is seeded with `seed + r`.
    pub restarts: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            max_iter: 500,
            tol: 1e-8,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// K rows of length d.
    pub means: Vec<Vec<f64>>,
    /// Diagonal covariances, K rows of length d.
    pub variances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Seed of the restart that produced this model.
    pub seed: u64,
    /// Log-likelihood after each E-step of the winning restart.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// `ln(π_k) + ln N(x; μ_k, diag σ²_k)`.
    fn log_joint(&self, x: &[f64], k: usize) -> f64 {
        let mut acc = self.weights[k].ln();
        for ((xi, mu), var) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            let d = xi - mu;
            acc -= 0.5 * (LN_2PI + var.ln() + d * d / var);
        }
        acc
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: &[f64]) -> f64 {
        let lj: Vec<f64> = (0..self.k()).map(|k| self.log_joint(x, k)).collect();
        log_sum_exp(&lj).exp()
    }

    pub fn log_likelihood_of(&self, points: &DMatrix<f64>) -> f64 {
        let mut lj = vec![0.0; self.k()];
        (0..points.nrows())
            .map(|i| {
                let x = row(points, i);
                for (k, v) in lj.iter_mut().enumerate() {
                    *v = self.log_joint(&x, k);
                }
                log_sum_exp(&lj)
            })
            .sum()
    }
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Posterior component probabilities, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(pub DMatrix<f64>);

/// Evaluates responsibilities in log space.
pub fn responsibilities(model: &GmmModel, points: &DMatrix<f64>) -> Result<Responsibilities> {
    if points.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: points.ncols(),
        });
    }
    let (n, k) = (points.nrows(), model.k());
    let mut out = DMatrix::zeros(n, k);
    let mut lj = vec![0.0; k];
    for i in 0..n {
        let x = row(points, i);
        for (c, v) in lj.iter_mut().enumerate() {
            *v = model.log_joint(&x, c);
        }
        let lse = log_sum_exp(&lj);
        for c in 0..k {
            out[(i, c)] = (lj[c] - lse).exp();
        }
    }
    Ok(Responsibilities(out))
}

/// Fits a diagonal-covariance mixture, keeping the best of `restarts` runs.
///
/// Points are put into lexicographic order before seeding, so the fit does
/// not depend on input row order.
pub fn fit_gmm(points: &DMatrix<f64>, opts: GmmOptions) -> Result<GmmModel> {
    let (n, d) = points.shape();
    if n == 0 || d == 0 {
        return Err(Error::Empty("no points to fit".into()));
    }
    if opts.k == 0 || opts.k > n {
        return Err(Error::invalid(format!("K = {} must lie in 1..={n}", opts.k)));
    }
    if opts.restarts == 0 || opts.max_iter == 0 {
        return Err(Error::invalid("restarts and max_iter must be at least 1"));
    }
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| row(points, i)).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let floor: Vec<f64> = (0..d)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let v = crate::stats::variance(&col, 0);
            (VARIANCE_FLOOR_FRACTION * v).max(f64::MIN_POSITIVE)
        })
        .collect();

    let mut best: Option<GmmModel> = None;
    for r in 0..opts.restarts {
        let seed = opts.seed.wrapping_add(r as u64);
        let model = fit_once(&rows, opts, seed, &floor);
        if best.as_ref().is_none_or(|b| model.log_likelihood > b.log_likelihood) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a single assignment pass.
fn initialize(rows: &[Vec<f64>], k: usize, seed: u64, floor: &[f64]) -> GmmModel {
    let n = rows.len();
    let d = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (i, r) in rows.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(r, &centers[centers.len() - 1]));
        }
    }

    let assign: Vec<usize> = rows
        .iter()
        .map(|r| {
            (0..k)
                .min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b])))
                .unwrap()
        })
        .collect();
    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut variances = vec![vec![0.0; d]; k];
    for (r, &c) in rows.iter().zip(&assign) {
        weights[c] += 1.0;
        means[c].iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    for c in 0..k {
        if weights[c] > 0.0 {
            means[c].iter_mut().for_each(|m| *m /= weights[c]);
        } else {
            means[c] = centers[c].clone();
        }
    }
    for (r, &c) in rows.iter().zip(&assign) {
        for j in 0..d {
            let dd = r[j] - means[c][j];
            variances[c][j] += dd * dd;
        }
    }
    for c in 0..k {
        for j in 0..d {
            let v = if weights[c] > 0.0 { variances[c][j] / weights[c] } else { 0.0 };
            variances[c][j] = v.max(floor[j]);
        }
        // Empty clusters keep a small nonzero weight until the first M-step.
        weights[c] = weights[c].max(1.0) / n as f64;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmModel {
        weights,
        means,
        variances,
        log_likelihood: f64::NEG_INFINITY,
        iterations: 0,
        converged: false,
        seed,
        log_likelihood_trace: Vec::new(),
    }
}

fn fit_once(rows: &[Vec<f64>], opts: GmmOptions, seed: u64, floor: &[f64]) -> GmmModel {
    let (n, d, k) = (rows.len(), rows[0].len(), opts.k);
    let mut model = initialize(rows, k, seed, floor);
    let mut resp = vec![vec![0.0; k]; n];
    let mut lj = vec![0.0; k];
    let mut prev = f64::NEG_INFINITY;
    for iter in 0..opts.max_iter {
        // E-step.
        let mut ll = 0.0;
        for (x, rr) in rows.iter().zip(resp.iter_mut()) {
            for (c, v) in lj.iter_mut().enumerate() {
                *v = model.log_joint(x, c);
            }
            let lse = log_sum_exp(&lj);
            ll += lse;
            for c in 0..k {
                rr[c] = (lj[c] - lse).exp();
            }
        }
        model.log_likelihood = ll;
        model.log_likelihood_trace.push(ll);
        model.iterations = iter + 1;
        if ll - prev < opts.tol && iter > 0 {
            model.converged = true;
            break;
        }
        prev = ll;

        // M-step.
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk <= f64::MIN_POSITIVE {
                model.weights[c] = 0.0;
                continue;
            }
            model.weights[c] = nk / n as f64;
            for j in 0..d {
                let mu = rows.iter().zip(&resp).map(|(x, r)| r[c] * x[j]).sum::<f64>() / nk;
                let var = rows
                    .iter()
                    .zip(&resp)
                    .map(|(x, r)| r[c] * (x[j] - mu) * (x[j] - mu))
                    .sum::<f64>()
                    / nk;
                model.means[c][j] = mu;
                model.variances[c][j] = var.max(floor[j]);
            }
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    if !model.converged {
        // The last M-step moved the parameters past the recorded E-step.
        let ll: f64 = rows
            .iter()
            .map(|x| {
                for (c, v) in lj.iter_mut().enumerate() {
                    *v = model.log_joint(x, c);
                }
                log_sum_exp(&lj)
            })
            .sum();
        model.log_likelihood = ll;
        model.log_likelihood_trace.push(ll);
    }
    model
}

/// Assigns each component a distinct label, maximizing the total
/// responsibility mass each component places on samples of its label.
/// Returns `mapping[component] = label`.
pub fn match_components(model: &GmmModel, labels: &[CancerType], points: &DMatrix<f64>) -> Result<Vec<CancerType>> {
    if labels.len() != points.nrows() {
        return Err(Error::DimensionMismatch {
            expected: points.nrows(),
            found: labels.len(),
        });
    }
    let mut classes: Vec<CancerType> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let k = model.k();
    if classes.len() != k {
        return Err(Error::invalid(format!(
            "{k} components but {} distinct labels",
            classes.len()
        )));
    }
    if k > 20 {
        return Err(Error::invalid("component matching supports at most 20 components"));
    }
    let resp = responsibilities(model, points)?.0;
    let mut mass = vec![vec![0.0; k]; k];
    for (i, l) in labels.iter().enumerate() {
        let c = classes.binary_search(l).unwrap();
        for comp in 0..k {
            mass[comp][c] += resp[(i, comp)];
        }
    }
    let assignment = max_weight_assignment(&mass);
    Ok(assignment.into_iter().map(|c| classes[c]).collect())
}

/// Exact maximum-weight perfect matching by DP over label subsets.
/// `w[row][col]`; returns the column for each row. Ties resolve to the
/// lexicographically smallest assignment.
fn max_weight_assignment(w: &[Vec<f64>]) -> Vec<usize> {
    let k = w.len();
    let full = 1usize << k;
    // best[mask]: optimal value assigning the last (k - popcount) rows given used columns `mask`.
    let mut best = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[full - 1] = 0.0;
    for mask in (0..full - 1).rev() {
        let r = mask.count_ones() as usize;
        for c in 0..k {
            if mask & (1 << c) == 0 {
                let v = w[r][c] + best[mask | (1 << c)];
                if v > best[mask] {
                    best[mask] = v;
                    choice[mask] = c;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(k);
    let mut mask = 0;
    for _ in 0..k {
        let c = choice[mask];
        out.push(c);
        mask |= 1 << c;
    }
    out
}
