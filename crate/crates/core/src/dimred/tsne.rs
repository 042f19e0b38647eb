//! Exact t-SNE (all pairs, no tree approximation).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pairwise_sq_dists;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::exprmatrix::ExpressionMatrix;

const EARLY_EXAGGERATION: f64 = 12.0;
const INITIAL_MOMENTUM: f64 = 0.5;
const FINAL_MOMENTUM: f64 = 0.8;
const MIN_GAIN: f64 = 0.01;
const PERPLEXITY_TOL: f64 = 1e-4;
const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub dim: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Defaults to `S / 12` when `None`.
    pub learning_rate: Option<f64>,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            dim: 2,
            perplexity: 30.0,
            iterations: 1000,
            seed: 0,
            learning_rate: None,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TsneResult {
    pub embedding: DMatrix<f64>,
    pub final_kl: f64,
    pub iterations_run: usize,
    /// KL divergence (against the unexaggerated P) after each iteration.
    pub kl_trace: Vec<f64>,
}

pub fn tsne(m: &ExpressionMatrix, params: TsneParams) -> Result<TsneResult> {
    let x = DMatrix::from_row_slice(m.n_samples(), m.n_genes(), m.values());
    tsne_points(&x, params)
}

/// Symmetric joint probabilities `P` (row-major n × n, zero diagonal, sums
/// to 1) from squared distances, with each point's Gaussian bandwidth found
/// by bisection so its conditional distribution has the requested
/// perplexity. A point at zero distance from every other point gets a
/// uniform conditional distribution.
pub fn joint_probabilities(dist2: &DMatrix<f64>, perplexity: f64, exec: Exec) -> Vec<f64> {
    let n = dist2.nrows();
    let target = perplexity.ln();
    let rows = exec.map(n, |i| conditional_row(dist2, i, target));
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (rows[i][j] + rows[j][i]) / denom;
            }
        }
    }
    p
}

fn conditional_row(dist2: &DMatrix<f64>, i: usize, target_entropy: f64) -> Vec<f64> {
    let n = dist2.nrows();
    let mut row = vec![0.0; n];
    if n < 2 {
        return row;
    }
    let min = (0..n)
        .filter(|&j| j != i)
        .map(|j| dist2[(i, j)])
        .fold(f64::INFINITY, f64::min);
    let max = (0..n)
        .filter(|&j| j != i)
        .map(|j| dist2[(i, j)])
        .fold(0.0, f64::max);
    if max == 0.0 {
        let u = 1.0 / (n - 1) as f64;
        (0..n).filter(|&j| j != i).for_each(|j| row[j] = u);
        return row;
    }
    // Shifting by the nearest distance leaves the normalized row unchanged
    // and keeps at least one term at exp(0).
    let eval = |beta: f64, row: &mut [f64]| -> f64 {
        let mut sum = 0.0;
        let mut wsum = 0.0;
        for j in 0..n {
            if j == i {
                row[j] = 0.0;
                continue;
            }
            let d = dist2[(i, j)] - min;
            let w = (-beta * d).exp();
            row[j] = w;
            sum += w;
            wsum += w * d;
        }
        row.iter_mut().for_each(|v| *v /= sum);
        // H = ln(sum) + beta * E[d]
        sum.ln() + beta * wsum / sum
    };
    let target_perp = target_entropy.exp();
    let mut beta = 1.0 / (max - min).max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..MAX_BISECTION_STEPS {
        let h = eval(beta, &mut row);
        if (h.exp() - target_perp).abs() < PERPLEXITY_TOL {
            break;
        }
        if h > target_entropy {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    row
}

/// Student-t affinities `q_ij` (row-major, zero diagonal, sums to 1) and the
/// unnormalized kernel `1 / (1 + ‖y_i − y_j‖²)`.
pub fn low_dim_affinities(y: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = y.nrows();
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d2 = (y.row(i) - y.row(j)).norm_squared();
            let k = 1.0 / (1.0 + d2);
            num[i * n + j] = k;
            num[j * n + i] = k;
        }
    }
    let z: f64 = num.iter().sum();
    let q = num.iter().map(|k| k / z).collect();
    (q, num)
}

/// `KL(P ‖ Q)` and its gradient with respect to the embedding `y`.
/// `exaggeration` multiplies `P` inside the gradient only.
pub fn kl_divergence_and_gradient(p: &[f64], y: &DMatrix<f64>, exaggeration: f64, exec: Exec) -> (f64, DMatrix<f64>) {
    let (n, dim) = y.shape();
    let (q, num) = low_dim_affinities(y);
    let kl: f64 = p
        .iter()
        .zip(&q)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &qij)| pij * (pij / qij).ln())
        .sum();
    let rows = exec.map(n, |i| {
        let mut g = vec![0.0; dim];
        for j in 0..n {
            if i == j {
                continue;
            }
            let idx = i * n + j;
            let w = (exaggeration * p[idx] - q[idx]) * num[idx];
            for (c, gc) in g.iter_mut().enumerate() {
                *gc += 4.0 * w * (y[(i, c)] - y[(j, c)]);
            }
        }
        g
    });
    let grad = DMatrix::from_fn(n, dim, |i, c| rows[i][c]);
    (kl, grad)
}

/// Exact t-SNE of the rows of `x`.
///
/// Schedule: early exaggeration 12 and momentum 0.5 for the first quarter of
/// the iterations, then no exaggeration and momentum 0.8; per-coordinate
/// adaptive gains; learning rate `S / 12` unless overridden.
pub fn tsne_points(x: &DMatrix<f64>, params: TsneParams) -> Result<TsneResult> {
    let n = x.nrows();
    if !(params.dim == 2 || params.dim == 3) {
        return Err(Error::invalid(format!("embedding dimension must be 2 or 3, got {}", params.dim)));
    }
    if n < 2 {
        return Err(Error::invalid("t-SNE needs at least 2 points"));
    }
    if !(params.perplexity > 1.0 && params.perplexity < n as f64) {
        return Err(Error::invalid(format!(
            "perplexity {} infeasible for {n} points; need 1 < perplexity < {n}",
            params.perplexity
        )));
    }
    if params.iterations == 0 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    let exec = params.exec;
    let dist2 = pairwise_sq_dists(x, exec);
    let p = joint_probabilities(&dist2, params.perplexity, exec);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = Normal::new(0.0, 1e-4).unwrap();
    let mut y = DMatrix::from_fn(n, params.dim, |_, _| init.sample(&mut rng));
    let mut update = DMatrix::<f64>::zeros(n, params.dim);
    let mut gains = DMatrix::from_element(n, params.dim, 1.0);
    let lr = params.learning_rate.unwrap_or(n as f64 / 12.0);
    let switch = params.iterations / 4;

    let mut kl_trace = Vec::with_capacity(params.iterations);
    for it in 0..params.iterations {
        let (exaggeration, momentum) = if it < switch {
            (EARLY_EXAGGERATION, INITIAL_MOMENTUM)
        } else {
            (1.0, FINAL_MOMENTUM)
        };
        let (_, grad) = kl_divergence_and_gradient(&p, &y, exaggeration, exec);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(it + 1));
        }
        for k in 0..grad.len() {
            let same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
            gains[k] = if same_sign { gains[k] * 0.8 } else { gains[k] + 0.2 };
            gains[k] = f64::max(gains[k], MIN_GAIN);
            update[k] = momentum * update[k] - lr * gains[k] * grad[k];
            y[k] += update[k];
        }
        for c in 0..params.dim {
            let mean = y.column(c).mean();
            y.column_mut(c).add_scalar_mut(-mean);
        }
        let (q, _) = low_dim_affinities(&y);
        kl_trace.push(kl(&p, &q));
    }
    Ok(TsneResult {
        final_kl: *kl_trace.last().unwrap(),
        embedding: y,
        iterations_run: params.iterations,
        kl_trace,
    })
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &qij)| pij * (pij / qij).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Mean silhouette coefficient of `labels` over the rows of `y`.
pub fn silhouette(y: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let n = y.nrows();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += (y.row(i) - y.row(j)).norm();
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}
