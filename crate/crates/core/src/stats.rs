//! Small numeric helpers shared across modules.

use libm::erfc;

/// Two-sided standard normal tail probability `P(|Z| >= |z|)`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return 1.0;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Variance with `ddof` degrees of freedom removed from the denominator.
pub fn variance(xs: &[f64], ddof: usize) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - ddof) as f64
}

/// Adjusted Rand index from a contingency table of counts.
pub fn adjusted_rand_index(table: &[Vec<u64>]) -> f64 {
    let comb2 = |n: u64| (n as f64) * (n as f64 - 1.0) / 2.0;
    let n: u64 = table.iter().flatten().sum();
    let index: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let rows: f64 = table.iter().map(|r| comb2(r.iter().sum())).sum();
    let n_cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let cols: f64 = (0..n_cols)
        .map(|j| comb2(table.iter().map(|r| r.get(j).copied().unwrap_or(0)).sum()))
        .sum();
    let total = comb2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < f64::EPSILON * max.max(1.0) {
        // Both partitions trivial (all-singletons or a single block): identical structure.
        return 1.0;
    }
    (index - expected) / (max - expected)
}
