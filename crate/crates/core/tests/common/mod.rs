//! Independent reference implementations shared by the oracle and acceptance
//! suites. Nothing here calls into the library's numerical kernels.
#![allow(dead_code)]

use std::path::PathBuf;

use coexpr::centrality::{self, Sampling};
use coexpr::dimred::{joint_probabilities, kl_divergence_and_gradient, pairwise_sq_dists};
use coexpr::genesel::{screen_gene, ScreenOptions};
use coexpr::mixture::{fit_gmm, GmmOptions};
use coexpr::netbuild::{build_graph_blocked, correlation_matrix, fisher_transform, Axis, BlockedOptions, EdgeRule, SparseGraph};
use coexpr::{CancerType, Exec, ExpressionMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Outcome of one oracle comparison.
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

// ---------------------------------------------------------------------------
// Graphs

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SparseGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    SparseGraph::from_edges(n, edges).unwrap()
}

pub fn dense_adjacency(g: &SparseGraph) -> DMatrix<f64> {
    let n = g.n_nodes();
    let mut a = DMatrix::zeros(n, n);
    for &(u, v) in g.edges() {
        a[(u, v)] = 1.0;
        a[(v, u)] = 1.0;
    }
    a
}

/// Largest component by union-find; ties to the component holding the
/// smallest node index.
fn oracle_lcc(a: &DMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for u in 0..n {
        for v in u + 1..n {
            if a[(u, v)] != 0.0 {
                let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                parent[ru.max(rv)] = ru.min(rv);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|v| find(&mut parent, v)).collect();
    let mut best: Option<(usize, usize)> = None;
    for r in 0..n {
        let size = roots.iter().filter(|&&x| x == r).count();
        if size > 0 && best.is_none_or(|(s, _)| size > s) {
            best = Some((size, r));
        }
    }
    best.map(|(_, r)| (0..n).filter(|&v| roots[v] == r).collect()).unwrap_or_default()
}

pub fn oracle_eigenvector(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let lcc = oracle_lcc(a);
    let m = lcc.len();
    let sub = DMatrix::from_fn(m, m, |i, j| a[(lcc[i], lcc[j])]);
    let eig = sub.symmetric_eigen();
    let top = (0..m).max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])).unwrap();
    let v = eig.eigenvectors.column(top);
    let norm = v.norm();
    let mut out = vec![0.0; n];
    for (k, &node) in lcc.iter().enumerate() {
        out[node] = v[k].abs() / norm;
    }
    out
}

/// Solves the PageRank fixed point directly, with isolated-node mass spread
/// uniformly.
pub fn oracle_pagerank(a: &DMatrix<f64>, d: f64) -> Vec<f64> {
    let n = a.nrows();
    let nf = n as f64;
    let deg: Vec<f64> = (0..n).map(|j| a.column(j).sum()).collect();
    let mut t = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            t[(i, j)] = if deg[j] > 0.0 { a[(i, j)] / deg[j] } else { 1.0 / nf };
        }
    }
    let lhs = DMatrix::identity(n, n) - t * d;
    let rhs = DVector::from_element(n, (1.0 - d) / nf);
    lhs.lu().solve(&rhs).unwrap().iter().copied().collect()
}

/// Shortest-path counts from Floyd–Warshall, then pair-by-pair dependency
/// sums. Returns betweenness with each unordered pair counted once.
pub fn oracle_betweenness(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    const INF: u64 = u64::MAX / 4;
    let mut dist = vec![vec![INF; n]; n];
    let mut count = vec![vec![0u128; n]; n];
    for i in 0..n {
        dist[i][i] = 0;
        count[i][i] = 1;
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                dist[i][j] = 1;
                count[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if dist[i][k] == INF || dist[k][j] == INF {
                    continue;
                }
                let through = dist[i][k] + dist[k][j];
                if through < dist[i][j] {
                    dist[i][j] = through;
                }
            }
        }
    }
    // Path counts by increasing distance: σ(s,t) = Σ over neighbours w of t
    // one step closer to s of σ(s,w).
    let mut by_dist: Vec<(u64, usize, usize)> = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s != t && dist[s][t] < INF {
                by_dist.push((dist[s][t], s, t));
            }
        }
    }
    by_dist.sort();
    for &(dst, s, t) in &by_dist {
        if dst == 1 {
            continue;
        }
        count[s][t] = (0..n)
            .filter(|&w| a[(w, t)] != 0.0 && dist[s][w] + 1 == dst)
            .map(|w| count[s][w])
            .sum();
    }
    let mut bc = vec![0.0; n];
    for s in 0..n {
        for t in s + 1..n {
            if dist[s][t] >= INF {
                continue;
            }
            for v in 0..n {
                if v == s || v == t || dist[s][v] >= INF || dist[v][t] >= INF {
                    continue;
                }
                if dist[s][v] + dist[v][t] == dist[s][t] {
                    bc[v] += (count[s][v] * count[v][t]) as f64 / count[s][t] as f64;
                }
            }
        }
    }
    bc
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Degree, eigenvector, PageRank and betweenness on 30 random graphs of at
/// most 15 nodes, plus the five-node path.
pub fn centrality_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3A7);
    let mut worst = [0.0f64; 4];
    let mut failures = Vec::new();
    for trial in 0..30 {
        let n = rng.random_range(2..=15);
        let p = rng.random_range(0.1..0.6);
        let g = random_graph(&mut rng, n, p);
        let a = dense_adjacency(&g);

        let deg = centrality::degree_centrality(&g).scores;
        let oracle_deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        worst[0] = worst[0].max(max_abs_diff(&deg, &oracle_deg));
        if deg != oracle_deg {
            failures.push(format!("degree on graph {trial}"));
        }

        let eig = centrality::eigenvector_centrality(&g, 1e-13, 1_000_000).unwrap().scores;
        let e = max_abs_diff(&eig, &oracle_eigenvector(&a));
        worst[1] = worst[1].max(e);
        if e > 1e-6 {
            failures.push(format!("eigenvector on graph {trial}: {e:e}"));
        }

        let pr = centrality::pagerank(&g, 0.85, 1e-14, 100_000, Exec::default()).unwrap().scores;
        let e = max_abs_diff(&pr, &oracle_pagerank(&a, 0.85));
        worst[2] = worst[2].max(e);
        if e > 1e-8 {
            failures.push(format!("pagerank on graph {trial}: {e:e}"));
        }

        let bc = centrality::betweenness(&g, Sampling::Exact, Exec::default()).unwrap().scores;
        let e = max_abs_diff(&bc, &oracle_betweenness(&a));
        worst[3] = worst[3].max(e);
        if e > 1e-9 {
            failures.push(format!("betweenness on graph {trial}: {e:e}"));
        }
    }
    let p5 = SparseGraph::from_edges(5, vec![(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
    let p5_bc = centrality::betweenness(&p5, Sampling::Exact, Exec::default()).unwrap().scores;
    if p5_bc != [0.0, 3.0, 4.0, 3.0, 0.0] {
        failures.push(format!("P5 betweenness {p5_bc:?}"));
    }
    Check::new(
        failures.is_empty(),
        format!(
            "30 graphs; max |err| degree {:e}, eigenvector {:e}, pagerank {:e}, betweenness {:e}; P5 {:?}{}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            p5_bc,
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// Statistical kernels

pub fn random_matrix(rng: &mut ChaCha8Rng, samples: usize, genes: usize, labels: Vec<CancerType>) -> ExpressionMatrix {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let values: Vec<f64> = (0..samples * genes).map(|_| normal.sample(rng) * 3.0 + 5.0).collect();
    ExpressionMatrix::new(
        values,
        (0..samples).map(|i| format!("sample_{i}")).collect(),
        (0..genes).map(|j| format!("gene_{j}")).collect(),
        labels,
    )
    .unwrap()
}

fn scalar_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn oracle_fisher_p(rho: f64, n: usize) -> f64 {
    let z = rho.atanh() * ((n as f64) - 3.0).sqrt();
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Correlate → transform → threshold on random 12×8 matrices against a
/// scalar-at-a-time oracle.
pub fn pearson_fisher_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x12_08);
    let mut worst_rho = 0.0f64;
    let mut worst_z = 0.0f64;
    let mut worst_p = 0.0f64;
    let mut edge_mismatch = 0;
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 12, 8, vec![CancerType::LUAD; 12]);
        for axis in [Axis::Genes, Axis::Patients] {
            let opts = BlockedOptions { block: 3, exec: Exec::default() };
            let corr = correlation_matrix(&m, axis, opts).unwrap();
            let vars: Vec<Vec<f64>> = match axis {
                Axis::Genes => (0..m.n_genes()).map(|j| m.column(j)).collect(),
                Axis::Patients => (0..m.n_samples()).map(|i| m.row(i).to_vec()).collect(),
            };
            let n_obs = vars[0].len();
            for rule in [EdgeRule::fisher(0.05), EdgeRule::threshold(0.3)] {
                let mut expected = Vec::new();
                for i in 0..vars.len() {
                    for j in i + 1..vars.len() {
                        let rho = scalar_pearson(&vars[i], &vars[j]);
                        worst_rho = worst_rho.max((rho - corr.get(i, j)).abs());
                        let f = fisher_transform(corr.get(i, j), n_obs).unwrap();
                        worst_z = worst_z.max((f.z - rho.atanh()).abs());
                        let p = oracle_fisher_p(rho, n_obs);
                        worst_p = worst_p.max((f.p - p).abs() / p.max(1e-300));
                        let keep = match rule {
                            EdgeRule::FisherSignificance { alpha, .. } => p < alpha,
                            EdgeRule::HardThreshold { rho_min, .. } => rho > rho_min,
                        };
                        if keep {
                            expected.push((i, j));
                        }
                    }
                }
                let g = build_graph_blocked(&m, axis, rule, opts).unwrap();
                if g.edges() != expected.as_slice() || corr.build_graph(rule).unwrap().edges() != expected.as_slice() {
                    edge_mismatch += 1;
                }
            }
        }
    }
    Check::new(
        worst_rho <= 1e-12 && worst_z <= 1e-10 && worst_p <= 1e-9 && edge_mismatch == 0,
        format!(
            "20 matrices × 2 axes × 2 rules; max |Δρ| {worst_rho:e}, |Δz| {worst_z:e}, rel Δp {worst_p:e}, edge-set mismatches {edge_mismatch}"
        ),
    )
}

/// EM log-likelihood never decreases (up to rounding) on 50 random instances.
pub fn em_monotone_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE3);
    let mut worst_drop = 0.0f64;
    let mut violations = 0;
    for inst in 0..50 {
        let n = rng.random_range(40..150);
        let d = rng.random_range(1..4);
        let k = rng.random_range(1..5);
        let centres: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let pts = DMatrix::from_fn(n, d, |i, j| centres[i % 3][j] + normal.sample(&mut rng) * (1.0 + j as f64));
        let model = fit_gmm(
            &pts,
            GmmOptions {
                k,
                seed: inst,
                max_iter: 300,
                tol: 0.0,
                restarts: 1,
            },
        )
        .unwrap();
        for w in model.log_likelihood_trace.windows(2) {
            let drop = w[0] - w[1];
            let slack = 1e-10 * (1.0 + w[0].abs());
            worst_drop = worst_drop.max(drop);
            if drop > slack {
                violations += 1;
            }
        }
    }
    Check::new(
        violations == 0,
        format!("50 instances; largest single-step decrease {worst_drop:e} (slack 1e-10·(1+|LL|)); violations {violations}"),
    )
}

/// Analytic t-SNE gradient versus central finite differences of the KL.
pub fn tsne_gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x75E);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = DMatrix::from_fn(10, 5, |_, _| normal.sample(&mut rng));
    let p = joint_probabilities(&pairwise_sq_dists(&x, Exec::Sequential), 3.0, Exec::Sequential);
    let y = DMatrix::from_fn(10, 2, |_, _| normal.sample(&mut rng));
    let (_, grad) = kl_divergence_and_gradient(&p, &y, 1.0, Exec::Sequential);
    let h = 1e-6;
    let mut fd = DMatrix::zeros(10, 2);
    for i in 0..10 {
        for c in 0..2 {
            let mut plus = y.clone();
            plus[(i, c)] += h;
            let mut minus = y.clone();
            minus[(i, c)] -= h;
            let kp = kl_divergence_and_gradient(&p, &plus, 1.0, Exec::Sequential).0;
            let km = kl_divergence_and_gradient(&p, &minus, 1.0, Exec::Sequential).0;
            fd[(i, c)] = (kp - km) / (2.0 * h);
        }
    }
    let rel = (&grad - &fd).amax() / grad.amax();
    Check::new(rel <= 1e-4, format!("10 points; max |analytic − FD| / max |analytic| = {rel:e}"))
}

/// Negative multinomial log-likelihood and gradient on the raw predictor,
/// parameters `[a_1..a_J, b_1..b_J]`.
fn neg_loglik(theta: &[f64], x: &[f64], y: &[usize], j: usize) -> (f64, Vec<f64>) {
    let mut f = 0.0;
    let mut g = vec![0.0; 2 * j];
    for (&xi, &yi) in x.iter().zip(y) {
        let mut eta = vec![0.0; j + 1];
        for c in 0..j {
            eta[c + 1] = theta[c] + theta[j + c] * xi;
        }
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = eta.iter().map(|e| (e - m).exp()).sum();
        let lse = m + z.ln();
        f -= eta[yi] - lse;
        for c in 0..j {
            let p = (eta[c + 1] - lse).exp();
            let r = p - if yi == c + 1 { 1.0 } else { 0.0 };
            g[c] += r;
            g[j + c] += r * xi;
        }
    }
    (f, g)
}

/// Plain BFGS with Armijo backtracking.
pub fn bfgs_maximize_logit(x: &[f64], y: &[usize], j: usize) -> Vec<f64> {
    let dim = 2 * j;
    let mut theta = vec![0.0; dim];
    let (mut f, mut g) = neg_loglik(&theta, x, y, j);
    let mut h = DMatrix::<f64>::identity(dim, dim);
    for _ in 0..5000 {
        let gv = DVector::from_vec(g.clone());
        if gv.amax() < 1e-11 {
            break;
        }
        let dir = -(&h * &gv);
        let slope = dir.dot(&gv);
        let dir = if slope >= 0.0 { -gv.clone() } else { dir };
        let slope = dir.dot(&gv);
        let mut t = 1.0;
        let (new_theta, nf, ng) = loop {
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            let (cf, cg) = neg_loglik(&cand, x, y, j);
            if cf <= f + 1e-4 * t * slope || t < 1e-20 {
                break (cand, cf, cg);
            }
            t *= 0.5;
        };
        let s = DVector::from_iterator(dim, new_theta.iter().zip(&theta).map(|(a, b)| a - b));
        let yv = DVector::from_vec(ng.clone()) - &gv;
        let sy = s.dot(&yv);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(dim, dim);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        theta = new_theta;
        f = nf;
        g = ng;
    }
    theta
}

/// Library screening versus BFGS on 5-class synthetic genes of 50 samples.
pub fn logit_oracle_suite() -> Check {
    let mut worst = 0.0f64;
    let shifts = [0.0, 0.8, -0.6, 1.2, 0.4];
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x10_61 + seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let labels: Vec<CancerType> = (0..50).map(|i| CancerType::ALL[i % 5]).collect();
        let x: Vec<f64> = labels
            .iter()
            .map(|l| 2.0 + 0.7 * (normal.sample(&mut rng) + shifts[l.index()]))
            .collect();
        let m = ExpressionMatrix::new(
            x.clone(),
            (0..50).map(|i| format!("s{i}")).collect(),
            vec!["gene".into()],
            labels.clone(),
        )
        .unwrap();
        let r = screen_gene(&m, 0, ScreenOptions::default()).unwrap();
        // Category 0 is BRCA; the others follow canonical order.
        let y: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        let theta = bfgs_maximize_logit(&x, &y, 4);
        for (k, c) in r.contrasts.iter().enumerate() {
            worst = worst.max((c.intercept - theta[k]).abs()).max((c.beta - theta[4 + k]).abs());
        }
    }
    Check::new(worst <= 1e-5, format!("5 data sets; max |Δcoef| vs BFGS {worst:e}"))
}

// ---------------------------------------------------------------------------
// Dataset access

/// Directory holding `data.csv` and `labels.csv`, from `COEXPR_DATA_DIR`.
pub fn data_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("COEXPR_DATA_DIR")?);
    (dir.join("data.csv").is_file() && dir.join("labels.csv").is_file()).then_some(dir)
}

pub fn load_panel() -> Result<ExpressionMatrix, String> {
    let dir = data_dir().ok_or_else(|| {
        "dataset unavailable: set COEXPR_DATA_DIR to the directory holding data.csv and labels.csv".to_string()
    })?;
    coexpr::exprmatrix::load_dataset(&dir.join("data.csv"), &dir.join("labels.csv")).map_err(|e| e.to_string())
}
