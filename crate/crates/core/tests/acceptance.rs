//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 4 and 5 need no data. Criteria 1, 2, 3 and 6 read the UCI
//! pan-cancer panel from `COEXPR_DATA_DIR` (a directory with `data.csv` and
//! `labels.csv`) and fail when it is absent. Criterion 7 is excluded from
//! quantitative acceptance; with data present it writes the ranked tables
//! under the test scratch directory for inspection.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use coexpr::centrality::{self, Sampling};
use coexpr::dimred::pca;
use coexpr::exprmatrix::NormalizationSpec;
use coexpr::genesel::{screen_all, select_genes, ScreenOptions, SelectionRule};
use coexpr::mixture::{fit_gmm, match_components, GmmOptions};
use coexpr::netbuild::{build_graph_blocked, Axis, BlockedOptions, EdgeRule, SparseGraph};
use coexpr::{CancerType, Exec, ExpressionMatrix};
use CancerType::*;

use common::Check;

/// (class, non-isolated nodes, edges, average degree) as printed.
const PUBLISHED_NETWORKS: [(CancerType, usize, usize, f64); 5] = [
    (BRCA, 20_259, 43_475, 4.28),
    (KIRC, 20_262, 70_219, 6.93),
    (LUAD, 20_251, 58_963, 5.82),
    (COAD, 20_227, 201_408, 19.91),
    (PRAD, 20_252, 171_008, 16.89),
];
const PUBLISHED_ORDER: [CancerType; 5] = [LUAD, PRAD, KIRC, COAD, BRCA];
const PUBLISHED_WEIGHTS: [f64; 5] = [0.23, 0.16, 0.18, 0.08, 0.35];
const TRUE_PROPORTIONS: [f64; 5] = [0.18, 0.17, 0.18, 0.10, 0.37];
/// Fitted means on (PC1, PC2), same order.
const PUBLISHED_MEANS: [[f64; 2]; 5] = [[-1.60, 51.24], [-54.91, -100.11], [151.45, -23.29], [-19.50, 120.05], [-47.47, -1.81]];
const SCREEN_TARGET: f64 = 1075.0;
const BUDGET_SECS: f64 = 600.0;

fn gene_networks(m: &ExpressionMatrix) -> Result<(Vec<(CancerType, SparseGraph)>, f64), String> {
    let start = Instant::now();
    let mut out = Vec::new();
    for class in CancerType::ALL {
        let sub = m.subset_by_label(class).map_err(|e| e.to_string())?;
        let g = build_graph_blocked(&sub, Axis::Genes, EdgeRule::threshold(0.8), BlockedOptions::default())
            .map_err(|e| e.to_string())?;
        out.push((class, g));
    }
    Ok((out, start.elapsed().as_secs_f64()))
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

fn criterion_1(nets: &Result<(Vec<(CancerType, SparseGraph)>, f64), String>) -> Check {
    let (nets, secs) = match nets {
        Ok(n) => n,
        Err(e) => return Check { passed: false, detail: e.clone() },
    };
    let mut ok = *secs < BUDGET_SECS;
    let mut parts = Vec::new();
    for (class, g) in nets {
        let (_, nodes, edges, avg) = PUBLISHED_NETWORKS.iter().find(|t| t.0 == *class).copied().unwrap();
        let s = g.stats();
        let good = within(s.n_non_isolated as f64, nodes as f64, 0.02)
            && within(s.n_edges as f64, edges as f64, 0.02)
            && (s.mean_degree_non_isolated - avg).abs() <= 0.1;
        ok &= good;
        parts.push(format!(
            "{class}: {} nodes/{} edges/{:.2} avg ({})",
            s.n_non_isolated,
            s.n_edges,
            s.mean_degree_non_isolated,
            if good { "ok" } else { "off" }
        ));
    }
    Check { passed: ok, detail: format!("{}; {secs:.1} s", parts.join("; ")) }
}

fn criterion_6(nets: &Result<(Vec<(CancerType, SparseGraph)>, f64), String>) -> Check {
    let nets = match nets {
        Ok((n, _)) => n,
        Err(e) => return Check { passed: false, detail: e.clone() },
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (class, g) in nets {
        let s = g.stats();
        let degrees: Vec<usize> = g.degrees().into_iter().filter(|&d| d > 0).collect();
        let low = degrees.iter().filter(|&&d| d as f64 <= s.mean_degree_non_isolated).count();
        let frac = low as f64 / degrees.len().max(1) as f64;
        ok &= frac >= 0.5;
        parts.push(format!("{class} {:.1}%", 100.0 * frac));
    }
    Check { passed: ok, detail: format!("share of non-isolated nodes with degree ≤ average: {}", parts.join(", ")) }
}

fn criterion_2(m: &Result<ExpressionMatrix, String>) -> Check {
    let m = match m {
        Ok(m) => m,
        Err(e) => return Check { passed: false, detail: e.clone() },
    };
    let run = || -> coexpr::Result<Check> {
        let centred = m.normalize(NormalizationSpec::center())?.matrix;
        let p = pca(&centred, 2)?;
        let model = fit_gmm(&p.projected, GmmOptions { k: 5, seed: 0, restarts: 5, ..Default::default() })?;
        let mapping = match_components(&model, m.labels(), &p.projected)?;
        let component_of = |c: CancerType| mapping.iter().position(|&l| l == c).unwrap();
        let weights: Vec<f64> = PUBLISHED_ORDER.iter().map(|&c| model.weights[component_of(c)]).collect();
        let vs_published = weights.iter().zip(PUBLISHED_WEIGHTS).all(|(w, p)| (w - p).abs() <= 0.05);
        let vs_truth = weights.iter().zip(TRUE_PROPORTIONS).all(|(w, p)| (w - p).abs() <= 0.07);
        // Principal axes are defined only up to sign, so each axis may flip.
        // Coordinates within 15 of zero carry no reliable sign.
        let signs_match = [1.0, -1.0].iter().any(|&s1| {
            [1.0, -1.0].iter().any(|&s2| {
                PUBLISHED_ORDER.iter().zip(PUBLISHED_MEANS).all(|(&c, published)| {
                    let mu = &model.means[component_of(c)];
                    [(mu[0] * s1, published[0]), (mu[1] * s2, published[1])]
                        .iter()
                        .all(|&(ours, theirs)| theirs.abs() < 15.0 || ours.signum() == theirs.signum())
                })
            })
        });
        let means: Vec<String> = PUBLISHED_ORDER
            .iter()
            .map(|&c| {
                let mu = &model.means[component_of(c)];
                format!("{c}({:.1},{:.1})", mu[0], mu[1])
            })
            .collect();
        Ok(Check {
            passed: vs_published && vs_truth && signs_match,
            detail: format!(
                "weights [LUAD,PRAD,KIRC,COAD,BRCA] = {:.3?} (vs published {}, vs labels {}); means {} (sign pattern {})",
                weights,
                if vs_published { "ok" } else { "off" },
                if vs_truth { "ok" } else { "off" },
                means.join(" "),
                if signs_match { "ok" } else { "off" }
            ),
        })
    };
    run().unwrap_or_else(|e| Check { passed: false, detail: e.to_string() })
}

fn criterion_3(m: &Result<ExpressionMatrix, String>) -> Check {
    let m = match m {
        Ok(m) => m,
        Err(e) => return Check { passed: false, detail: e.clone() },
    };
    let start = Instant::now();
    let results = match screen_all(m, ScreenOptions::default()) {
        Ok(r) => r,
        Err(e) => return Check { passed: false, detail: e.to_string() },
    };
    let secs = start.elapsed().as_secs_f64();
    let any = select_genes(&results, 0.005, SelectionRule::AnyContrast).unwrap().selected_indices.len();
    let all = select_genes(&results, 0.005, SelectionRule::AllContrasts).unwrap().selected_indices.len();
    let hit = |n: usize| within(n as f64, SCREEN_TARGET, 0.15);
    Check {
        passed: secs < BUDGET_SECS && (hit(any) || hit(all)),
        detail: format!("{} genes screened in {secs:.1} s; selected any-contrast {any}, all-contrasts {all} (target 1075 ± 15%)", results.len()),
    }
}

fn criterion_7(m: &Result<ExpressionMatrix, String>, nets: &Result<(Vec<(CancerType, SparseGraph)>, f64), String>) -> String {
    let (Ok(m), Ok((nets, _))) = (m, nets) else {
        return "excluded from quantitative acceptance; no ranked tables written (dataset unavailable)".into();
    };
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ranked_tables");
    let write = || -> coexpr::Result<()> {
        std::fs::create_dir_all(&out).map_err(|e| coexpr::Error::Io { path: out.clone(), source: e })?;
        for class in CancerType::ALL {
            let sub = m.subset_by_label(class)?;
            let patients = build_graph_blocked(&sub, Axis::Patients, EdgeRule::fisher(0.05), BlockedOptions::default())?;
            let genes = &nets.iter().find(|(c, _)| *c == class).unwrap().1;
            for (kind, g) in [("patients", &patients), ("genes", genes)] {
                let scores = [
                    centrality::degree_centrality(g),
                    centrality::eigenvector_centrality(g, 1e-10, 100_000)?,
                    centrality::pagerank(g, 0.85, 1e-10, 10_000, Exec::default())?,
                    centrality::betweenness(g, Sampling::Exact, Exec::default())?,
                ];
                for s in &scores {
                    let table = centrality::rank_table(s, 10)?;
                    let path = out.join(format!("{class}_{kind}_{}.csv", s.measure.as_str()));
                    centrality::write_ranked_csv(&table, g.node_ids(), &path)?;
                }
            }
        }
        Ok(())
    };
    match write() {
        Ok(()) => format!("excluded from quantitative acceptance; ranked tables written to {}", out.display()),
        Err(e) => format!("excluded from quantitative acceptance; writing ranked tables failed: {e}"),
    }
}

fn report(n: usize, name: &str, c: &Check) -> bool {
    println!("criterion {n} [{}] {name}: {}", if c.passed { "PASS" } else { "FAIL" }, c.detail);
    c.passed
}

fn main() {
    // Honour libtest's filter argument so `cargo test <name>` elsewhere does
    // not trigger the full run.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str()) || a.contains("criterion")) {
        return;
    }
    let panel = common::load_panel();
    let nets = panel.as_ref().map_err(Clone::clone).and_then(gene_networks);

    let mut ok = true;
    ok &= report(1, "gene network statistics", &criterion_1(&nets));
    ok &= report(2, "mixture weights", &criterion_2(&panel));
    ok &= report(3, "gene screening", &criterion_3(&panel));
    ok &= report(4, "centrality oracles", &common::centrality_suite());
    let suite = [
        ("pearson/fisher", common::pearson_fisher_suite()),
        ("em monotone", common::em_monotone_suite()),
        ("t-sne gradient", common::tsne_gradient_check()),
        ("logit vs bfgs", common::logit_oracle_suite()),
    ];
    let five = Check {
        passed: suite.iter().all(|(_, c)| c.passed),
        detail: suite
            .iter()
            .map(|(n, c)| format!("{n}: {} ({})", if c.passed { "ok" } else { "off" }, c.detail))
            .collect::<Vec<_>>()
            .join(" | "),
    };
    ok &= report(5, "statistical kernels", &five);
    ok &= report(6, "degree distribution skew", &criterion_6(&nets));
    println!("criterion 7 [EXCLUDED] ranked tables: {}", criterion_7(&panel, &nets));
    if !ok {
        std::process::exit(1);
    }
}
