use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coexpr::genesel::SelectionRule;
use coexpr::CancerType;
use coexpr_cli::config::{close_stages, PipelineConfig, Stage};
use coexpr_cli::manifest::StageStatus;
use coexpr_cli::pipeline::Pipeline;

/// Multi-cancer expression analysis pipeline.
///
/// Settings come from built-in defaults, then `--config`, then `--set`
/// overrides and the dedicated flags below. Every stage subcommand also runs
/// whatever upstream stages it needs; unchanged stages are skipped.
#[derive(Parser)]
#[command(name = "coexpr", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Run directory for outputs, the manifest and the stage cache.
    #[arg(long, short, global = true, env = "COEXPR_OUTPUT_DIR")]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "COEXPR_THREADS")]
    threads: Option<usize>,
    /// Expression matrix CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Class labels CSV.
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    /// Recompute stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    /// Override any setting, e.g. `--set tsne.perplexity=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and describe the expression matrix.
    Load,
    /// PCA, t-SNE and hierarchical clustering of samples.
    Reduce,
    /// Gaussian mixture on the leading principal components.
    Gmm,
    /// Patient and gene correlation networks.
    Net,
    /// Centrality rankings for every built network.
    Centrality {
        /// Measures to compute (repeatable): degree, eigenvector, pagerank, betweenness.
        #[arg(long = "measure")]
        measures: Vec<String>,
        /// Rows per ranked table.
        #[arg(long)]
        top_k: Option<usize>,
        /// Estimate betweenness from this many sampled sources instead of all.
        #[arg(long)]
        samples: Option<usize>,
        /// Seed for sampled betweenness.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        damping: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Per-gene multinomial logistic screening.
    Screen {
        #[arg(long)]
        baseline: Option<CancerType>,
        #[arg(long)]
        alpha: Option<f64>,
        /// `any` or `all` contrasts below alpha.
        #[arg(long)]
        rule: Option<SelectionRule>,
    },
    /// Expression groups and their clique graphs.
    Groups,
    /// Conservation of groups between two cancer types.
    Compare,
    /// Every stage listed in the configuration.
    Run,
    /// Check the configuration and exit (0 = valid, 2 = violations).
    Validate,
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Load => Stage::Load,
            Command::Reduce => Stage::Reduce,
            Command::Gmm => Stage::Gmm,
            Command::Net => Stage::Net,
            Command::Centrality { .. } => Stage::Centrality,
            Command::Screen { .. } => Stage::Screen,
            Command::Groups => Stage::Groups,
            Command::Compare => Stage::Compare,
            Command::Run | Command::Validate => return None,
        })
    }
}

fn build_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let g = &cli.global;
    let mut cfg = PipelineConfig::layered(g.config.as_deref(), &g.overrides)?;
    if let Some(p) = &g.output {
        cfg.output_dir = p.clone();
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(p) = &g.data {
        cfg.input.data = p.clone();
    }
    if let Some(p) = &g.labels {
        cfg.input.labels = p.clone();
    }
    if let Command::Screen { baseline, alpha, rule } = &cli.command {
        if let Some(b) = baseline {
            cfg.screen.baseline = *b;
        }
        if let Some(a) = alpha {
            cfg.screen.alpha = *a;
        }
        if let Some(r) = rule {
            cfg.screen.rule = *r;
        }
    }
    if let Command::Centrality { measures, top_k, samples, seed, damping, tol, max_iter } = &cli.command {
        let c = &mut cfg.centrality;
        if !measures.is_empty() {
            c.measures = measures.clone();
        }
        if samples.is_some() {
            c.betweenness_samples = *samples;
        }
        c.top_k = top_k.unwrap_or(c.top_k);
        c.seed = seed.unwrap_or(c.seed);
        c.damping = damping.unwrap_or(c.damping);
        c.tol = tol.unwrap_or(c.tol);
        c.max_iter = max_iter.unwrap_or(c.max_iter);
    }
    if let Some(stage) = cli.command.stage() {
        cfg.stages = close_stages(&BTreeSet::from([stage]), &cfg).into_iter().collect();
    }
    Ok(cfg)
}

fn configure_threads(n: usize) -> anyhow::Result<usize> {
    #[cfg(feature = "parallel")]
    {
        use anyhow::Context as _;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        if n > 1 {
            log::warn!("built without the `parallel` feature; running on one thread");
        }
        Ok(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let cfg = build_config(cli)?;
    let violations = cfg.violations();
    if matches!(cli.command, Command::Validate) {
        if violations.is_empty() {
            println!("configuration is valid");
            return Ok(ExitCode::SUCCESS);
        }
        for v in &violations {
            println!("{v}");
        }
        return Ok(ExitCode::from(2));
    }
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        return Ok(ExitCode::from(2));
    }
    let threads = configure_threads(cfg.threads)?;
    let stages: BTreeSet<Stage> = cfg.stages.iter().copied().collect();
    let mut pipeline = Pipeline::new(cfg.clone(), cli.global.force, threads);
    let manifest = pipeline.run(&stages)?;
    let mut failed = false;
    for s in &manifest.stages {
        println!("{:<11} {:<9} {:>9.2} s", s.stage.as_str(), format!("{:?}", s.status).to_lowercase(), s.wall_seconds);
        for e in &s.errors {
            println!("    {}: {}", e.scope, e.message);
        }
        failed |= s.status == StageStatus::Failed;
    }
    println!("manifest: {}", cfg.output_dir.join(coexpr_cli::manifest::MANIFEST_FILE).display());
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}
