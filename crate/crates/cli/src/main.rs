//! `robust`: perturbation robustness reports for tabular models.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use robust_core::config::RunConfig;
use robust_core::metrics::SweepScope;
use robust_core::pipeline::{self, Inputs};
use robust_core::report;

#[derive(Parser)]
#[command(name = "robust", version, about = "Covariate-perturbation robustness reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
    /// Overwrite files in a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Perturbations per observation; overrides the configuration.
    #[arg(short = 'k', long)]
    k: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Perturb once, score every model and write the robustness summary.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// ArPPV of every model over increasing budgets.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly increasing budgets.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
        /// Categorical budget is min(1, multiplier · b).
        #[arg(long)]
        cat_multiplier: Option<f64>,
        /// numeric, categorical or both.
        #[arg(long)]
        scope: Option<SweepScope>,
    },
    /// Run, then PSI ranking, rPPV tree and single-variable diagnosis.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Fraction of observations in the worst subset.
        #[arg(long)]
        worst_q: Option<f64>,
        /// Comma-separated columns for single-variable diagnosis.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
    },
    /// Run, then PSI ranking of the worst subset only.
    Psi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        worst_q: Option<f64>,
    },
    /// Partial dependence of every model on one numeric column.
    Pdp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        column: String,
        /// Number of grid points.
        #[arg(long, default_value_t = robust_core::diagnosis::DEFAULT_PDP_GRID)]
        grid: usize,
    },
}

fn setup(common: &Common) -> Result<RunConfig> {
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = RunConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(k) = common.k {
        cfg.k = k;
    }
    Ok(cfg)
}

fn load(cfg: &RunConfig, out: &Path, force: bool) -> Result<(Inputs, Vec<robust_core::model::Model>)> {
    cfg.validate()?;
    report::prepare_output_dir(out, force)?;
    let inputs = Inputs::load(cfg)?;
    let models = pipeline::open_models(cfg, &inputs.data)?;
    Ok((inputs, models))
}

fn run_and_write(cfg: &RunConfig, inputs: &Inputs, models: &[robust_core::model::Model], out: &Path) -> Result<pipeline::RunReport> {
    let run = pipeline::run(cfg, inputs, models)?;
    report::write_run(out, &run)?;
    if cfg.dump_batches {
        report::write_batches(out, inputs.schema(), &run)?;
    }
    for m in &run.models {
        println!("{}\t{} = {}", m.name, run.metric, report::fmt_f64(m.summary.aggregate));
    }
    Ok(run)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROBUST_LOG", "warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common } => {
            let cfg = setup(&common)?;
            let (inputs, models) = load(&cfg, &common.output, common.force)?;
            run_and_write(&cfg, &inputs, &models, &common.output)?;
        }
        Command::Sweep {
            common,
            budgets,
            cat_multiplier,
            scope,
        } => {
            let mut cfg = setup(&common)?;
            let mut sc = cfg.sweep.take().unwrap_or(robust_core::config::SweepConfig {
                budgets: Vec::new(),
                cat_multiplier: 5.0,
                scope: SweepScope::default(),
            });
            if let Some(b) = budgets {
                sc.budgets = b;
            }
            if let Some(m) = cat_multiplier {
                sc.cat_multiplier = m;
            }
            if let Some(s) = scope {
                sc.scope = s;
            }
            cfg.sweep = Some(sc);
            let (inputs, models) = load(&cfg, &common.output, common.force)?;
            let rep = pipeline::sweep(&cfg, &inputs, &models)?;
            report::write_sweep(&common.output, &rep)?;
            for (name, curve) in &rep.sweep.arppv {
                let text: Vec<String> = curve.iter().map(|&v| report::fmt_f64(v)).collect();
                println!("{name}\t{}", text.join(","));
            }
        }
        Command::Diagnose {
            common,
            worst_q,
            columns,
        } => {
            let mut cfg = setup(&common)?;
            if let Some(q) = worst_q {
                cfg.diagnosis.worst_q = q;
            }
            if let Some(c) = columns {
                cfg.diagnosis.columns = c;
            }
            let (inputs, models) = load(&cfg, &common.output, common.force)?;
            let run = run_and_write(&cfg, &inputs, &models, &common.output)?;
            let diag = pipeline::diagnose(&cfg, &inputs, &models, &run)?;
            report::write_diagnosis(&common.output, &diag)?;
            for d in &diag {
                let top: Vec<String> = d.psi.iter().take(3).map(|p| format!("{}={}", p.column, report::fmt_f64(p.psi))).collect();
                println!("{}\ttop PSI: {}", d.model, top.join(", "));
            }
        }
        Command::Psi { common, worst_q } => {
            let mut cfg = setup(&common)?;
            if let Some(q) = worst_q {
                cfg.diagnosis.worst_q = q;
            }
            let (inputs, models) = load(&cfg, &common.output, common.force)?;
            let run = run_and_write(&cfg, &inputs, &models, &common.output)?;
            let diag = pipeline::psi_ranking(&cfg, &inputs, &run)?;
            report::write_diagnosis(&common.output, &diag)?;
        }
        Command::Pdp { common, column, grid } => {
            let cfg = setup(&common)?;
            let (inputs, models) = load(&cfg, &common.output, common.force)?;
            let curves = pipeline::pdp_all(&inputs, &models, &column, grid)?;
            report::write_pdp(&common.output, &column, &curves)?;
        }
    }
    info!("done");
    Ok(())
}
