//! Command-line front end: train a model, verify the surrogate bound by
//! sampling, run the estimator-bias study, sweep the target fraction, or
//! dump a decision-boundary grid from a checkpoint.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semaug::dataset::{self, Domain, DomainDataset};
use semaug::network;
use semaug::oracle;
use semaug::runner::{self, TrainConfig};
use semaug::{Error, Result};

#[derive(Parser)]
#[command(
    name = "semaug",
    about = "Implicit class-wise semantic augmentation for domain adaptation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a source/target pair and write metrics plus a checkpoint.
    Train(RunArgs),
    /// Check the closed-form loss against Monte-Carlo sampling.
    Verify(VerifyArgs),
    /// Track estimator bias against per-epoch ideal statistics.
    Bias(RunArgs),
    /// Train once per target fraction and tabulate target accuracy.
    Sweep(RunArgs),
    /// Rasterize the decision regions of a trained checkpoint.
    Boundary(BoundaryArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat key=value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Final augmentation strength of the linear ramp.
    #[arg(long)]
    lambda0: Option<f64>,
    /// Weight of the mutual-information term.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Hidden layer widths, comma separated (e.g. 32,32); empty for linear.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Re-estimate class statistics every this many iterations.
    #[arg(long)]
    stats_refresh_k: Option<usize>,
    /// Statistics estimator: memory | iterative.
    #[arg(long)]
    estimator: Option<String>,
    /// Target fraction in (0,1]; `sweep` accepts a comma-separated list.
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Labeled source CSV; omit both data flags for the built-in rotated
    /// two-moons task.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target CSV (labels optional, used only for evaluation).
    #[arg(long)]
    target: Option<PathBuf>,
    /// Output directory for CSV files and checkpoints.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Number of random bound instances.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Monte-Carlo draws per instance.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest class count an instance may draw.
    #[arg(long, default_value_t = 5)]
    max_classes: usize,
    /// Largest feature dimension an instance may draw.
    #[arg(long, default_value_t = 8)]
    max_dim: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BoundaryArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Grid bounds xmin,xmax,ymin,ymax.
    #[arg(long, default_value = "-2.5,3.5,-2.0,2.5", allow_hyphen_values = true)]
    bounds: String,
    /// Grid points per axis, corners inclusive.
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Verify(args) => run_verify(args),
        Command::Bias(args) => run_bias(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Boundary(args) => run_boundary(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

/// Config assembled from defaults, then the config file, then flags. The
/// `rho` flag is excluded here; single-run commands and the sweep parse it
/// differently.
fn build_config(args: &RunArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.lambda0 {
        config.lambda0 = v;
    }
    if let Some(v) = args.beta {
        config.beta = v;
    }
    if let Some(v) = args.iters {
        config.total_iters = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.lr {
        config.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        config.momentum = v;
    }
    if let Some(v) = &args.hidden {
        config.apply_kv("hidden", v)?;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.stats_refresh_k {
        config.stats_refresh_k = v;
    }
    if let Some(v) = &args.estimator {
        config.estimator = v.parse()?;
    }
    if let Some(v) = args.eval_interval {
        config.eval_interval = v;
    }
    Ok(config)
}

fn parse_rho_single(args: &RunArgs, config: &mut TrainConfig) -> Result<()> {
    if let Some(raw) = &args.rho {
        config.rho = raw
            .parse()
            .map_err(|e| Error::Config(format!("bad value {raw:?} for rho: {e}")))?;
    }
    Ok(())
}

fn parse_rho_list(args: &RunArgs) -> Result<Vec<f64>> {
    match &args.rho {
        None => Ok(vec![0.2, 0.4, 0.6, 0.8, 1.0]),
        Some(raw) => raw
            .split(',')
            .map(|part| {
                part.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("bad rho entry {part:?}: {e}")))
            })
            .collect(),
    }
}

fn load_data(args: &RunArgs, config: &TrainConfig) -> Result<(DomainDataset, DomainDataset)> {
    match (&args.source, &args.target) {
        (Some(src), Some(tgt)) => {
            let source = dataset::load_csv(src)?;
            let target = dataset::load_csv(tgt)?;
            if source.domain != Domain::Source {
                return Err(Error::Config(format!(
                    "{} is tagged {}, expected a source file",
                    src.display(),
                    source.domain
                )));
            }
            if target.domain != Domain::Target {
                return Err(Error::Config(format!(
                    "{} is tagged {}, expected a target file",
                    tgt.display(),
                    target.domain
                )));
            }
            Ok((source, target))
        }
        (None, None) => Ok(dataset::two_moons_task(config.seed)),
        _ => Err(Error::Config(
            "provide both --source and --target, or neither for the built-in task".to_string(),
        )),
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run_train(args: RunArgs) -> Result<()> {
    let mut config = build_config(&args)?;
    parse_rho_single(&args, &mut config)?;
    let (source, target) = load_data(&args, &config)?;
    ensure_out(&args.out)?;
    let outcome = runner::train(&source, &target, &config)?;
    runner::write_metrics_csv(&outcome.metrics, args.out.join("metrics.csv"))?;
    network::save_checkpoint(&outcome.model, args.out.join("checkpoint.txt"))?;
    if let Some(last) = outcome.metrics.last() {
        match last.tgt_acc {
            Some(tgt) => println!(
                "iter {}: src_acc={:.4} tgt_acc={:.4} loss={:.4}",
                last.iter, last.src_acc, tgt, last.loss_total
            ),
            None => println!(
                "iter {}: src_acc={:.4} loss={:.4} (target unlabeled)",
                last.iter, last.src_acc, last.loss_total
            ),
        }
    }
    println!("wrote {} and checkpoint.txt", args.out.join("metrics.csv").display());
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<()> {
    if args.instances == 0 || args.draws == 0 {
        return Err(Error::Config("verify needs at least one instance and one draw".to_string()));
    }
    if args.max_classes < 2 {
        return Err(Error::Config("instances need at least two classes".to_string()));
    }
    ensure_out(&args.out)?;
    let lambdas = [0.1, 0.25, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut reports = Vec::with_capacity(args.instances);
    for id in 0..args.instances {
        let lambda = lambdas[id % lambdas.len()];
        let instance = oracle::random_instance(id, args.max_classes, args.max_dim, lambda, &mut rng);
        reports.push(oracle::verify_bound(&instance, args.draws, &mut rng)?);
    }
    runner::write_verify_csv(&reports, args.out.join("verify.csv"))?;

    let violations: Vec<usize> =
        reports.iter().filter(|r| !r.holds).map(|r| r.instance_id).collect();
    let min_margin = reports.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    println!(
        "checked {} instances at {} draws each; min margin {:.6}; wrote {}",
        reports.len(),
        args.draws,
        min_margin,
        args.out.join("verify.csv").display()
    );
    if violations.is_empty() {
        println!("bound holds on every instance");
        Ok(())
    } else {
        Err(Error::Eval(format!(
            "bound violated beyond 3 standard errors on {} of {} instances (ids {:?})",
            violations.len(),
            reports.len(),
            violations
        )))
    }
}

fn run_bias(args: RunArgs) -> Result<()> {
    let mut config = build_config(&args)?;
    parse_rho_single(&args, &mut config)?;
    let (source, target) = load_data(&args, &config)?;
    ensure_out(&args.out)?;
    let outcome = runner::bias_experiment(&source, &target, &config)?;
    runner::write_bias_csv(&outcome.rows, args.out.join("bias.csv"))?;
    runner::write_metrics_csv(&outcome.metrics, args.out.join("metrics.csv"))?;

    let measured: Vec<&runner::BiasRow> =
        outcome.rows.iter().filter(|r| r.epoch > 3).collect();
    if !measured.is_empty() {
        let wins = measured
            .iter()
            .filter(|r| {
                r.bias_mu_memory <= r.bias_mu_iterative
                    && r.bias_sigma_memory <= r.bias_sigma_iterative
            })
            .count();
        println!(
            "memory at or below iterative bias in {wins} of {} post-warm-up epochs",
            measured.len()
        );
    }
    println!("wrote {} and metrics.csv", args.out.join("bias.csv").display());
    Ok(())
}

fn run_sweep(args: RunArgs) -> Result<()> {
    let config = build_config(&args)?;
    let rhos = parse_rho_list(&args)?;
    let (source, target) = load_data(&args, &config)?;
    ensure_out(&args.out)?;
    let rows = runner::rho_sweep(&source, &target, &config, &rhos)?;
    runner::write_sweep_csv(&rows, args.out.join("sweep.csv"))?;
    for row in &rows {
        println!("rho={:.2} tgt_acc={:.4}", row.rho, row.tgt_acc);
    }
    println!("wrote {}", args.out.join("sweep.csv").display());
    Ok(())
}

fn run_boundary(args: BoundaryArgs) -> Result<()> {
    let parts: Vec<f64> = args
        .bounds
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad bounds entry {p:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "bounds must be xmin,xmax,ymin,ymax; got {} values",
            parts.len()
        )));
    }
    let model = network::load_checkpoint(&args.checkpoint)?;
    ensure_out(&args.out)?;
    let path = args.out.join("boundary.csv");
    runner::dump_boundary(&model, (parts[0], parts[1], parts[2], parts[3]), args.resolution, &path)?;
    println!("wrote {} at {}x{} resolution", path.display(), args.resolution, args.resolution);
    Ok(())
}
