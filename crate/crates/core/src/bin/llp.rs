//! Experiment runner for LLP with consistency regularization.
//!
//! Subcommands: `generate-bags`, `train`, `toy`, `correlate`. Every command is
//! deterministic given its config file, stamps the config hash into each
//! artifact, and refuses to overwrite existing outputs without `--force`.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use llp_core::experiment::{
    config_hash, correlate, decision_grid_csv, default_correlate_config, run_experiment,
    thread_cap, CorrelateConfig, ExperimentConfig,
};
use llp_core::losses::ConsistencySpec;
use llp_core::training::{history_csv, train, TrainConfig};
use llp_core::{instance_accuracy, uniform_bags, two_moons};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "llp",
    about = "Learning from label proportions with consistency regularization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overwrite existing artifacts.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate bags from a dataset config and write them as JSON.
    GenerateBags {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a model and write the epoch history, final model, and summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Two-moons toy comparison of the vanilla and consistency-regularized
    /// models; writes the dataset and a dense decision-surface grid.
    Toy(ToyArgs),
    /// Train a grid of configs and correlate bag-level validation errors with
    /// instance test error.
    Correlate {
        /// Grid config (JSON). Without it the built-in desk-scale grid runs.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct ToyArgs {
    /// Points per class.
    #[arg(long, default_value_t = 50)]
    n_per_class: usize,
    /// Gaussian noise added to the moons.
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    /// Number of equal-size bags.
    #[arg(long, default_value_t = 5)]
    bags: usize,
    /// Consistency variant: pi_model or vat.
    #[arg(long, default_value = "pi_model")]
    kind: String,
    /// Maximum consistency weight.
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    /// Pi-model noise std.
    #[arg(long, default_value_t = 0.25)]
    sigma: f64,
    /// VAT perturbation radius.
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    /// Ramp-up length in epochs (defaults to 30% of epochs).
    #[arg(long)]
    rampup: Option<usize>,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Decision-grid resolution per axis.
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    #[command(flatten)]
    common: CommonArgs,
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateBags {
            config,
            seed,
            common,
        } => cmd_generate_bags(&config, seed, &common),
        Command::Train {
            config,
            seed,
            common,
        } => cmd_train(&config, seed, &common),
        Command::Toy(args) => cmd_toy(&args),
        Command::Correlate {
            config,
            seed,
            common,
        } => cmd_correlate(config.as_deref(), seed, &common),
    }
}

fn load_experiment(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn ensure_out_dir(common: &CommonArgs) -> Result<()> {
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))
}

fn write_artifact(common: &CommonArgs, name: &str, contents: &str) -> Result<PathBuf> {
    let path = common.out.join(name);
    if path.exists() && !common.force {
        bail!(
            "artifact {} already exists (pass --force to overwrite)",
            path.display()
        );
    }
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_json<T: Serialize>(common: &CommonArgs, name: &str, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_artifact(common, name, &text)
}

/// CSV artifacts carry the config hash in a leading comment line.
fn csv_with_hash(hash: &str, body: &str) -> String {
    format!("# config_hash={hash}\n{body}")
}

fn quartiles(mut sizes: Vec<usize>) -> (usize, usize, usize, usize, usize) {
    sizes.sort_unstable();
    let q = |f: f64| -> usize { sizes[((sizes.len() - 1) as f64 * f).round() as usize] };
    (sizes[0], q(0.25), q(0.5), q(0.75), sizes[sizes.len() - 1])
}

fn cmd_generate_bags(config: &Path, seed: Option<u64>, common: &CommonArgs) -> Result<()> {
    let cfg = load_experiment(config, seed)?;
    let hash = config_hash(&cfg)?;
    let dataset = cfg.dataset.build()?;
    let bags = cfg.bagging.build(&dataset)?;

    ensure_out_dir(common)?;
    let mut json = bags.to_json()?;
    json.push('\n');
    let path = write_artifact(common, "bags.json", &json)?;

    let sizes: Vec<usize> = bags.bags.iter().map(|b| b.len()).collect();
    let covered: usize = sizes.iter().sum();
    let (min, q1, med, q3, max) = quartiles(sizes);
    println!("config_hash: {hash}");
    println!(
        "bags: {} covering {covered}/{} instances",
        bags.len(),
        dataset.len()
    );
    println!("bag sizes: min={min} q1={q1} median={med} q3={q3} max={max}");
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    config_hash: String,
    final_accuracy: Option<f64>,
    best_val_hard_l1: Option<f64>,
}

fn cmd_train(config: &Path, seed: Option<u64>, common: &CommonArgs) -> Result<()> {
    let cfg = load_experiment(config, seed)?;
    let hash = config_hash(&cfg)?;
    let result = run_experiment(&cfg).map_err(|e| match e {
        llp_core::Error::NonFiniteLoss { epoch, bag } => {
            anyhow::anyhow!("training diverged: non-finite loss at epoch {epoch}, bag {bag}")
        }
        other => anyhow::Error::from(other),
    })?;

    ensure_out_dir(common)?;
    write_artifact(
        common,
        "history.csv",
        &csv_with_hash(&hash, &history_csv(&result.records)),
    )?;
    write_json(common, "model.json", &result.params)?;
    let summary = TrainSummary {
        config_hash: hash.clone(),
        final_accuracy: result.final_accuracy,
        best_val_hard_l1: result.best_val_hard_l1,
    };
    write_json(common, "summary.json", &summary)?;

    match result.final_accuracy {
        Some(acc) => println!("final_accuracy (last-{} mean): {acc}", cfg.train.final_window),
        None => println!("final_accuracy: n/a (no test dataset)"),
    }
    if let Some(best) = result.best_val_hard_l1 {
        println!("best val_hard_l1: {best}");
    }
    println!("config_hash: {hash}");
    Ok(())
}

#[derive(Serialize)]
struct ToySummary {
    config_hash: String,
    vanilla_accuracy: f64,
    consistency_accuracy: f64,
}

fn cmd_toy(args: &ToyArgs) -> Result<()> {
    let rampup = args.rampup.unwrap_or(args.epochs * 3 / 10);
    let consistency = match args.kind.as_str() {
        "pi_model" | "pi" => ConsistencySpec::pi_model(args.alpha, args.sigma, rampup),
        "vat" => ConsistencySpec::vat(args.alpha, args.epsilon, rampup),
        other => bail!("unknown consistency kind `{other}` (expected pi_model or vat)"),
    };

    // The toy follows the five-bags-of-twenty setting: one dataset, an exact
    // partition into equal bags, no bag split.
    let total = 2 * args.n_per_class;
    let bag_size = total / args.bags;
    if bag_size == 0 || total % args.bags != 0 {
        bail!("{} points cannot be split into {} equal bags", total, args.bags);
    }

    let base = TrainConfig {
        hidden_layers: vec![64, 64],
        epochs: args.epochs,
        base_lr: args.lr,
        lr_decay_factor: 0.2,
        lr_decay_at: args.epochs * 4 / 5,
        seed: args.seed,
        final_window: 10.min(args.epochs),
        ..TrainConfig::default()
    };
    // Hash over everything that shapes the outputs.
    let hash = config_hash(&(
        &base,
        &consistency,
        args.n_per_class,
        args.noise.to_bits(),
        args.bags,
        args.seed,
        args.resolution,
    ))?;

    let ds = two_moons(args.n_per_class, args.noise, args.seed)?;
    let test = two_moons(500, args.noise, args.seed.wrapping_add(1))?;
    let bags = uniform_bags(&ds, bag_size, args.seed)?;

    let vanilla_cfg = base.clone();
    let cons_cfg = TrainConfig {
        consistency,
        ..base
    };
    let (vanilla_params, _) = train(&bags, None, &ds, None, &vanilla_cfg)?;
    let (cons_params, _) = train(&bags, None, &ds, None, &cons_cfg)?;
    let vanilla_acc = instance_accuracy(&vanilla_params, &test)?;
    let cons_acc = instance_accuracy(&cons_params, &test)?;

    ensure_out_dir(&args.common)?;
    write_artifact(
        &args.common,
        "toy_dataset.csv",
        &csv_with_hash(&hash, &ds.to_csv()),
    )?;
    let grid = decision_grid_csv(&vanilla_params, &cons_params, &ds, args.resolution)?;
    write_artifact(&args.common, "toy_grid.csv", &csv_with_hash(&hash, &grid))?;
    write_json(
        &args.common,
        "toy_summary.json",
        &ToySummary {
            config_hash: hash.clone(),
            vanilla_accuracy: vanilla_acc,
            consistency_accuracy: cons_acc,
        },
    )?;

    println!("config_hash: {hash}");
    println!("vanilla test accuracy:     {vanilla_acc}");
    println!("consistency test accuracy: {cons_acc}");
    Ok(())
}

#[derive(Serialize)]
struct CorrelateSummary {
    config_hash: String,
    /// Hard L1 first: it is the recommended model-selection metric.
    pooled_hard_l1: f64,
    pooled_soft_l1: f64,
    pooled_hard_kl: f64,
    pooled_soft_kl: f64,
    groups: Vec<GroupSummary>,
}

#[derive(Serialize)]
struct GroupSummary {
    group: String,
    hard_l1: f64,
    soft_l1: f64,
    hard_kl: f64,
    soft_kl: f64,
}

fn cmd_correlate(config: Option<&Path>, seed: Option<u64>, common: &CommonArgs) -> Result<()> {
    let mut grid: CorrelateConfig = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => default_correlate_config(),
    };
    if grid.runs.len() < 5 {
        bail!("correlate needs a grid of at least 5 configs, got {}", grid.runs.len());
    }
    if let Some(s) = seed {
        for (i, run) in grid.runs.iter_mut().enumerate() {
            run.experiment = run.experiment.with_seed(s.wrapping_add(i as u64));
        }
    }
    let hash = config_hash(&grid)?;

    let report = correlate(&grid, thread_cap())?;

    ensure_out_dir(common)?;
    write_artifact(
        common,
        "correlation.csv",
        &csv_with_hash(&hash, &report.to_csv()),
    )?;
    let summary = CorrelateSummary {
        config_hash: hash.clone(),
        pooled_hard_l1: report.pooled.hard_l1,
        pooled_soft_l1: report.pooled.soft_l1,
        pooled_hard_kl: report.pooled.hard_kl,
        pooled_soft_kl: report.pooled.soft_kl,
        groups: report
            .groups
            .iter()
            .map(|(name, c)| GroupSummary {
                group: name.clone(),
                hard_l1: c.hard_l1,
                soft_l1: c.soft_l1,
                hard_kl: c.hard_kl,
                soft_kl: c.soft_kl,
            })
            .collect(),
    };
    write_json(common, "correlation_summary.json", &summary)?;

    println!("config_hash: {hash}");
    println!(
        "pooled Pearson vs test error: hard_l1={} soft_l1={} hard_kl={} soft_kl={}",
        report.pooled.hard_l1, report.pooled.soft_l1, report.pooled.hard_kl, report.pooled.soft_kl
    );
    for (name, c) in &report.groups {
        println!(
            "[{name}] hard_l1={} soft_l1={} hard_kl={} soft_kl={}",
            c.hard_l1, c.soft_l1, c.hard_kl, c.soft_kl
        );
    }
    Ok(())
}
