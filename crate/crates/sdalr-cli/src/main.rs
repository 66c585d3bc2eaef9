//! Experiment command line: source training, target adaptation, task
//! matrices, the ablation ladder, hyperparameter sweeps and report export.

use std::path::PathBuf;
use std::process::exit;

use clap::{Args, Parser, Subcommand};

use sdalr::config::{DatasetKind, RunConfig, SweepAxis};
use sdalr::dataset::TransferTask;
use sdalr::error::{Error, Result};
use sdalr::experiment::{
    check_data_available, create_run_dir, export_embeddings,
    inspect_pseudo_labels, load_domain, persist_config, report_from_dir, run_ablation,
    run_matrix, run_sweep,
};
use sdalr::network::Model;
use sdalr::report::write_confusion_csv;
use sdalr::train::{evaluate, train_source};

#[derive(Parser)]
#[command(name = "sdalr", version, about = "Source-free domain adaptation experiments")]
struct Cli {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Dataset preset when no config file is given.
    #[arg(long, global = true, value_parser = parse_dataset)]
    dataset: Option<DatasetKind>,

    /// Override experiment.output_dir.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated seed list for matrix/ablation/sweep cells.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Override data.pu_root.
    #[arg(long, global = true)]
    pu_root: Option<PathBuf>,

    /// Override data.jnu_root.
    #[arg(long, global = true)]
    jnu_root: Option<PathBuf>,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

fn parse_dataset(s: &str) -> std::result::Result<DatasetKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "pu" => Ok(DatasetKind::Pu),
        "jnu" => Ok(DatasetKind::Jnu),
        "synth" => Ok(DatasetKind::Synth),
        other => Err(format!("unknown dataset {other} (pu, jnu, synth)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train a source model on one labeled domain.
    TrainSource(TrainSourceArgs),
    /// Adapt a source checkpoint to an unlabeled target domain.
    Adapt(AdaptArgs),
    /// Evaluate a checkpoint on a labeled domain.
    Evaluate(EvaluateArgs),
    /// Run the full task matrix and emit the results table.
    Matrix(DriverArgs),
    /// Run the four-row ablation ladder.
    Ablation(DriverArgs),
    /// Sweep one hyperparameter axis over its grid.
    Sweep(SweepArgs),
    /// Pseudo-label auditing tools.
    #[command(subcommand, name = "pseudo-labels")]
    PseudoLabels(PseudoLabelsCommand),
    /// Export per-sample feature embeddings to CSV.
    ExportEmbeddings(ExportArgs),
    /// Recompute and print the results table of a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainSourceArgs {
    /// Source domain id (A1..A3, B1..B3, or S/T for synth).
    #[arg(long)]
    domain: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    source_ckpt: PathBuf,
    #[arg(long)]
    target_domain: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    domain: String,
    /// Write the confusion matrix CSV here.
    #[arg(long)]
    confusion_out: Option<PathBuf>,
}

#[derive(Args)]
struct DriverArgs {
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep axis: beta or threshold.
    #[arg(long, value_parser = parse_axis)]
    axis: SweepAxis,
    #[arg(long)]
    overwrite: bool,
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    match s.to_ascii_lowercase().as_str() {
        "beta" => Ok(SweepAxis::Beta),
        "threshold" => Ok(SweepAxis::Threshold),
        other => Err(format!("unknown axis {other} (beta, threshold)")),
    }
}

#[derive(Subcommand)]
enum PseudoLabelsCommand {
    /// Dump per-sample ballots, similarities and final labels to CSV.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    domain: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    domain: String,
    #[arg(long)]
    out: PathBuf,
    /// Also compute pseudo-labels for the pseudo_label column.
    #[arg(long, default_value_t = true)]
    with_pseudo_labels: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default_for(cli.dataset.unwrap_or(DatasetKind::Synth)),
    };
    if let Some(kind) = cli.dataset {
        if cli.config.is_some() && kind != cfg.experiment.dataset {
            return Err(Error::Config(
                "--dataset disagrees with the config file; drop one of them".into(),
            ));
        }
    }
    if let Some(dir) = &cli.output_dir {
        cfg.experiment.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.adapt.seed = seed;
    }
    if let Some(seeds) = &cli.seeds {
        cfg.experiment.seeds = seeds.clone();
    }
    if let Some(root) = &cli.pu_root {
        cfg.data.pu_root = Some(root.clone());
    }
    if let Some(root) = &cli.jnu_root {
        cfg.data.jnu_root = Some(root.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::TrainSource(args) => {
            check_data_available(&cfg)?;
            create_run_dir(&args.out_dir, args.overwrite)?;
            persist_config(&cfg, &args.out_dir)?;
            let dataset = load_domain(&cfg, &args.domain)?;
            let (_, record) = train_source(&dataset, &cfg, Some(&args.out_dir))?;
            println!(
                "source model trained on {}: final val accuracy {:?}",
                args.domain, record.final_val_accuracy
            );
        }
        Command::Adapt(args) => {
            check_data_available(&cfg)?;
            create_run_dir(&args.out_dir, args.overwrite)?;
            persist_config(&cfg, &args.out_dir)?;
            let source = Model::load(&args.source_ckpt)?;
            let task = TransferTask::new(source.meta.domain.clone(), args.target_domain.clone())?;
            let target = load_domain(&cfg, &args.target_domain)?;
            let (model, record) = sdalr::train::adapt_target(&source, &target, &cfg, Some(&args.out_dir))?;
            let _ = model;
            println!(
                "adapted {task}: final accuracy {:.2}%",
                100.0 * record.final_accuracy
            );
        }
        Command::Evaluate(args) => {
            let model = Model::load(&args.ckpt)?;
            let dataset = load_domain(&cfg, &args.domain)?;
            let report = evaluate(&model, &dataset, cfg.adapt.eval_batch)?;
            println!("accuracy: {:.2}%", 100.0 * report.accuracy);
            for (c, acc) in report.per_class_accuracy.iter().enumerate() {
                println!("class {c}: {:.2}%", 100.0 * acc);
            }
            if let Some(path) = &args.confusion_out {
                write_confusion_csv(&report.confusion, path)?;
                println!("confusion matrix written to {}", path.display());
            }
        }
        Command::Matrix(args) => {
            run_matrix(&cfg, args.overwrite)?;
        }
        Command::Ablation(args) => {
            run_ablation(&cfg, args.overwrite)?;
        }
        Command::Sweep(args) => {
            let data = run_sweep(&cfg, args.axis, args.overwrite)?;
            for p in &data.points {
                println!("{} = {:.2}: average {:.2}%", data.axis, p.value, p.average);
            }
        }
        Command::PseudoLabels(PseudoLabelsCommand::Inspect(args)) => {
            let model = Model::load(&args.ckpt)?;
            let dataset = load_domain(&cfg, &args.domain)?;
            let assignment = inspect_pseudo_labels(&model, &dataset, &cfg, &args.out)?;
            println!(
                "{} samples, {:.1}% reliable; ballots written to {}",
                dataset.len(),
                100.0 * assignment.reliable_fraction(),
                args.out.display()
            );
        }
        Command::ExportEmbeddings(args) => {
            let model = Model::load(&args.ckpt)?;
            let dataset = load_domain(&cfg, &args.domain)?;
            let assignment = if args.with_pseudo_labels {
                let aug = sdalr::augment::AugmentConfig {
                    zero_fraction: cfg.adapt.zero_fraction,
                    flip_negate: cfg.adapt.flip_negate,
                };
                Some(sdalr::labeling::assign_labels(
                    &model,
                    &dataset,
                    cfg.adapt.threshold,
                    &aug,
                    cfg.adapt.seed,
                    cfg.adapt.voting,
                    cfg.adapt.eval_batch,
                )?)
            } else {
                None
            };
            export_embeddings(&model, &dataset, assignment.as_ref(), cfg.adapt.eval_batch, &args.out)?;
            println!("embeddings written to {}", args.out.display());
        }
        Command::Report(args) => {
            let table = report_from_dir(&args.run_dir)?;
            println!("{}", table.to_aligned_text());
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            exit(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        exit(e.exit_code());
    }
}
