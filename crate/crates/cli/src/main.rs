use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use gduq::anchoring::FixedAnchorSet;
use gduq::config::ExperimentConfig;
use gduq::experiment::{evaluate_checkpoint, predict, prepare_data, run_experiment, Checkpoint};
use gduq::graph::{load_dataset, save_dataset};
use gduq::metrics::{accuracy, write_records_csv, EvalRecord, SplitTag};
use gduq::report::{aggregate, compare_methods, load_runs, write_atomic, RunRecord};
use gduq::Result;

#[derive(Parser)]
#[command(name = "gduq", version, about = "Uncertainty estimation for graph classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run.output` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-evaluate a checkpoint, or predict on a dataset file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Anchor set (required for anchored methods).
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Dataset file to predict on instead of the checkpoint's test splits.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Where to write per-graph records when `--data` is given.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the reports found under a directory.
    Compare {
        #[arg(long)]
        runs: PathBuf,
    },
    /// Generate a dataset (and its split) from the dataset / split sections
    /// of a config file.
    GenerateData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, output } => train(&config, output),
        Command::Evaluate {
            checkpoint,
            anchors,
            data,
            out,
        } => evaluate(&checkpoint, anchors.as_deref(), data.as_deref(), out.as_deref()),
        Command::Compare { runs } => compare(&runs),
        Command::GenerateData { spec, out } => generate(&spec, &out),
    }
}

fn train(config: &Path, output: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    let records = run_experiment(&cfg)?;
    let out = cfg.resolved_output();
    info!("report written to {}", out.display());
    print_table(&records)
}

fn print_table(records: &[RunRecord]) -> Result<()> {
    match compare_methods(&aggregate(records).groups) {
        Ok(table) => print!("{}", table.to_text()),
        Err(e) => println!("no comparison table: {e}"),
    }
    Ok(())
}

fn evaluate(checkpoint: &Path, anchors: Option<&Path>, data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let anchors = anchors.map(FixedAnchorSet::load).transpose()?;
    match data {
        None => {
            let report = evaluate_checkpoint(&ckpt, anchors.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Some(path) => {
            let graphs = load_dataset(path)?;
            let refs: Vec<_> = graphs.iter().collect();
            let preds = predict(&ckpt, anchors.as_ref(), &refs, "external")?;
            let records: Vec<EvalRecord> = preds
                .iter()
                .zip(&graphs)
                .map(|(&(c, p), g)| EvalRecord::new(c, p, g.label(), SplitTag::Id))
                .collect();
            if !records.is_empty() {
                println!("accuracy {:.4} on {} graphs", accuracy(&records)?, records.len());
            }
            if let Some(out) = out {
                let mut buf = Vec::new();
                write_records_csv(&records, &mut buf)?;
                write_atomic(out, &buf)?;
            }
        }
    }
    Ok(())
}

/// Every `runs.csv` directly in `dir` or one level below it.
fn collect_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut dirs = vec![dir.to_path_buf()];
    let mut children: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    dirs.extend(children);
    let mut records = Vec::new();
    for d in dirs {
        if d.join("runs.csv").is_file() {
            records.extend(load_runs(&d)?);
        }
    }
    Ok(records)
}

fn compare(dir: &Path) -> Result<()> {
    let records = collect_runs(dir)?;
    let table = compare_methods(&aggregate(&records).groups)?;
    write_atomic(&dir.join("comparison.csv"), table.to_csv()?.as_bytes())?;
    write_atomic(&dir.join("comparison.txt"), table.to_text().as_bytes())?;
    print!("{}", table.to_text());
    Ok(())
}

fn generate(spec: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(spec)?;
    let data = prepare_data(&cfg)?;
    save_dataset(out, &data.graphs, data.num_classes)?;
    let mut split_path = out.as_os_str().to_owned();
    split_path.push(".split.json");
    write_atomic(Path::new(&split_path), serde_json::to_string_pretty(&data.split)?.as_bytes())?;
    info!(
        "{} graphs written to {} (dataset hash {})",
        data.graphs.len(),
        out.display(),
        data.hash
    );
    Ok(())
}
