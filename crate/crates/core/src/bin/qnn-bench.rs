//! Command-line front end: single runs, sweeps and reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 run failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use qnn_core::harness::{
    default_grid, emit_report, parse_engine, read_records, run_experiment, sweep, ModelKind, Optimizer, RunConfig,
    Stage, SweepEntry, DEFAULT_LEARNING_RATE, RECORDS_FILE,
};
use qnn_core::statevec::PauliKind;
use qnn_core::QnnError;

#[derive(Parser)]
#[command(name = "qnn-bench", version, about = "Train and benchmark the binary MNIST QNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Qnn,
    Fair,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Plain,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObservableArg {
    X,
    Y,
    Z,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its record and report.
    Run {
        #[arg(long, value_enum, default_value = "qnn")]
        model: ModelArg,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
        lr: f64,
        #[arg(long, value_enum, default_value = "plain")]
        optimizer: OptimizerArg,
        /// `analytic`, `fd` or `hadamard:SHOTS`.
        #[arg(long, default_value = "analytic")]
        grad: String,
        #[arg(long, default_value = "3,6")]
        labels: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        no_dedup: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Readout observable on the last qubit.
        #[arg(long, value_enum, default_value = "z")]
        observable: ObservableArg,
        /// Permit the 5x5 grid.
        #[arg(long)]
        allow_large: bool,
        #[arg(long, default_value = "data/mnist")]
        data: PathBuf,
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
    },
    /// Run a grid of configurations, appending records as they finish.
    Sweep {
        /// `default` or a JSON file holding an array of run configs.
        #[arg(long, default_value = "default")]
        grid: String,
        /// Seeds for the default grid, comma separated.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        /// Disable deduplication in the default grid.
        #[arg(long)]
        no_dedup: bool,
        #[arg(long, default_value = "data/mnist")]
        data: PathBuf,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Rebuild the CSV report from a sweep directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Run(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Run(e) => e,
        }
    }
}

fn classify(e: QnnError) -> Failure {
    match e {
        QnnError::InvalidArgument(_) => Failure::Usage(e.into()),
        QnnError::NotFound(_) | QnnError::CorruptData { .. } => Failure::Data(e.into()),
        _ => Failure::Run(e.into()),
    }
}

fn parse_labels(s: &str) -> anyhow::Result<(u8, u8)> {
    let (a, b) = s.split_once(',').ok_or_else(|| anyhow!("labels must look like A,B"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    s.split(',').map(|x| x.trim().parse::<u64>().map_err(Into::into)).collect()
}

fn load_grid(spec: &str, seeds: &[u64], dedup: bool) -> Result<Vec<RunConfig>, Failure> {
    if spec == "default" {
        return Ok(seeds.iter().flat_map(|&s| default_grid(s)).map(|c| RunConfig { dedup, ..c }).collect());
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading grid {spec}")).map_err(Failure::Usage)?;
    let grid: Vec<RunConfig> =
        serde_json::from_str(&text).with_context(|| format!("parsing grid {spec}")).map_err(Failure::Usage)?;
    for c in &grid {
        c.validate().map_err(classify)?;
    }
    Ok(grid)
}

fn print_entry(entry: &SweepEntry) {
    match entry {
        SweepEntry::Ok { record } => eprintln!(
            "{:<24} acc {:.4} loss {:.4} ({:.1}s)",
            record.config.tag(),
            record.final_accuracy(),
            record.final_loss(),
            record.wall_time
        ),
        SweepEntry::Failed { config, stage, error } => eprintln!("{:<24} FAILED at {stage}: {error}", config.tag()),
    }
}

fn write_outputs(records: &[qnn_core::harness::RunRecord], out: &Path) -> Result<(), Failure> {
    let files = emit_report(records, out).map_err(|e| Failure::Run(e.into()))?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            model,
            dim,
            epochs,
            batch_size,
            lr,
            optimizer,
            grad,
            labels,
            threshold,
            no_dedup,
            seed,
            observable,
            allow_large,
            data,
            out,
        } => {
            let model = match model {
                ModelArg::Qnn => ModelKind::Qnn,
                ModelArg::Fair => ModelKind::Fair,
            };
            let config = RunConfig {
                learning_rate: lr,
                optimizer: match optimizer {
                    OptimizerArg::Plain => Optimizer::Plain,
                    OptimizerArg::Paper => Optimizer::Paper,
                },
                grad_engine: parse_engine(&grad).map_err(classify)?,
                labels: parse_labels(&labels).map_err(Failure::Usage)?,
                seed,
                dedup: !no_dedup,
                threshold,
                observable: match observable {
                    ObservableArg::X => PauliKind::X,
                    ObservableArg::Y => PauliKind::Y,
                    ObservableArg::Z => PauliKind::Z,
                },
                allow_large,
                ..RunConfig::new(model, dim, epochs, batch_size)
            };
            config.validate().map_err(classify)?;
            let record = run_experiment(&config, &data).map_err(|e| match (e.stage, classify(e.source)) {
                (Stage::Load | Stage::Config, f) => f,
                (stage, f) => Failure::Run(anyhow!("{stage} stage failed: {}", f.error())),
            })?;
            eprintln!("{}", record.provenance.summary());
            for (i, m) in record.per_epoch.iter().enumerate() {
                println!("epoch {:>3}  train loss {:.6}  test accuracy {:.4}", i + 1, m.train_loss, m.test_accuracy);
            }
            println!("wall time {:.2}s", record.wall_time);
            fs::create_dir_all(&out).map_err(|e| Failure::Run(e.into()))?;
            let line = serde_json::to_string(&SweepEntry::Ok { record: record.clone() })
                .map_err(|e| Failure::Run(e.into()))?;
            fs::write(out.join(RECORDS_FILE), line + "\n").map_err(|e| Failure::Run(e.into()))?;
            write_outputs(&[record], &out)
        }
        Command::Sweep { grid, seeds, no_dedup, data, out } => {
            let seeds = parse_seeds(&seeds).map_err(Failure::Usage)?;
            let grid = load_grid(&grid, &seeds, !no_dedup)?;
            let records = sweep(&grid, &data, &out, print_entry).map_err(classify)?;
            if records.is_empty() {
                return Err(Failure::Run(anyhow!("every run in the sweep failed")));
            }
            write_outputs(&records, &out)?;
            if records.len() < grid.len() {
                return Err(Failure::Run(anyhow!("{} of {} runs failed", grid.len() - records.len(), grid.len())));
            }
            Ok(())
        }
        Command::Report { input, out } => {
            let records = read_records(&input.join(RECORDS_FILE)).map_err(classify)?;
            write_outputs(&records, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
