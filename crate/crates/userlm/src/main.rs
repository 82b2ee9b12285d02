//! Command-line entry point: personalized genre-preference experiments
//! driven by one TOML config plus flag overrides.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use userlm::config::{load_config, Mode, Overrides, RunConfig};
use userlm::data::shards::Split;
use userlm::eval::render_table;
use userlm::harness::{
    cmd_ablate, cmd_baseline, cmd_cost_report, cmd_evaluate, cmd_ingest, cmd_synth_data,
    cmd_train, render_ablate_table, render_cost_outcome, HarnessError, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "userlm",
    about = "Compress user histories into soft prompts for a small text-to-text model",
    version
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; omitted sections take desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run name (artifacts land under <output-dir>/<name>/).
    #[arg(long, global = true)]
    name: Option<String>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Data shard directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// History handling: embedding | text.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// History length (most recent items per user).
    #[arg(long, global = true)]
    p: Option<usize>,
    #[arg(long, global = true)]
    steps: Option<u64>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write its shards.
    SynthData,
    /// Ingest ratings/movies CSVs (paths from [data] in the config).
    Ingest,
    /// Train per the config; writes checkpoint, vocab, and metrics log.
    Train,
    /// Evaluate the run's checkpoint on a split.
    Evaluate {
        #[arg(long, default_value = "dev")]
        split: Split,
        /// Also print the per-run comparison table row.
        #[arg(long)]
        table: bool,
    },
    /// Score the counting baseline on a split (no model needed).
    Baseline {
        #[arg(long, default_value = "dev")]
        split: Split,
        #[arg(long)]
        table: bool,
    },
    /// Train + evaluate across a sweep of one knob.
    Ablate {
        /// Comma-separated history lengths, e.g. 4,8,16.
        #[arg(long, value_delimiter = ',', conflicts_with = "uem_layers")]
        p_values: Option<Vec<usize>>,
        /// Comma-separated module depths, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',')]
        uem_layers: Option<Vec<usize>>,
    },
    /// Compare text vs embedding attention cost on the training split.
    CostReport {
        /// Also write a two-column (n, flops) data file here.
        #[arg(long)]
        data_file: Option<PathBuf>,
    },
}

fn resolve_config(common: &Common) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        name: common.name.clone(),
        output_dir: common.output_dir.clone(),
        data_dir: common.data_dir.clone(),
        seed: common.seed,
        mode: common.mode,
        p: common.p,
        steps: common.steps,
        lr: common.lr,
        batch_size: common.batch_size,
    };
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::SynthData => {
            let s = cmd_synth_data(&cfg)?;
            println!(
                "wrote {} users ({} train / {} dev / {} test), {} movies to {}",
                s.users,
                s.train,
                s.dev,
                s.test,
                s.movies,
                s.dir.display()
            );
        }
        Command::Ingest => {
            let r = cmd_ingest(&cfg)?;
            println!(
                "ingested {} users, {} ratings kept ({} unknown-movie rows skipped, \
                 {} duplicates, {} items missing descriptions)",
                r.users,
                r.ratings_kept,
                r.skipped_unknown_movie,
                r.duplicate_rows,
                r.missing_descriptions
            );
        }
        Command::Train => {
            let o = cmd_train(&cfg)?;
            println!(
                "trained {} steps, final loss {:.4}, prompt-shape violations {}",
                o.steps, o.final_loss, o.prompt_shape_violations
            );
            if let Some(f1) = o.final_dev_f1 {
                println!("dev weighted F1 {f1:.4}");
            }
            println!("checkpoint: {}", o.checkpoint.display());
            println!("metrics:    {}", o.metrics.display());
        }
        Command::Evaluate { split, table } => {
            let report = cmd_evaluate(&cfg, split)?;
            if table {
                print!("{}", render_table(&[(cfg.run.mode.as_str(), &report)]));
            } else {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
            }
        }
        Command::Baseline { split, table } => {
            let report = cmd_baseline(&cfg, split)?;
            if table {
                print!("{}", render_table(&[("baseline", &report)]));
            } else {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
            }
        }
        Command::Ablate { p_values, uem_layers } => {
            let axis = match (p_values, uem_layers) {
                (Some(vs), None) => SweepAxis::HistoryLength(vs),
                (None, Some(vs)) => SweepAxis::ModuleLayers(vs),
                _ => {
                    return Err(HarnessError::Config(userlm::config::ConfigError::Invalid {
                        field: "ablate".into(),
                        msg: "pass exactly one of --p-values or --uem-layers".into(),
                    }))
                }
            };
            let rows = cmd_ablate(&cfg, &axis)?;
            print!("{}", render_ablate_table(&rows));
        }
        Command::CostReport { data_file } => {
            let outcome = cmd_cost_report(&cfg, data_file.as_deref())?;
            print!("{}", render_cost_outcome(&outcome));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
