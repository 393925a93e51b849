use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hotspot_cli::ablate::{run_ablate, AblateGrid};
use hotspot_cli::config::PipelineConfig;
use hotspot_cli::error::PipelineError;
use hotspot_cli::stages::{run_stage, Stage};
use hotspot_cli::synth;

/// Grid-based spatial analysis pipeline: point events in, trained per-cell
/// classifier, baselines, and heat maps out.
#[derive(Parser)]
#[command(name = "hotspot", version, about)]
struct Cli {
    /// Config file of `key = value` lines; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Work directory for artifacts (overrides config and HOTSPOT_WORK_DIR).
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,

    /// Override one config key, e.g. --set gcn_hidden=64.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Recompute even when up-to-date artifacts exist.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, clean, and bbox-filter the raw CSV into the records artifact.
    Ingest,
    /// Build occupied cells, proximity edges, features, labels, and splits.
    Graph,
    /// Train the graph convolutional network.
    Train,
    /// Kernel-density hotspot baseline.
    BaselineKde,
    /// RBF-kernel SVM baseline on the same dataset and split.
    BaselineSvm,
    /// Evaluate the trained model on the test mask.
    Eval,
    /// Export per-class probability heat maps (GeoJSON + PPM).
    Heatmap,
    /// Model-comparison table from the persisted metrics.
    Report,
    /// Generate a synthetic event CSV from the configured mixtures.
    Synth(SynthArgs),
    /// Sweep hidden width, depth, dropout, and learning rate.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output CSV path; defaults to the configured raw_csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Hidden layer widths to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 128, 256])]
    hidden: Vec<usize>,
    /// Total layer counts to sweep (2 = one hidden layer).
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 3])]
    layers: Vec<usize>,
    /// Dropout rates to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.3, 0.5])]
    dropout: Vec<f64>,
    /// Learning rates to sweep.
    #[arg(long = "lr", value_delimiter = ',', default_values_t = vec![0.01, 0.001])]
    learning_rate: Vec<f64>,
    /// Output CSV path; defaults to ablate-<hash>.csv in the work dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    for pair in &cli.overrides {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            PipelineError::Config(format!("--set expects KEY=VALUE, got {pair:?}"))
        })?;
        config.apply(key.trim(), value.trim())?;
    }
    Ok(config)
}

fn resolve_work_dir(cli: &Cli, config: &PipelineConfig) -> PathBuf {
    if let Some(dir) = &cli.work_dir {
        return dir.clone();
    }
    if config.work_dir.as_os_str() != "work" {
        return config.work_dir.clone();
    }
    std::env::var_os("HOTSPOT_WORK_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| config.work_dir.clone())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = resolve_config(&cli)?;
    let work_dir = resolve_work_dir(&cli, &config);

    let stage = match &cli.command {
        Command::Ingest => Some(Stage::Ingest),
        Command::Graph => Some(Stage::Graph),
        Command::Train => Some(Stage::Train),
        Command::BaselineKde => Some(Stage::BaselineKde),
        Command::BaselineSvm => Some(Stage::BaselineSvm),
        Command::Eval => Some(Stage::Eval),
        Command::Heatmap => Some(Stage::Heatmap),
        Command::Report => Some(Stage::Report),
        _ => None,
    };
    if let Some(stage) = stage {
        run_stage(stage, &config, &work_dir, cli.force)?;
        return Ok(());
    }

    match cli.command {
        Command::Synth(args) => {
            let out = args.out.unwrap_or_else(|| config.raw_csv.clone());
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let n = synth::generate_csv(&config, &out)?;
            eprintln!("synth: wrote {n} events to {}", out.display());
            Ok(())
        }
        Command::Ablate(args) => {
            std::fs::create_dir_all(&work_dir)?;
            let grid = AblateGrid {
                hidden: args.hidden,
                layers: args.layers,
                dropout: args.dropout,
                learning_rate: args.learning_rate,
            };
            let path = run_ablate(&config, &work_dir, &grid, args.out)?;
            eprintln!("ablate: wrote {}", path.display());
            Ok(())
        }
        _ => unreachable!("stage commands handled above"),
    }
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
