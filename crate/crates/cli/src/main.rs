use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anycostfl::checkpoint::{self, save_checkpoint};
use anycostfl::codec::{self, calibrate_predictor, default_grid};
use anycostfl::metrics::{emit_metrics, write_metrics, Format};
use anycostfl::model::local_train;
use anycostfl::rng::{self, Purpose};
use anycostfl::{Error, ExperimentConfig, MetricsRow, Mode, Simulation};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "anycostfl", version, about = "Resource-constrained federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write per-round metrics.
    Run {
        #[command(flatten)]
        common: Common,
        /// Metrics file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[arg(long)]
        mode: Option<Mode>,
        /// Also save the final global model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit a rate predictor on local-training updates and write it as JSON.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the header of a checkpoint or encoded update.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anycostfl::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if self.seed.is_some() {
            config.seed = self.seed;
        }
        Ok(config)
    }
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn run(
    common: &Common,
    output: Option<&Path>,
    format: Format,
    mode: Option<Mode>,
    checkpoint_path: Option<&Path>,
) -> Result<(), Failure> {
    let mut config = common.load()?;
    if let Some(mode) = mode {
        config.mode = mode;
    }
    config.validate()?;
    let mut sim = Simulation::new(&config)?;
    let report = sim.run()?;
    let rows: Vec<MetricsRow> = report.rounds.iter().map(MetricsRow::from).collect();
    match output {
        Some(path) => emit_metrics(&rows, format, path)?,
        None => {
            let stdout = std::io::stdout();
            write_metrics(&rows, format, stdout.lock())?;
        }
    }
    if let Some(path) = checkpoint_path {
        save_checkpoint(sim.model(), path)?;
    }
    for r in report.rounds.iter().filter_map(|r| r.warning.as_ref().map(|w| (r.round, w))) {
        eprintln!("round {}: {}", r.0, r.1);
    }
    if let Some(last) = report.final_round() {
        eprintln!(
            "initial loss {:.4}, final loss {:.4}, final accuracy {:.4}, min gain {:.4}",
            report.initial.loss,
            last.loss,
            last.accuracy,
            report.g_min()
        );
    }
    Ok(())
}

fn calibrate(common: &Common, samples: usize, output: &Path) -> Result<(), Failure> {
    if samples == 0 {
        return Err(Failure::Config(Error::Config(vec!["--samples must be at least 1".into()])));
    }
    let config = common.load()?;
    config.validate()?;
    let seed = config.seed()?;
    let sim = Simulation::new(&config)?;
    let shards = sim.shards();
    let t = &config.training;
    let updates = (0..samples)
        .map(|i| {
            let mut rng = rng::stream(seed, Purpose::Calibrate, u64::MAX, i as u64);
            local_train(sim.model(), &shards[i % shards.len()], t.local_epochs, t.learning_rate, t.batch_size, &mut rng)
        })
        .collect::<anycostfl::Result<Vec<_>>>()?;
    let predictor = calibrate_predictor(&updates, &default_grid(), seed)?;
    predictor.save(output)?;
    eprintln!("{} curve points written to {}", predictor.curve.len(), output.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<(), Failure> {
    let bytes = std::fs::read(path).map_err(Error::from)?;
    let summary = if bytes.starts_with(&checkpoint::MAGIC) {
        let (arch, version) = checkpoint::read_checkpoint_header(&bytes)?;
        json!({
            "kind": "checkpoint",
            "model_version": version,
            "input_dim": arch.input_dim,
            "hidden_sizes": arch.hidden_sizes,
            "output_dim": arch.output_dim,
            "activation": arch.activation,
            "params": arch.param_count(),
        })
    } else if bytes.starts_with(&codec::MAGIC) {
        let (update, alpha, beta) = codec::decode_update(&bytes)?;
        let layers: Vec<_> = update
            .layers
            .iter()
            .map(|l| {
                json!({
                    "elements": l.element_count,
                    "nonzero": l.level_indices.len(),
                    "levels": l.levels,
                    "u_min": l.u_min,
                    "u_max": l.u_max,
                })
            })
            .collect();
        json!({
            "kind": "update",
            "bytes": bytes.len(),
            "alpha": alpha,
            "beta": beta,
            "layers": layers,
        })
    } else {
        return Err(Failure::Runtime(Error::CorruptStream(format!(
            "{}: neither a checkpoint nor an encoded update",
            path.display()
        ))));
    };
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &summary).map_err(Error::from)?;
    writeln!(out).map_err(Error::from)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            common,
            output,
            format,
            mode,
            checkpoint,
        } => run(common, output.as_deref(), *format, *mode, checkpoint.as_deref()),
        Command::Calibrate { common, samples, output } => calibrate(common, *samples, output),
        Command::Inspect { path } => inspect(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
