use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctxdep::corpus::InputFormat;
use ctxdep::pipeline::{self, paths, PipelineConfig, Stage};
use ctxdep::Error;

#[derive(Debug, Parser)]
#[command(name = "ctxdep", version, about = "Detect context-dependent messages from response diversity")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory holding every stage's artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "ctxdep-workspace")]
    workspace: PathBuf,

    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Input corpus (defaults to the synth stage's corpus).
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,

    /// Corpus format: jsonl or tsv.
    #[arg(long, global = true, value_name = "FORMAT")]
    format: Option<InputFormat>,

    /// Lowercase tokens (`--lowercase=false` to keep case).
    #[arg(long, global = true, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    lowercase: Option<bool>,

    /// Stopword list, one token per line.
    #[arg(long, global = true, value_name = "PATH")]
    stopwords: Option<PathBuf>,

    /// Minimum corpus count for a token to enter the vocabulary.
    #[arg(long, global = true, value_name = "N")]
    min_count: Option<usize>,

    /// Groups with fewer responses are excluded from signal estimation.
    #[arg(long, global = true, value_name = "N")]
    min_responses: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground-truth labels.
    Synth,
    /// Parse the corpus, group responses by message, build the vocabulary.
    Ingest,
    /// Compute and normalize the response-diversity signals.
    Signals,
    /// Train the signal combiner on labeled corpus messages.
    TrainCombiner,
    /// Score every eligible message with the combiner.
    Weaklabel,
    /// Train the LSTM regressor on the weak labels.
    TrainLstm,
    /// Tune decision thresholds and fit the baselines on the tuning set.
    TuneThreshold,
    /// Write per-system predictions for the test set.
    Predict,
    /// Score predictions against the test labels.
    Evaluate,
    /// Write per-signal label histograms.
    Histogram,
    /// Run every stage in order.
    Run {
        /// Skip the synth stage (use with --corpus and labeled-set paths in the config).
        #[arg(long)]
        no_synth: bool,
    },
    /// Print the effective configuration as JSON.
    PrintConfig,
}

impl GlobalArgs {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(p) = &self.corpus {
            config.corpus = Some(p.clone());
        }
        if let Some(f) = self.format {
            config.format = f;
        }
        if let Some(l) = self.lowercase {
            config.lowercase = l;
        }
        if let Some(p) = &self.stopwords {
            config.stopwords = Some(p.clone());
        }
        if let Some(n) = self.min_count {
            config.min_count = n;
        }
        if let Some(n) = self.min_responses {
            config.min_responses = n;
        }
        config.validate()?;
        Ok(config)
    }
}

fn stages(command: &Command) -> Vec<Stage> {
    match command {
        Command::Synth => vec![Stage::Synth],
        Command::Ingest => vec![Stage::Ingest],
        Command::Signals => vec![Stage::Signals],
        Command::TrainCombiner => vec![Stage::TrainCombiner],
        Command::Weaklabel => vec![Stage::Weaklabel],
        Command::TrainLstm => vec![Stage::TrainLstm],
        Command::TuneThreshold => vec![Stage::TuneThreshold],
        Command::Predict => vec![Stage::Predict],
        Command::Evaluate => vec![Stage::Evaluate],
        Command::Histogram => vec![Stage::Histogram],
        Command::Run { no_synth } => Stage::ALL
            .into_iter()
            .filter(|s| !(*no_synth && *s == Stage::Synth))
            .collect(),
        Command::PrintConfig => Vec::new(),
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = cli.global.config()?;
    if let Command::PrintConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&config.effective())?);
        return Ok(());
    }
    let ws = &cli.global.workspace;
    for stage in stages(&cli.command) {
        let manifest = pipeline::run_stage(ws, stage, &config)?;
        let outputs: Vec<&str> = manifest.outputs.keys().chain(&manifest.logs).map(String::as_str).collect();
        eprintln!("{stage}: wrote {}", outputs.join(", "));
        if stage == Stage::Evaluate {
            let report = std::fs::read_to_string(ws.join(paths::REPORT_TEXT))
                .map_err(|e| Error::Io {
                    path: ws.join(paths::REPORT_TEXT),
                    source: e,
                })?;
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
