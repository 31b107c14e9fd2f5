//! `daa`: synthetic corpora, experiment runs, weight sweeps, evaluation and
//! reports.
//!
//! Exit status: 0 success, 2 usage or configuration error, 3 data error,
//! 4 runtime failure.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use daa_core::cooccur::{ScheduleMode, SirMode};
use daa_core::experiment::{self, ExperimentConfig, Method, MldaWords};
use daa_core::{load_corpus, synth, write_corpus, Error};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::InvalidArgument(_)) => 2,
            CliError::Core(
                Error::Io { .. }
                | Error::Json { .. }
                | Error::Csv { .. }
                | Error::Data { .. }
                | Error::DanglingObject { .. }
                | Error::MissingLabels(_)
                | Error::UtteranceTooLong { .. },
            ) => 3,
            CliError::Core(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "daa", version, about = "Unsupervised word discovery with co-occurrence cues")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground truth.
    Synth {
        /// TOML file; its [synth] table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run trials of one method.
    Run(RunArgs),
    /// Run once per word-modality weight.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated word weights (default 0,10,...,300).
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
    },
    /// Score saved predictions of one trial against corpus labels.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// A trial directory holding final_segmentation.csv and/or
        /// final_categories.json.
        #[arg(long)]
        pred: PathBuf,
        /// CSV destination (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate the metrics of run directories (mean and std over trials).
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    NpbDaa,
    MldaOnly,
    HdpHsmmMlda,
    CooccurDaa,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::NpbDaa => Method::NpbDaa,
            MethodArg::MldaOnly => Method::MldaOnly,
            MethodArg::HdpHsmmMlda => Method::HdpHsmmMlda,
            MethodArg::CooccurDaa => Method::CooccurDaa,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SirArg {
    Ur,
    Mi,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Fixed,
    Increase,
    Decrease,
}

#[derive(Clone, Copy, ValueEnum)]
enum WordsArg {
    None,
    GroundTruth,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file (may name a `preset`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset when the file names none.
    #[arg(long, default_value = "desk-fast")]
    preset: String,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corpus directory (otherwise the configured synthetic corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Write per-iteration checkpoints.
    #[arg(long)]
    dump_state: bool,
    #[arg(long, value_enum)]
    sir_mode: Option<SirArg>,
    #[arg(long, value_enum)]
    word_weight_schedule: Option<ScheduleArg>,
    /// Word input of mlda-only.
    #[arg(long, value_enum)]
    mlda_words: Option<WordsArg>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = config::load(self.config.as_deref(), &self.preset)?;
        if let Some(m) = self.method {
            c.method = m.into();
        }
        if let Some(s) = self.seed {
            c.seed = s;
            c.seeds.clear();
        }
        if let Some(t) = self.trials {
            c.trials = t;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if let Some(d) = &self.corpus {
            c.corpus = Some(d.clone());
        }
        if self.dump_state {
            c.dump_state = true;
        }
        if let Some(s) = self.sir_mode {
            c.run.sir_mode = match s {
                SirArg::Ur => SirMode::Ur,
                SirArg::Mi => SirMode::Mi,
            };
        }
        if let Some(s) = self.word_weight_schedule {
            c.run.word_weight.mode = match s {
                ScheduleArg::Fixed => ScheduleMode::Fixed,
                ScheduleArg::Increase => ScheduleMode::Increase,
                ScheduleArg::Decrease => ScheduleMode::Decrease,
            };
        }
        if let Some(w) = self.mlda_words {
            c.mlda_words = match w {
                WordsArg::None => MldaWords::None,
                WordsArg::GroundTruth => MldaWords::GroundTruth,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let mut spec = config::load(config.as_deref(), "desk-fast")?.synth;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (corpus, truth) = synth::generate(&spec)?;
            write_corpus(&corpus, &out)?;
            let gt = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
            write_output(Some(&out.join(experiment::GROUND_TRUTH_FILE)), &gt)?;
            log::info!(
                "wrote {} utterances over {} objects to {}",
                corpus.utterances.len(),
                corpus.objects.len(),
                out.display()
            );
        }
        Command::Run(args) => {
            let c = args.resolve()?;
            let rows = experiment::run_experiment(&c)?;
            log::info!("{} trials of {} written to {}", rows.len(), c.method, c.out.display());
        }
        Command::Sweep { run, weights } => {
            let mut c = run.resolve()?;
            if run.method.is_none() && run.config.is_none() {
                c.method = Method::MldaOnly;
                c.mlda_words = MldaWords::GroundTruth;
            }
            let weights = if weights.is_empty() {
                (0..=30).map(|i| i as f64 * 10.0).collect()
            } else {
                weights
            };
            let rows = experiment::sweep(&c, &weights)?;
            log::info!("{} sweep rows written to {}", rows.len(), c.out.join("sweep.csv").display());
        }
        Command::Eval { corpus, pred, out } => {
            let corpus = load_corpus(&corpus)?;
            let rows = experiment::evaluate_predictions(&corpus, &pred)?;
            let mut text = String::from("target,metric,value\n");
            for (target, metric, value) in rows {
                text.push_str(&format!("{target},{metric},{value}\n"));
            }
            write_output(out.as_deref(), &text)?;
        }
        Command::Report { runs, out } => {
            let s = experiment::report(&runs, &out)?;
            log::info!("{} summary rows written to {}", s.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
