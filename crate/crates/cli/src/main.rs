mod commands;
mod diag;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use pii_core::client::ClientError;

/// Prompt-in-image evaluation: condition inputs, run models, score and
/// analyse.
#[derive(Debug, Parser)]
#[command(name = "pii", version)]
struct Cli {
    /// Run configuration (TOML); supplies defaults for `run` and `condition`.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render baseline, control, prompt-in-image and hybrid inputs.
    Condition(ConditionArgs),
    /// Build an item manifest from POPE or COCO annotations.
    Corpus {
        #[command(subcommand)]
        source: CorpusSource,
    },
    /// Run (or resume) an evaluation campaign against a chat-completions endpoint.
    Run(RunArgs),
    /// Score a run's transcripts.
    Score(ScoreArgs),
    /// Analyse exported tensor dumps.
    Diag(DiagArgs),
    /// Compare metric reports across settings.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ConditionArgs {
    /// Directory that relative image paths are resolved against.
    #[arg(long, value_name = "DIR")]
    images: PathBuf,
    /// Item manifest (JSON lines) or `image<TAB>question` lines.
    #[arg(long, value_name = "FILE")]
    questions: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    mode: ModeArg,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    font_px: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Baseline,
    Control,
    Pii,
    Hybrid,
    All,
}

#[derive(Debug, Subcommand)]
enum CorpusSource {
    /// POPE question file (JSON lines).
    Pope {
        #[arg(long, value_name = "FILE")]
        annotations: PathBuf,
        #[arg(long, value_name = "DIR")]
        images: PathBuf,
        /// Sample size; all items when omitted.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "OUT")]
        manifest: PathBuf,
    },
    /// COCO instance annotations for the captioning task.
    Coco {
        #[arg(long, value_name = "FILE")]
        instances: PathBuf,
        #[arg(long, value_name = "DIR")]
        images: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "OUT")]
        manifest: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_name = "MANIFEST")]
    items: PathBuf,
    #[arg(long, value_name = "RUN_DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Pope,
    Chair,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(value_enum)]
    task: Task,
    #[arg(long, value_name = "RUN_DIR")]
    run: PathBuf,
    #[arg(long, value_name = "MANIFEST")]
    items: PathBuf,
    /// `phrase<TAB>category` synonym file; the bundled COCO lexicon otherwise.
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    #[arg(long, value_name = "REPORT")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Analysis {
    Attn,
    Bias,
    Sim,
    Gap,
    Pca,
}

#[derive(Debug, Args)]
struct DiagArgs {
    #[arg(value_enum)]
    analysis: Analysis,
    #[arg(long, value_name = "DIR")]
    dumps: PathBuf,
    /// 1-based layers, comma separated; every layer when omitted.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Metric reports written by `score`.
    #[arg(long, num_args = 1.., required = true, value_name = "REPORT")]
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "baseline")]
    baseline: String,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// Exit codes.
const OK: u8 = 0;
const USAGE: u8 = 1;
const DATA: u8 = 2;
const ENDPOINT: u8 = 3;

/// Command-line misuse detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if cause.downcast_ref::<ClientError>().is_some_and(ClientError::is_endpoint_error) {
            return ENDPOINT;
        }
    }
    DATA
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { OK });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("PII_LOG").unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    match dispatch(cli) {
        Ok(()) => ExitCode::from(OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Condition(a) => {
            let modes = match a.mode {
                ModeArg::All => pii_core::conditioner::Condition::ALL.to_vec(),
                ModeArg::Baseline => vec![pii_core::conditioner::Condition::Baseline],
                ModeArg::Control => vec![pii_core::conditioner::Condition::Control],
                ModeArg::Pii => vec![pii_core::conditioner::Condition::PromptInImage],
                ModeArg::Hybrid => vec![pii_core::conditioner::Condition::Hybrid],
            };
            commands::condition(config, &a.images, &a.questions, &modes, &a.out, a.fraction, a.font_px)
        }
        Command::Corpus { source } => match source {
            CorpusSource::Pope { annotations, images, n, seed, manifest } => {
                commands::corpus_pope(&annotations, &images, n, seed, &manifest)
            }
            CorpusSource::Coco { instances, images, n, seed, manifest } => {
                commands::corpus_coco(&instances, &images, n, seed, &manifest)
            }
        },
        Command::Run(a) => {
            let config = config.ok_or_else(|| UsageError("run needs --config FILE".into()))?;
            commands::run(config, &a.items, &a.out)
        }
        Command::Score(a) => match a.task {
            Task::Pope => commands::score_pope(&a.run, &a.items, &a.out),
            Task::Chair => commands::score_chair(&a.run, &a.items, a.lexicon.as_deref(), &a.out),
        },
        Command::Diag(a) => {
            let layers = a.layers.as_deref();
            match a.analysis {
                Analysis::Attn => diag::attn(&a.dumps, layers, &a.out),
                Analysis::Bias => diag::bias(&a.dumps, layers, &a.out),
                Analysis::Sim => diag::sim(&a.dumps, layers, &a.out),
                Analysis::Gap => diag::gap(&a.dumps, &a.out),
                Analysis::Pca => diag::pca(&a.dumps, &a.out),
            }
        }
        Command::Report(a) => commands::report(&a.reports, &a.baseline, &a.out),
    }
}
