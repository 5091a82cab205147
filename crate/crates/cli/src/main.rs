//! `vulnembed` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use vulnembed::classifier::{BugCountConfig, DualConfig};
use vulnembed::context_ranker::FilterBounds;
use vulnembed::embedding::{EmbeddingDims, TrainConfig};
use vulnembed::feedback::AdjustmentConfig;
use vulnembed::pipeline::{self, Engine, PipelineError, PipelineSettings};
use vulnembed::store::Store;
use vulnembed_server::ServerConfig;

const EXIT_USAGE: u8 = 2;
const EXIT_MISSING: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(name = "vulnembed", version, about = "Code embeddings and vulnerability prediction for C sources")]
struct Cli {
    /// Artifact store directory.
    #[arg(long, global = true, default_value = "store")]
    store: PathBuf,
    /// TOML file with [embedding], [classifier], [bug_count], [feedback] and [server] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a C source tree into path contexts and vocabularies.
    Extract {
        src: PathBuf,
        /// JSONL label rows keyed by function id.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Count contexts and drop those outside the frequency bounds.
    Rank {
        #[arg(long)]
        min_count: Option<u64>,
        #[arg(long)]
        max_count: Option<u64>,
    },
    /// Train the embedding model on the filtered corpus.
    TrainEmbeddings(TrainEmbeddingsArgs),
    /// Export one code vector per function.
    Vectors,
    /// Aggregate member vectors per module.
    Aggregates,
    /// Train the dual CWE classifier and the bug-count ensemble.
    TrainClassifier,
    /// Fine-tune the classifier on validated labels.
    FineTune {
        #[arg(long)]
        validated: PathBuf,
        /// Fail when accuracy on the stored labels drops too far.
        #[arg(long)]
        check_forgetting: bool,
    },
    /// Predict every indexed function and write a report.
    Scan {
        /// Only functions whose module id starts with this prefix.
        #[arg(long)]
        component: Option<String>,
        #[arg(long, default_value = "batch")]
        id: String,
        /// Also write the report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clone-detection accuracy per distance threshold, as CSV.
    SweepThreshold {
        /// JSONL pairs {"a", "b", "similar"}.
        #[arg(long)]
        pairs: PathBuf,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        thresholds: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Vote-log maintenance.
    Feedback {
        #[command(subcommand)]
        action: FeedbackAction,
    },
}

#[derive(Args)]
struct TrainEmbeddingsArgs {
    #[arg(long)]
    epochs: Option<usize>,
    /// Token, path and code dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Continue from the stored model instead of starting fresh.
    #[arg(long)]
    warm_start: bool,
    #[arg(long)]
    target_accuracy: Option<f64>,
}

#[derive(Subcommand)]
enum FeedbackAction {
    /// Rebuild vector overlays from the vote log.
    Apply {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        guard: Option<f64>,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    embedding: TrainConfig,
    classifier: DualConfig,
    bug_count: BugCountConfig,
    feedback: AdjustmentConfig,
    server: Option<ServerConfig>,
}

struct Failure {
    exit: u8,
    code: &'static str,
    detail: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let exit = if e.is_missing_prerequisite() { EXIT_MISSING } else { EXIT_DATA };
        Self { exit, code: e.code(), detail: e.to_string() }
    }
}

fn usage(detail: impl ToString) -> Failure {
    Failure { exit: EXIT_USAGE, code: "usage", detail: detail.to_string() }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { exit: EXIT_DATA, code: "io_failure", detail: format!("{}: {e}", path.display()) }
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| io_failure(path, e))
}

fn load_config(path: Option<&Path>, seed: u64) -> Result<FileConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            toml::from_str::<FileConfig>(&text).map_err(usage)?
        }
        None => FileConfig::default(),
    };
    cfg.embedding.seed = seed;
    cfg.classifier.net.seed = seed;
    cfg.bug_count.network.seed = seed;
    cfg.bug_count.linear.seed = seed;
    Ok(cfg)
}

fn open_store(path: &Path) -> Result<Store, Failure> {
    Ok(Store::open(path).map_err(PipelineError::from)?)
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| io_failure(p, e)),
        None => {
            print!("{}", String::from_utf8_lossy(bytes));
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Extract { src, labels } => {
            let store = if cli.store.join("manifest.json").exists() {
                open_store(&cli.store)?
            } else {
                Store::init(&cli.store).map_err(PipelineError::from)?
            };
            let labels = labels.as_deref().map(read_input).transpose()?;
            let settings = PipelineSettings { seed: cli.seed, ..PipelineSettings::default() };
            print_json(&pipeline::extract(&store, &src, labels.as_deref(), &settings)?);
        }
        Command::Rank { min_count, max_count } => {
            let store = open_store(&cli.store)?;
            let bounds = if min_count.is_some() || max_count.is_some() {
                let current = pipeline::load_settings(&store)?.bounds;
                let b = FilterBounds::new(min_count.unwrap_or(current.min_count), max_count.unwrap_or(current.max_count))
                    .map_err(usage)?;
                Some(b)
            } else {
                None
            };
            print_json(&pipeline::rank(&store, bounds)?);
        }
        Command::TrainEmbeddings(args) => {
            let store = open_store(&cli.store)?;
            let mut train = cfg.embedding;
            if let Some(e) = args.epochs {
                train.epochs = e;
            }
            if let Some(d) = args.dim {
                train.dims = EmbeddingDims::uniform(d);
            }
            if let Some(lr) = args.lr {
                train.learning_rate = lr;
            }
            if args.target_accuracy.is_some() {
                train.target_accuracy = args.target_accuracy;
            }
            print_json(&pipeline::train_embedding_model(&store, &train, args.warm_start)?);
        }
        Command::Vectors => {
            let store = open_store(&cli.store)?;
            print_json(&serde_json::json!({ "vectors": pipeline::build_vectors(&store)? }));
        }
        Command::Aggregates => {
            let store = open_store(&cli.store)?;
            print_json(&serde_json::json!({ "modules": pipeline::build_aggregates(&store)?.len() }));
        }
        Command::TrainClassifier => {
            let store = open_store(&cli.store)?;
            print_json(&pipeline::train_classifier(&store, &cfg.classifier, &cfg.bug_count)?);
        }
        Command::FineTune { validated, check_forgetting } => {
            let store = open_store(&cli.store)?;
            let bytes = read_input(&validated)?;
            print_json(&pipeline::fine_tune(&store, &bytes, &cfg.classifier, check_forgetting)?);
        }
        Command::Scan { component, id, out } => {
            let store = open_store(&cli.store)?;
            let options = cfg.server.unwrap_or_default().engine_options();
            let engine = Engine::load(&store, options)?;
            let report = engine.scan(&id, component.as_deref())?;
            Engine::persist_report(&store, &report)?;
            if let Some(p) = out {
                let bytes = serde_json::to_vec_pretty(&report).expect("serializable");
                std::fs::write(&p, bytes).map_err(|e| io_failure(&p, e))?;
            }
            let flagged = report.rows.iter().filter(|r| !r.flagged.is_empty()).count();
            print_json(&serde_json::json!({ "id": report.id, "rows": report.rows.len(), "flagged": flagged }));
        }
        Command::SweepThreshold { pairs, thresholds, out } => {
            let store = open_store(&cli.store)?;
            let pairs = pipeline::parse_clone_pairs(&read_input(&pairs)?, "pairs")?;
            let rows = pipeline::sweep_threshold(&store, &pairs, &thresholds)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).expect("in-memory csv");
            }
            write_output(out.as_deref(), &w.into_inner().expect("in-memory csv"))?;
        }
        Command::Serve { host, port } => {
            let mut server = cfg.server.unwrap_or_default();
            server.store = cli.store;
            server.apply_env(|k| std::env::var(k).ok()).map_err(usage)?;
            if let Some(h) = host {
                server.host = h;
            }
            if let Some(p) = port {
                server.port = p;
            }
            let runtime = tokio::runtime::Runtime::new().map_err(|e| io_failure(Path::new("runtime"), e))?;
            runtime
                .block_on(vulnembed_server::serve(server))
                .map_err(|e| Failure { exit: EXIT_DATA, code: "io_failure", detail: e.to_string() })?;
        }
        Command::Feedback { action: FeedbackAction::Apply { alpha, guard } } => {
            let store = open_store(&cli.store)?;
            let mut adj = cfg.feedback;
            if let Some(a) = alpha {
                adj.step_scale = a;
            }
            if let Some(g) = guard {
                adj.guard = g;
            }
            adj.validate().map_err(usage)?;
            print_json(&serde_json::json!({ "adjusted": pipeline::apply_vote_log(&store, &adj)? }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::json!({ "error": f.code, "detail": f.detail }));
            ExitCode::from(f.exit)
        }
    }
}
