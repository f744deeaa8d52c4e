use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use cira_core::baseline::CueLexicon;
use cira_core::evaluation::{evaluate, evaluate_parallel, load_dataset, to_jsonl, DatasetFormat, LabeledDataset};
use cira_core::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, TrainOptions};
use cira_core::synthetic::templated_corpus;
use cira_core::syntax::EnrichmentMode;
use cira_core::tokenizer::{build_vocab, Vocabulary};
use cira_service::{router, AppState, Backend, FeedbackStore};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cira", version, about = "Causality detection for requirement sentences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Classify one sentence.
    Classify(ClassifyArgs),
    /// Score a classifier on a labeled dataset.
    Eval(EvalArgs),
    /// Run the REST service.
    Serve(ServeArgs),
    /// Build a WordPiece vocabulary from a corpus.
    BuildVocab(BuildVocabArgs),
    /// Write a templated labeled corpus as JSONL.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// Trained checkpoint to load.
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Use the cue-phrase baseline instead of a trained model.
    #[arg(long)]
    baseline: bool,
    /// Cue lexicon for the baseline, one phrase per line.
    #[arg(long, requires = "baseline")]
    lexicon: Option<PathBuf>,
    /// Expected enrichment mode; must match the checkpoint.
    #[arg(long, conflicts_with = "baseline")]
    mode: Option<EnrichmentMode>,
}

impl BackendArgs {
    fn load(&self) -> anyhow::Result<Backend> {
        if self.baseline {
            let lexicon = match &self.lexicon {
                Some(path) => CueLexicon::load(path)?,
                None => CueLexicon::default(),
            };
            return Ok(Backend::Baseline(lexicon));
        }
        let path = self.checkpoint.as_ref().expect("clap enforces a backend");
        let model = load_checkpoint(path)?;
        if let Some(mode) = self.mode {
            if mode != model.config.mode {
                bail!(
                    "checkpoint {} was trained with --mode {}, not {mode}",
                    path.display(),
                    model.config.mode
                );
            }
        }
        Ok(Backend::Trained(Arc::new(model)))
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training data (.jsonl or .csv).
    #[arg(long)]
    data: PathBuf,
    /// Where to write the checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Existing vocabulary file; built from the training texts when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = EnrichmentMode::default())]
    mode: EnrichmentMode,
    #[arg(long, default_value_t = 64)]
    seq_len: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Held-out data scored after training.
    #[arg(long)]
    eval: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// Sentence to classify; read from stdin when absent.
    #[arg(long)]
    text: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// Labeled dataset (.jsonl or .csv).
    #[arg(long)]
    data: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Require this class split, written CAUSAL/NON_CAUSAL (e.g. 32/29).
    #[arg(long, value_parser = parse_split)]
    expect_split: Option<(usize, usize)>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// TCP port; 0 picks a free one.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Feedback log file.
    #[arg(long, default_value = "feedback.jsonl")]
    store: PathBuf,
    /// Directory of static UI assets served at /.
    #[arg(long)]
    ui: Option<PathBuf>,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// A labeled dataset (.jsonl/.csv) or plain text with one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
    #[arg(long, default_value_t = 8000)]
    max_size: usize,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_split(s: &str) -> Result<(usize, usize), String> {
    let (c, n) = s.split_once('/').ok_or("expected CAUSAL/NON_CAUSAL")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(c)?, parse(n)?))
}

fn load_labeled(path: &Path) -> anyhow::Result<LabeledDataset> {
    Ok(load_dataset(path, DatasetFormat::from_path(path)?)?)
}

fn corpus_texts(path: &Path) -> anyhow::Result<Vec<String>> {
    if let Ok(format) = DatasetFormat::from_path(path) {
        let dataset = load_dataset(path, format)?;
        return Ok(dataset.examples().iter().map(|e| e.text.clone()).collect());
    }
    let contents = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(contents.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect())
}

fn score(backend: &Backend, dataset: &LabeledDataset) -> anyhow::Result<cira_core::evaluation::EvaluationReport> {
    Ok(match backend {
        Backend::Baseline(_) => evaluate(|text| backend.classify(text), dataset)?,
        Backend::Trained(model) => evaluate_parallel(|text| model.classify(text), dataset)?,
    })
}

fn run_train(args: TrainArgs) -> anyhow::Result<()> {
    let data = load_labeled(&args.data)?;
    let vocab = match &args.vocab {
        Some(path) => Vocabulary::load(path)?,
        None => {
            let texts: Vec<&str> = data.examples().iter().map(|e| e.text.as_str()).collect();
            build_vocab(&texts, 1, 8000)?
        }
    };
    let config = ModelConfig {
        seq_len: args.seq_len,
        seed: args.seed,
        mode: args.mode,
        ..ModelConfig::desk(vocab.len())
    };
    let mut model = Model::initialize(config, vocab)?;
    let options = TrainOptions {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
    };
    let started = Instant::now();
    let losses = model.fit(&data, &options)?;
    for (epoch, loss) in losses.iter().enumerate() {
        tracing::info!("epoch {:>2}  loss {loss:.4}", epoch + 1);
    }
    save_checkpoint(&model, &args.out)?;
    eprintln!(
        "trained on {} examples in {:.1}s, wrote {}",
        data.len(),
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    if let Some(path) = &args.eval {
        println!("{}", score(&Backend::Trained(Arc::new(model)), &load_labeled(path)?)?);
    }
    Ok(())
}

fn run_classify(args: ClassifyArgs) -> anyhow::Result<()> {
    let backend = args.backend.load()?;
    let text = match args.text {
        Some(text) => text,
        None => {
            let mut buf = String::new();
            std::io::stdin().read_to_string(&mut buf).context("reading stdin")?;
            buf
        }
    };
    let prediction = backend.classify(text.trim_end_matches(['\r', '\n']))?;
    println!("{} {:.3}", prediction.label, prediction.confidence);
    Ok(())
}

fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    let backend = args.backend.load()?;
    let dataset = load_labeled(&args.data)?;
    if let Some((causal, non_causal)) = args.expect_split {
        dataset.check_split(causal, non_causal)?;
    }
    let report = score(&backend, &dataset)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        println!("{report}");
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = terminate => {}
    }
}

fn run_serve(args: ServeArgs) -> anyhow::Result<()> {
    let backend = args.backend.load()?;
    let store = FeedbackStore::open(&args.store)?;
    tracing::info!("{} records in {}", store.len(), store.path().display());
    let app = router(AppState::new(backend, store), args.ui.as_deref());
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.bind.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.bind, args.port))?;
        let addr: SocketAddr = listener.local_addr()?;
        eprintln!("listening on http://{addr}");
        axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).await?;
        Ok(())
    })
}

fn run_build_vocab(args: BuildVocabArgs) -> anyhow::Result<()> {
    let texts = corpus_texts(&args.corpus)?;
    let vocab = build_vocab(&texts, args.min_freq, args.max_size)?;
    vocab.save(&args.out)?;
    eprintln!("wrote {} tokens to {}", vocab.len(), args.out.display());
    Ok(())
}

fn run_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let dataset = templated_corpus(args.size, args.seed, &CueLexicon::default());
    std::fs::write(&args.out, to_jsonl(&dataset)).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Classify(args) => run_classify(args),
        Command::Eval(args) => run_eval(args),
        Command::Serve(args) => run_serve(args),
        Command::BuildVocab(args) => run_build_vocab(args),
        Command::Generate(args) => run_generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
