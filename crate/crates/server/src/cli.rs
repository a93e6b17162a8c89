use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use clonebot_core::context::{build_training_set, write_training_jsonl, Format, FormatSpec, Tokenizer, WordTokenizer};
use clonebot_core::corpus::{chronological_split, parse_csv, parse_jsonl, ColumnMap, Ingested, DEFAULT_JOINER};
use clonebot_core::evaluation::{perplexity, run_retrieval_eval, write_parallel_tsv, PerplexityReport, RetrievalEvalReport};
use clonebot_core::generation::{Preset, SamplerConfig};
use clonebot_core::index::{HnswParams, IndexKind, Metric};
use clonebot_core::retrieval::BuildOptions;
use serde::Serialize;

use crate::bundle::{read_corpus_bundle, write_corpus_bundle};
use crate::config::{required_path, EngineConfig, IndexChoice, DEFAULT_ADDR, DEFAULT_HISTORY, DEFAULT_TEST_FRACTION, DEFAULT_TTL_SECS};
use crate::engine::{build_engine, Engine, ReplyMode, ReplySettings, Turn};
use crate::error::CliError;
use crate::http::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "clonebot", version, about = "Speaker-cloning retrieval chatbot: corpus ingest, index build, evaluation and chat")]
pub struct Cli {
    /// JSON engine configuration; explicit flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, collapse and split a chat log into a corpus bundle.
    Ingest(IngestArgs),
    /// Build per-speaker retrieval indexes from a corpus bundle's train split.
    BuildEngine(BuildArgs),
    /// Score retrieval (BLEU) and the reference model (perplexity) on the test split.
    Eval(EvalArgs),
    /// Talk to a cloned speaker in the terminal.
    Chat(ChatArgs),
    /// Serve the HTTP chat API.
    Serve(ServeArgs),
    /// Write context-builder training examples as JSONL.
    ExportTraining(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Chat log in JSONL or CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_parser = ["jsonl", "csv"])]
    pub input_format: Option<String>,
    /// Output corpus bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    /// Separator placed between merged same-speaker utterances.
    #[arg(long, default_value = DEFAULT_JOINER)]
    pub joiner: String,
    #[arg(long, default_value = "conversation_id")]
    pub col_conversation: String,
    #[arg(long, default_value = "speaker_id")]
    pub col_speaker: String,
    #[arg(long, default_value = "timestamp")]
    pub col_timestamp: String,
    #[arg(long, default_value = "text")]
    pub col_text: String,
    /// The CSV has no timestamp column; file order is used.
    #[arg(long)]
    pub no_timestamp_column: bool,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Corpus bundle written by `ingest`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output engine bundle directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated speakers to clone; all train speakers by default.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<Metric>,
    #[arg(long, value_parser = parse_index)]
    pub index: Option<IndexChoice>,
    #[arg(long)]
    pub hnsw_m: Option<usize>,
    #[arg(long)]
    pub ef_construction: Option<usize>,
    #[arg(long)]
    pub ef_search: Option<usize>,
    #[arg(long)]
    pub hnsw_seed: Option<u64>,
    /// Embedding dimension (default 1024).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Preceding utterances joined into each stored context.
    #[arg(long)]
    pub context_turns: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub engine: Option<PathBuf>,
    /// Embedder dimension to query with; must match the bundle.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Comma-separated subset of engine targets to evaluate.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Write the query/hypothesis/gold table here.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct SamplerArgs {
    /// Named sampler preset: dialogpt, kogpt2 or convai-medium.
    #[arg(long)]
    pub preset: Option<String>,
    /// 0 disables top-k truncation.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// Context layout fed to the model in sampler mode.
    #[arg(long, default_value = "plain")]
    pub context_format: Format,
}

#[derive(Debug, Args, Clone)]
pub struct ReplyArgs {
    #[arg(long)]
    pub engine: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Candidates returned per reply (default 1).
    #[arg(long)]
    pub k: Option<usize>,
    /// retrieval or sampler.
    #[arg(long)]
    pub mode: Option<ReplyMode>,
    /// Turns of history kept per conversation (default 10).
    #[arg(long)]
    pub history: Option<usize>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Speaker to clone.
    #[arg(long)]
    pub target: String,
    /// Speaker id used for your own turns.
    #[arg(long = "as", default_value = "user")]
    pub as_speaker: String,
    /// Print provenance (matched context and distance) to stderr.
    #[arg(long)]
    pub verbose: bool,
    /// Answer this single message and exit; otherwise read lines from stdin.
    pub message: Option<String>,
    #[command(flatten)]
    pub reply: ReplyArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CLONEBOT_ADDR")]
    pub addr: Option<String>,
    #[arg(long)]
    pub ttl_secs: Option<u64>,
    #[command(flatten)]
    pub reply: ReplyArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the vocabulary here.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value = "per-utterance-speaker")]
    pub format: Format,
    #[arg(long, default_value_t = 10)]
    pub max_turns: usize,
    #[arg(long, default_value_t = clonebot_core::context::DEFAULT_MAX_TOKENS)]
    pub max_tokens: usize,
    /// Export the whole corpus rather than the train split.
    #[arg(long)]
    pub all: bool,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    match s {
        "cosine" => Ok(Metric::CosineViaDot),
        "l2" => Ok(Metric::L2),
        other => Err(format!("unknown metric `{other}` (cosine, l2)")),
    }
}

fn parse_index(s: &str) -> Result<IndexChoice, String> {
    match s {
        "flat" => Ok(IndexChoice::Flat),
        "hnsw" => Ok(IndexChoice::Hnsw),
        other => Err(format!("unknown index `{other}` (flat, hnsw)")),
    }
}

/// Parses `args` and runs the command. Help and version output count as
/// success; every other parse failure is a usage error.
pub fn run_from<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(io::stdout(), "{e}");
                    Ok(())
                }
                _ => {
                    let text = e.render().to_string();
                    let text = text.strip_prefix("error: ").unwrap_or(&text);
                    Err(CliError::Usage(text.trim_end().to_string()))
                }
            };
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::BuildEngine(a) => build(a, &config),
        Command::Eval(a) => eval(a, &config),
        Command::Chat(a) => chat(a, &config),
        Command::Serve(a) => serve(a, &config),
        Command::ExportTraining(a) => export_training(a, &config),
    }
}

fn read_input(args: &IngestArgs) -> Result<Ingested, CliError> {
    let file = File::open(&args.input).map_err(|e| CliError::data(args.input.display(), e))?;
    let csv = match args.input_format.as_deref() {
        Some(f) => f == "csv",
        None => args.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")),
    };
    if csv {
        let columns = ColumnMap {
            conversation_id: args.col_conversation.clone(),
            speaker_id: args.col_speaker.clone(),
            timestamp: (!args.no_timestamp_column).then(|| args.col_timestamp.clone()),
            text: args.col_text.clone(),
        };
        Ok(parse_csv(file, &columns)?)
    } else {
        Ok(parse_jsonl(BufReader::new(file))?)
    }
}

fn ingest(args: IngestArgs) -> Result<(), CliError> {
    if !(args.test_fraction > 0.0 && args.test_fraction < 1.0) {
        return Err(CliError::Usage(format!("--test-fraction {} outside (0, 1)", args.test_fraction)));
    }
    let ingested = read_input(&args)?;
    let report = &ingested.report;
    eprintln!(
        "ingest: {} records read, {} malformed",
        report.total,
        report.malformed.len()
    );
    for m in report.malformed.iter().take(20) {
        eprintln!("  line {}: {}", m.line, m.reason);
    }
    if report.malformed.len() > 20 {
        eprintln!("  ... {} more", report.malformed.len() - 20);
    }
    let corpus = ingested.corpus.collapse(&args.joiner).renumbered();
    let split = chronological_split(&corpus, args.test_fraction)?;
    write_corpus_bundle(&args.out, &corpus, &split, args.test_fraction)?;
    println!(
        "{} conversations, {} utterances ({} train, {} test, realized fraction {:.4})",
        corpus.conversations().len(),
        corpus.len(),
        split.train.len(),
        split.test.len(),
        split.realized_fraction
    );
    Ok(())
}

fn build(args: BuildArgs, config: &EngineConfig) -> Result<(), CliError> {
    let corpus_dir = required_path(args.corpus, config.corpus.as_ref(), "corpus")?;
    let out = required_path(args.out, config.engine.as_ref(), "out")?;
    let bundle = read_corpus_bundle(&corpus_dir)?;
    let train = &bundle.split.train;
    let targets: BTreeSet<String> = if args.targets.is_empty() {
        train.speakers().clone()
    } else {
        args.targets.into_iter().collect()
    };
    if let Some(t) = targets.iter().find(|t| !bundle.corpus.speakers().contains(*t)) {
        return Err(CliError::Data(format!("target `{t}` never speaks in the corpus")));
    }
    let kind = match args.index.or(config.index).unwrap_or(IndexChoice::Flat) {
        IndexChoice::Flat => IndexKind::Flat,
        IndexChoice::Hnsw => {
            let d = HnswParams::default();
            let params = HnswParams {
                m: args.hnsw_m.unwrap_or(d.m),
                ef_construction: args.ef_construction.unwrap_or(d.ef_construction),
                ef_search: args.ef_search.unwrap_or(d.ef_search),
                seed: args.hnsw_seed.unwrap_or(d.seed),
            };
            params.validate()?;
            IndexKind::Hnsw(params)
        }
    };
    let context_turns = args.context_turns.or(config.context_turns).unwrap_or(1);
    if context_turns == 0 {
        return Err(CliError::Usage("--context-turns must be positive".into()));
    }
    let options = BuildOptions {
        metric: args.metric.or(config.metric).unwrap_or(Metric::CosineViaDot),
        kind,
        context_turns,
    };
    let dim = args.dim.or(config.dim).unwrap_or(clonebot_core::embedding::DEFAULT_DIM);
    let engine = build_engine(train, &targets, dim, &options, &out)?;
    let set = &engine.set;
    println!("engine {} ({}, {})", set.fingerprint(), set.metric().name(), set.kind().name());
    for t in set.targets() {
        println!("  {t}: {} responses", set.speaker(t).map_or(0, |s| s.len()));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    embedder_fingerprint: String,
    test_fraction: f64,
    realized_fraction: f64,
    retrieval: RetrievalEvalReport,
    perplexity: Option<PerplexityReport>,
}

fn eval(args: EvalArgs, config: &EngineConfig) -> Result<(), CliError> {
    let corpus_dir = required_path(args.corpus, config.corpus.as_ref(), "corpus")?;
    let engine_dir = required_path(args.engine, config.engine.as_ref(), "engine")?;
    let bundle = read_corpus_bundle(&corpus_dir)?;
    let engine = Engine::load(&engine_dir, args.dim.or(config.dim))?;
    let targets: BTreeSet<String> = if args.targets.is_empty() {
        engine.set.targets().map(str::to_string).collect()
    } else {
        args.targets.into_iter().collect()
    };
    let result = run_retrieval_eval(&bundle.split, &engine.set, &targets)?;
    if let Some(path) = &args.tsv {
        write_parallel_tsv(&result.rows, BufWriter::new(File::create(path)?))?;
    }
    let sequences: Vec<Vec<u32>> = bundle
        .split
        .test
        .utterances()
        .map(|u| engine.tokenizer.encode(&u.text))
        .collect();
    let ppl = if sequences.is_empty() {
        None
    } else {
        Some(perplexity(&engine.lm, &sequences, engine.tokenizer.eos_id())?)
    };
    let output = EvalOutput {
        embedder_fingerprint: engine.set.fingerprint().to_string(),
        test_fraction: bundle.meta.test_fraction,
        realized_fraction: bundle.split.realized_fraction,
        retrieval: result.report,
        perplexity: ppl,
    };
    let text = serde_json::to_string_pretty(&output)?;
    match &args.report {
        Some(path) => fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn sampler_config(args: &SamplerArgs, config: &EngineConfig) -> Result<SamplerConfig, CliError> {
    let mut cfg = match args.preset.as_deref().or(config.preset.as_deref()) {
        Some(name) => name.parse::<Preset>()?.config(),
        None => SamplerConfig::default(),
    };
    if let Some(k) = args.top_k {
        cfg.top_k = (k > 0).then_some(k);
    }
    if let Some(p) = args.top_p {
        cfg.top_p = p;
    }
    if let Some(t) = args.temperature {
        cfg.temperature = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.max_new_tokens {
        cfg.max_new_tokens = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Prepared {
    engine: Engine,
    settings: ReplySettings,
    history: usize,
}

fn prepare(args: &ReplyArgs, config: &EngineConfig) -> Result<Prepared, CliError> {
    let engine_dir = required_path(args.engine.clone(), config.engine.as_ref(), "engine")?;
    let engine = Engine::load(&engine_dir, args.dim.or(config.dim))?;
    let k = args.k.or(config.k).unwrap_or(1);
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let history = args.history.or(config.history).unwrap_or(DEFAULT_HISTORY);
    if history == 0 {
        return Err(CliError::Usage("--history must be positive".into()));
    }
    let format = FormatSpec::new(args.sampler.context_format, history);
    format.validate()?;
    let settings = ReplySettings {
        mode: args.mode.or(config.mode).unwrap_or_default(),
        k,
        sampler: sampler_config(&args.sampler, config)?,
        format,
    };
    Ok(Prepared { engine, settings, history })
}

fn chat(args: ChatArgs, config: &EngineConfig) -> Result<(), CliError> {
    let p = prepare(&args.reply, config)?;
    if !p.engine.has_target(&args.target) {
        return Err(CliError::Data(format!("unknown target speaker `{}`", args.target)));
    }
    let mut history: Vec<Turn> = Vec::new();
    let mut replies = 0u64;
    let mut turn = |text: &str, history: &mut Vec<Turn>| -> Result<Option<String>, CliError> {
        history.push(Turn {
            speaker_id: args.as_speaker.clone(),
            text: text.to_string(),
            timestamp: replies as i64 * 2,
        });
        let reply = p.engine.reply(history, &args.target, &p.settings, replies)?;
        replies += 1;
        if args.verbose {
            if let (Some(ctx), Some(d)) = (&reply.matched_context, reply.distance) {
                eprintln!("[distance {d:.6}] matched: {}", ctx.replace('\n', " / "));
            }
        }
        if let Some(text) = &reply.response_text {
            history.push(Turn {
                speaker_id: args.target.clone(),
                text: text.clone(),
                timestamp: replies as i64 * 2 - 1,
            });
        } else if let Some(reason) = &reply.reason {
            eprintln!("({reason})");
        }
        let excess = history.len().saturating_sub(p.history);
        history.drain(..excess);
        Ok(reply.response_text)
    };

    if let Some(message) = &args.message {
        let message = message.trim();
        if message.is_empty() {
            return Err(CliError::Usage("message must not be empty".into()));
        }
        if let Some(text) = turn(message, &mut history)? {
            println!("{text}");
        }
        return Ok(());
    }
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| CliError::Internal(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(text) = turn(line, &mut history)? {
            writeln!(stdout, "{}: {text}", args.target).map_err(|e| CliError::Internal(e.to_string()))?;
            stdout.flush().map_err(|e| CliError::Internal(e.to_string()))?;
        }
    }
    Ok(())
}

fn serve(args: ServeArgs, config: &EngineConfig) -> Result<(), CliError> {
    let mut reply_args = args.reply.clone();
    if reply_args.engine.is_none() {
        reply_args.engine = std::env::var_os("CLONEBOT_ENGINE").map(PathBuf::from);
    }
    let p = prepare(&reply_args, config)?;
    let addr = args
        .addr
        .or_else(|| config.addr.clone())
        .unwrap_or_else(|| DEFAULT_ADDR.to_string());
    let ttl = Duration::from_secs(args.ttl_secs.or(config.ttl_secs).unwrap_or(DEFAULT_TTL_SECS));
    let state = Arc::new(AppState::new(Arc::new(p.engine), p.settings, p.history, ttl));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on {}", listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })
}

fn export_training(args: ExportArgs, config: &EngineConfig) -> Result<(), CliError> {
    let corpus_dir = required_path(args.corpus, config.corpus.as_ref(), "corpus")?;
    let bundle = read_corpus_bundle(&corpus_dir)?;
    let corpus = if args.all { &bundle.corpus } else { &bundle.split.train };
    let spec = FormatSpec::new(args.format, args.max_turns).with_max_tokens(args.max_tokens);
    spec.validate()?;
    let tok = WordTokenizer::from_corpus(corpus);
    let examples = build_training_set(corpus, &spec, &tok)?;
    write_training_jsonl(&examples, args.format, BufWriter::new(File::create(&args.out)?))?;
    if let Some(path) = &args.vocab {
        write_vocab(&tok, path)?;
    }
    println!("{} examples, vocabulary {}", examples.len(), tok.vocab_size());
    Ok(())
}

fn write_vocab(tok: &WordTokenizer, path: &Path) -> Result<(), CliError> {
    tok.write_vocab(BufWriter::new(File::create(path)?))?;
    Ok(())
}
