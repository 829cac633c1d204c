//! `vmr` — command-line pipeline over embedding traces: synthetic trace
//! generation, structured compression, caption orchestration, query-aware
//! modulation, interleaved assembly, metric evaluation, and the
//! compression-strategy ablation table.
//!
//! Configuration precedence: command-line flags override the `--config` TOML
//! file, which overrides built-in defaults. Every command exits non-zero on
//! any pipeline error, with the error category in the message.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use vmr_core::captions::{
    attach_segments, generate_captions, latency_breakdown, parse_query, parse_query_with_provider,
    precompute_store, read_caption_records_file, segment_video, write_caption_records_file,
    CallLog, CaptionMode, CaptionOptions, CaptionStore, HashProvider, HttpProvider, Provider,
    ProviderAnswer, ProviderRequest, QueryParser, RelevanceAggregation, RequestKind,
};
use vmr_core::config::PipelineConfig;
use vmr_core::embeddings::EmbeddingVector;
use vmr_core::error::{Error, Result};
use vmr_core::eval::ablation::{
    ablation_table_tsv, run_ablation, AblationConfig, CompressionStrategy,
};
use vmr_core::eval::{evaluate, load_eval_files, load_segments_file};
use vmr_core::modulation::{
    attach_scored, modulate_captions, read_scored_captions_file, write_scored_captions_file,
    VbarForm,
};
use vmr_core::sequence::{assemble, footprint, write_sequence_files};
use vmr_core::svc::{compress_sequence, AnchorUpdate};
use vmr_core::synth::{generate, SynthConfig};
use vmr_core::trace::{read_trace_file, write_trace_file, Trace};

const DEFAULT_INSTRUCTION: &str =
    "Report the start and end seconds of the moment that matches the query.";

#[derive(Parser)]
#[command(
    name = "vmr",
    version,
    about = "Video-moment-retrieval preprocessing pipeline"
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for all randomness (ChaCha8).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress informational notes on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding trace with planted plateaus.
    GenTrace(GenTraceArgs),
    /// Compress a trace with the anchor-walk SVD merger.
    Compress(CompressArgs),
    /// Generate per-segment captions through a provider.
    Caption(CaptionArgs),
    /// Score captions against a query and re-weight their embeddings.
    Modulate(ModulateArgs),
    /// Assemble the interleaved model-input manifest and vector sidecar.
    Assemble(AssembleArgs),
    /// Compute retrieval metrics from prediction and ground-truth files.
    Eval(EvalArgs),
    /// Compare compression strategies on one trace.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenTraceArgs {
    /// Number of frames.
    #[arg(long, default_value_t = 32)]
    n_frames: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 16)]
    dimension: usize,
    /// Number of near-duplicate plateaus.
    #[arg(long, default_value_t = 3)]
    plateaus: usize,
    /// Per-component Gaussian noise added inside a plateau.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Output trace file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    /// Input trace file.
    trace: PathBuf,
    /// Output (compressed) trace file.
    #[arg(long)]
    out: PathBuf,
    /// Similarity threshold; merges happen strictly above it.
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    /// Truncation rank (1 or 2).
    #[arg(long)]
    rank_k: Option<usize>,
    /// Anchor rule after a merge: compressed | original.
    #[arg(long)]
    anchor_update: Option<String>,
}

#[derive(Args)]
struct CaptionArgs {
    /// Input trace file.
    trace: PathBuf,
    /// Retrieval query text.
    #[arg(long)]
    query: String,
    /// Provider: "mock" (deterministic hash provider) or an http(s) endpoint.
    #[arg(long, default_value = "mock")]
    provider: String,
    /// Operating mode: se (storage-efficient) | le (latency-efficient).
    #[arg(long)]
    mode: Option<String>,
    /// Relevance aggregation across per-term answers: any | all.
    #[arg(long)]
    aggregation: Option<String>,
    /// Query parsing mechanism: lexicon | provider.
    #[arg(long)]
    query_parser: Option<String>,
    /// Segment length in seconds.
    #[arg(long)]
    interval: Option<f64>,
    /// Pre-computed generic caption store (required input for le mode).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Also pre-compute a generic caption store to this path.
    #[arg(long)]
    store_out: Option<PathBuf>,
    /// Per-request timeout for http providers, in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    /// Retry count for http providers.
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Output caption records file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModulateArgs {
    /// Input trace file.
    trace: PathBuf,
    /// Caption records file.
    captions: PathBuf,
    /// JSON file holding the query embedding as an array of reals.
    #[arg(long, conflicts_with = "query")]
    query_embedding: Option<PathBuf>,
    /// Query text, embedded through the provider.
    #[arg(long)]
    query: Option<String>,
    /// Provider used to embed --query: "mock" or an http(s) endpoint.
    #[arg(long, default_value = "mock")]
    provider: String,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    /// Refined-similarity form: product | mean | min.
    #[arg(long)]
    vbar_form: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Output scored captions file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AssembleArgs {
    /// Input trace file.
    trace: PathBuf,
    /// Scored captions file.
    scored_captions: PathBuf,
    /// Retrieval query text (tail slot).
    #[arg(long)]
    query: String,
    /// Instruction text (tail slot).
    #[arg(long, default_value = DEFAULT_INSTRUCTION)]
    instruction: String,
    /// Vector-slot budget.
    #[arg(long)]
    max_vector_slots: Option<usize>,
    /// Output manifest file.
    #[arg(long)]
    out: PathBuf,
    /// Output sidecar file (default: the manifest path with ".bin" appended).
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction file: one {query_id, start, end, confidence} per line.
    predictions: PathBuf,
    /// Ground-truth file: one {query_id, start, end} per line.
    ground_truth: PathBuf,
    /// Recall@1 IoU thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.7])]
    r1_thresholds: Vec<f64>,
    /// mAP IoU thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.75])]
    map_thresholds: Vec<f64>,
    /// Write the metric table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Input trace file.
    trace: PathBuf,
    /// Ground-truth moments file ({start, end} per line; query ids ignored).
    #[arg(long)]
    ground_truth: PathBuf,
    /// Strategies to compare.
    #[arg(long, value_delimiter = ',', default_values_t = ["svd".to_string(), "average_pooling".to_string(), "frame_selection".to_string()])]
    strategies: Vec<String>,
    /// Ranked predictions per query from the proxy predictor.
    #[arg(long, default_value_t = 5)]
    top_predictions: usize,
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long)]
    rank_k: Option<usize>,
    /// Write the comparison table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("config file: {e}")))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_mode(s: &str) -> Result<CaptionMode> {
    match s.to_ascii_lowercase().as_str() {
        "se" => Ok(CaptionMode::StorageEfficient),
        "le" => Ok(CaptionMode::LatencyEfficient),
        other => Err(Error::Config(format!(
            "mode must be se or le, got {other:?}"
        ))),
    }
}

fn parse_aggregation(s: &str) -> Result<RelevanceAggregation> {
    match s.to_ascii_lowercase().as_str() {
        "any" => Ok(RelevanceAggregation::Any),
        "all" => Ok(RelevanceAggregation::All),
        other => Err(Error::Config(format!(
            "aggregation must be any or all, got {other:?}"
        ))),
    }
}

fn parse_vbar(s: &str) -> Result<VbarForm> {
    match s.to_ascii_lowercase().as_str() {
        "product" => Ok(VbarForm::Product),
        "mean" => Ok(VbarForm::Mean),
        "min" => Ok(VbarForm::Min),
        other => Err(Error::Config(format!(
            "vbar form must be product, mean, or min, got {other:?}"
        ))),
    }
}

fn parse_query_parser(s: &str) -> Result<QueryParser> {
    match s.to_ascii_lowercase().as_str() {
        "lexicon" => Ok(QueryParser::Lexicon),
        "provider" => Ok(QueryParser::Provider),
        other => Err(Error::Config(format!(
            "query parser must be lexicon or provider, got {other:?}"
        ))),
    }
}

fn parse_anchor_update(s: &str) -> Result<AnchorUpdate> {
    match s.to_ascii_lowercase().as_str() {
        "compressed" => Ok(AnchorUpdate::Compressed),
        "original" => Ok(AnchorUpdate::Original),
        other => Err(Error::Config(format!(
            "anchor update must be compressed or original, got {other:?}"
        ))),
    }
}

fn build_provider(
    spec: &str,
    dimension: usize,
    timeout_ms: u64,
    retries: u32,
) -> Result<Box<dyn Provider>> {
    if spec == "mock" {
        Ok(Box::new(HashProvider::new(dimension)))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(HttpProvider::new(
            spec,
            Duration::from_millis(timeout_ms),
            retries,
        )))
    } else {
        Err(Error::Config(format!(
            "provider must be \"mock\" or an http(s) endpoint, got {spec:?}"
        )))
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let quiet = cli.quiet;
    match &cli.command {
        Command::GenTrace(args) => cmd_gen_trace(args, &cfg, quiet),
        Command::Compress(args) => cmd_compress(args, &cfg, quiet),
        Command::Caption(args) => cmd_caption(args, &cfg, quiet),
        Command::Modulate(args) => cmd_modulate(args, &cfg, quiet),
        Command::Assemble(args) => cmd_assemble(args, &cfg, quiet),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args, &cfg),
    }
}

fn note(quiet: bool, message: String) {
    if !quiet {
        eprintln!("{message}");
    }
}

fn cmd_gen_trace(args: &GenTraceArgs, cfg: &PipelineConfig, quiet: bool) -> Result<()> {
    let synth = SynthConfig {
        n_frames: args.n_frames,
        dimension: args.dimension,
        plateaus: args.plateaus,
        noise: args.noise,
        seed: cfg.seed,
    };
    let trace = generate(&synth)?;
    write_trace_file(&args.out, &trace)?;
    note(
        quiet,
        format!(
            "wrote {} frames (dimension {}, {} plateaus, seed {}) to {}",
            args.n_frames,
            args.dimension,
            args.plateaus,
            cfg.seed,
            args.out.display()
        ),
    );
    Ok(())
}

fn cmd_compress(args: &CompressArgs, cfg: &PipelineConfig, quiet: bool) -> Result<()> {
    let mut effective = cfg.clone();
    if let Some(theta) = args.theta {
        effective.theta = theta;
    }
    if let Some(rank_k) = args.rank_k {
        effective.rank_k = rank_k;
    }
    if let Some(rule) = &args.anchor_update {
        effective.anchor_update = parse_anchor_update(rule)?;
    }
    let svc = effective.svc()?;

    let trace = read_trace_file(&args.trace)?;
    let (compressed, report) = compress_sequence(&trace.sequence, &svc)?;
    write_trace_file(
        &args.out,
        &Trace {
            source_id: trace.source_id,
            // Planted plateau indices refer to the original records and go
            // stale after compression.
            plateaus: None,
            sequence: compressed,
        },
    )?;
    println!("{}", report.to_json());
    note(
        quiet,
        format!(
            "{} -> {} slots ({} merges) to {}",
            report.input_count,
            report.output_count,
            report.merges.len(),
            args.out.display()
        ),
    );
    Ok(())
}

fn cmd_caption(args: &CaptionArgs, cfg: &PipelineConfig, quiet: bool) -> Result<()> {
    let trace = read_trace_file(&args.trace)?;
    let dimension = trace
        .sequence
        .dim()
        .ok_or_else(|| Error::EmptyInput("trace has no frames".into()))?;
    let provider = build_provider(&args.provider, dimension, args.timeout_ms, args.retries)?;

    let mode = match &args.mode {
        Some(m) => parse_mode(m)?,
        None => cfg.mode,
    };
    let aggregation = match &args.aggregation {
        Some(a) => parse_aggregation(a)?,
        None => cfg.relevance_aggregation,
    };
    let interval = args.interval.unwrap_or(cfg.caption_interval_sec);
    let query_parser = match &args.query_parser {
        Some(q) => parse_query_parser(q)?,
        None => cfg.query_parser,
    };

    let segments = segment_video(trace.sequence.duration(), interval, &trace.sequence)?;
    let intent = match query_parser {
        QueryParser::Lexicon => parse_query(&args.query)?,
        QueryParser::Provider => {
            let mut log = CallLog::default();
            parse_query_with_provider(&args.query, provider.as_ref(), &mut log)?
        }
    };

    if let Some(store_out) = &args.store_out {
        let mut log = CallLog::default();
        let store = precompute_store(&segments, provider.as_ref(), &trace.source_id, &mut log)?;
        store.write_file(store_out)?;
        note(
            quiet,
            format!(
                "pre-computed {} generic captions to {}",
                store.records().len(),
                store_out.display()
            ),
        );
    }

    let store = match &args.store {
        Some(path) => Some(CaptionStore::read_file(path)?),
        None => None,
    };
    let opts = CaptionOptions {
        mode,
        aggregation,
        source_id: trace.source_id.clone(),
        store: store.as_ref(),
    };
    let run = generate_captions(&segments, &intent, provider.as_ref(), &opts)?;
    write_caption_records_file(&args.out, &run.records)?;

    if !quiet {
        for row in latency_breakdown(&run.log, mode) {
            eprintln!(
                "{:<26} {:>4} call(s) {:>10.3} ms",
                row.stage,
                row.calls,
                row.total_secs * 1e3
            );
        }
    }
    note(
        quiet,
        format!(
            "wrote {} caption records to {}",
            run.records.len(),
            args.out.display()
        ),
    );
    Ok(())
}

fn load_query_embedding(args: &ModulateArgs, dimension: usize) -> Result<EmbeddingVector> {
    if let Some(path) = &args.query_embedding {
        let text = fs::read_to_string(path)?;
        let values: Vec<f64> = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("query embedding file: {e}")))?;
        return EmbeddingVector::new(values);
    }
    let query = args
        .query
        .as_deref()
        .ok_or_else(|| Error::Config("provide either --query-embedding or --query".into()))?;
    let provider = build_provider(&args.provider, dimension, args.timeout_ms, args.retries)?;
    let request = ProviderRequest {
        kind: RequestKind::EmbedText,
        segment_id: None,
        prompt: query.to_string(),
        image_ref: None,
        query: None,
    };
    match provider.call(&request)? {
        ProviderAnswer::Embedding(e) => Ok(e),
        _ => Err(Error::Provider {
            segment_id: None,
            message: "provider returned a non-embedding answer".into(),
        }),
    }
}

fn cmd_modulate(args: &ModulateArgs, cfg: &PipelineConfig, quiet: bool) -> Result<()> {
    let mut effective = cfg.clone();
    if let Some(a1) = args.alpha1 {
        effective.alpha1 = a1;
    }
    if let Some(a2) = args.alpha2 {
        effective.alpha2 = a2;
    }
    if let Some(form) = &args.vbar_form {
        effective.vbar_form = parse_vbar(form)?;
    }
    let modulation = effective.modulation()?;

    let trace = read_trace_file(&args.trace)?;
    let dimension = trace
        .sequence
        .dim()
        .ok_or_else(|| Error::EmptyInput("trace has no frames".into()))?;
    let file_records = read_caption_records_file(&args.captions)?;
    let captions = attach_segments(&file_records, &trace.sequence)?;
    let q = load_query_embedding(args, dimension)?;
    let scored = modulate_captions(&trace.sequence, &captions, &q, &modulation)?;
    write_scored_captions_file(&args.out, &scored)?;
    note(
        quiet,
        format!(
            "wrote {} scored captions to {}",
            scored.len(),
            args.out.display()
        ),
    );
    Ok(())
}

fn cmd_assemble(args: &AssembleArgs, cfg: &PipelineConfig, quiet: bool) -> Result<()> {
    let trace = read_trace_file(&args.trace)?;
    let records = read_scored_captions_file(&args.scored_captions)?;
    let scored = attach_scored(&records, &trace.sequence)?;
    let max_slots = args.max_vector_slots.unwrap_or(cfg.max_vector_slots);
    let seq = assemble(
        &trace.sequence,
        &scored,
        &args.query,
        &args.instruction,
        max_slots,
    )?;
    let sidecar = args
        .sidecar
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.bin", args.out.display())));
    write_sequence_files(&args.out, &sidecar, &seq)?;
    let fp = footprint(&seq);
    note(
        quiet,
        format!(
            "assembled {} slots ({} vector slots of {} budget, {} text chars) to {}",
            seq.slots().len(),
            fp.used_vector_slots,
            fp.max_vector_slots,
            fp.used_text_chars,
            args.out.display()
        ),
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let data = load_eval_files(&args.ground_truth, &args.predictions)?;
    let result = evaluate(
        &data.preds,
        &data.gts,
        &args.r1_thresholds,
        &args.map_thresholds,
    )?;
    write_or_print(&args.out, &result.to_tsv())
}

fn cmd_ablate(args: &AblateArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut effective = cfg.clone();
    if let Some(theta) = args.theta {
        effective.theta = theta;
    }
    if let Some(rank_k) = args.rank_k {
        effective.rank_k = rank_k;
    }
    let trace = read_trace_file(&args.trace)?;
    let gts = load_segments_file(&args.ground_truth)?;
    let strategies: Vec<CompressionStrategy> = args
        .strategies
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let ablation = AblationConfig {
        svc: effective.svc()?,
        top_predictions: args.top_predictions,
    };
    let rows = run_ablation(&trace.sequence, &gts, &strategies, &ablation)?;
    write_or_print(&args.out, &ablation_table_tsv(&rows))
}
