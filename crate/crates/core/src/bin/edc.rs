use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use edc::canonicalize::CanonMode;
use edc::config::{BackendSet, RunConfig};
use edc::embedding::{build_relation_index, recall_at_k, IndexMode, RetrievalPair};
use edc::error::Error;
use edc::evaluate::{
    final_records, redundancy_score, schema_stats, score_corpus, EvalReport, MatchCriterion,
};
use edc::io;
use edc::manifest::{unix_now, RunManifest};
use edc::model::{count_warnings, dedupe_strings, Document, ExtractionRecord, Schema, Triplet};
use edc::par::Execution;
use edc::refine::{run_define_canonicalize, run_edc_r, RunOutput};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(
    name = "edc",
    version,
    about = "Extract, define and canonicalize knowledge graph triplets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline, optionally with refinement passes.
    Run(RunArgs),
    /// Score results against reference triplets.
    Evaluate(EvaluateArgs),
    /// Measure schema retriever recall@k.
    RetrieverEval(RetrieverEvalArgs),
    /// Define and canonicalize already extracted open triplets.
    Canonicalize(CanonicalizeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Target,
    #[value(name = "self")]
    SelfCanon,
}

impl From<ModeArg> for CanonMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Target => CanonMode::TargetAlignment,
            ModeArg::SelfCanon => CanonMode::SelfCanonicalization,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CriteriaArg {
    All,
    Exact,
    Partial,
    Strict,
}

#[derive(Args)]
struct BackendArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Serve every LLM and embedding call from fixtures under DIR.
    #[arg(long, value_name = "DIR")]
    replay: Option<PathBuf>,
    /// Write a fixture for every live call under DIR.
    #[arg(long, value_name = "DIR", conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Worker threads (default: number of processors); 1 runs sequentially.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Target schema (target mode) or seed schema (self mode).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Few-shot examples, one JSON record per line.
    #[arg(long)]
    few_shot: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Refinement passes after the base pass.
    #[arg(long)]
    iterations: Option<usize>,
    /// Extract triplets and definitions with a single prompt.
    #[arg(long)]
    combined: bool,
}

#[derive(Args)]
struct CanonicalizeArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Results file, or a dataset file whose triplets are the candidates.
    #[arg(long)]
    results: PathBuf,
    /// Dataset with reference triplets.
    #[arg(long)]
    references: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    criteria: CriteriaArg,
    /// Schema for size and redundancy (default: schema.json beside the results).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct RetrieverEvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::RetrieverEval(args) => cmd_retriever_eval(args),
        Command::Canonicalize(args) => cmd_canonicalize(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Backend(_) => ExitCode::from(EXIT_BACKEND),
                _ => ExitCode::from(EXIT_INPUT),
            }
        }
    }
}

fn load_config(args: &BackendArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &args.replay {
        if !dir.is_dir() {
            return Err(Failure::Run(Error::Config(format!(
                "replay directory {} does not exist",
                dir.display()
            ))));
        }
        cfg.use_replay(dir);
    }
    match args.jobs {
        Some(0) => return Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(1) => cfg.pipeline.execution = Execution::Sequential,
        Some(n) => {
            #[cfg(feature = "parallel")]
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not size the worker pool: {e}");
            }
            let _ = n;
        }
        None => {}
    }
    Ok(cfg)
}

fn prepare_pipeline(
    args: &PipelineArgs,
    cfg: &mut RunConfig,
) -> CliResult<(Vec<Document>, Option<Schema>)> {
    if let Some(mode) = args.mode {
        cfg.pipeline.canon.mode = mode.into();
    }
    let schema = args.schema.as_deref().map(io::load_schema).transpose()?;
    if cfg.pipeline.canon.mode == CanonMode::TargetAlignment && schema.is_none() {
        return Err(Failure::Usage("target mode needs --schema".into()));
    }
    if let Some(path) = &args.few_shot {
        cfg.pipeline.oie.few_shot = io::load_few_shot(path)?;
    }
    let docs = io::load_dataset(&args.dataset)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    Ok((docs, schema))
}

fn manifest_for(
    command: &str,
    args: &PipelineArgs,
    cfg: &RunConfig,
    backends: &BackendSet,
    docs: usize,
    out: &RunOutput,
    started: Option<u64>,
) -> CliResult<RunManifest> {
    let config = serde_json::json!({
        "pipeline": cfg.pipeline,
        "gateway": cfg.gateway,
    });
    let mut m = RunManifest::new(command, config);
    m.inputs
        .insert("dataset".into(), io::file_digest(&args.dataset)?);
    if let Some(p) = &args.schema {
        m.inputs.insert("schema".into(), io::file_digest(p)?);
    }
    if let Some(p) = &args.few_shot {
        m.inputs.insert("few_shot".into(), io::file_digest(p)?);
    }
    m.backends
        .insert("chat".into(), backends.gateway.backend_id());
    m.backends
        .insert("embedding".into(), backends.embedder.backend_id());
    m.backends
        .insert("retriever".into(), backends.retriever.backend_id());
    if cfg.is_replay() {
        m.fixtures
            .insert("chat".into(), backends.gateway.used_fixtures());
        m.fixtures
            .insert("embedding".into(), backends.embedder.used_fixtures());
        m.fixtures
            .insert("retriever".into(), backends.retriever.used_fixtures());
    }
    m.started_at = started;
    m.finished_at = started.map(|_| unix_now());
    m.gateway = backends.gateway.stats();
    m.summarize(docs, &out.records, out.schema.len());
    Ok(m)
}

fn write_outputs(dir: &Path, out: &RunOutput, manifest: &RunManifest) -> CliResult {
    io::write_results(&dir.join("results.jsonl"), &out.records)?;
    io::write_schema(&dir.join("schema.json"), &out.schema)?;
    io::write_json(&dir.join("manifest.json"), manifest)?;
    Ok(())
}

fn report_run(out: &RunOutput) {
    let finals: Vec<&ExtractionRecord> = out.final_iteration().collect();
    let triplets: usize = finals.iter().map(|r| r.canonical_triplets.len()).sum();
    let failed = finals.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} documents, {} canonical triplets, schema size {}, {} failed",
        finals.len(),
        triplets,
        out.schema.len(),
        failed
    );
}

fn cmd_run(args: RunArgs) -> CliResult {
    let mut cfg = load_config(&args.pipeline.backend)?;
    if let Some(n) = args.iterations {
        cfg.pipeline.iterations = n;
    }
    if args.combined {
        cfg.pipeline.oie.combined_mode = true;
    }
    if cfg.pipeline.oie.few_shot.is_empty() && args.pipeline.few_shot.is_none() {
        return Err(Failure::Usage("run needs --few-shot".into()));
    }
    let (docs, schema) = prepare_pipeline(&args.pipeline, &mut cfg)?;
    let started = (!cfg.is_replay()).then(unix_now);
    let backends = BackendSet::from_config(&cfg, args.pipeline.backend.record.as_deref())?;
    let out = run_edc_r(&docs, schema.as_ref(), &cfg.pipeline, backends.backends())?;
    let manifest = manifest_for(
        "run",
        &args.pipeline,
        &cfg,
        &backends,
        docs.len(),
        &out,
        started,
    )?;
    write_outputs(&args.pipeline.out, &out, &manifest)?;
    report_run(&out);
    Ok(())
}

fn cmd_canonicalize(args: CanonicalizeArgs) -> CliResult {
    let mut cfg = load_config(&args.pipeline.backend)?;
    let (docs, schema) = prepare_pipeline(&args.pipeline, &mut cfg)?;
    if let Some(d) = docs.iter().find(|d| d.reference_triplets.is_none()) {
        return Err(Failure::Run(Error::Precondition(format!(
            "document {:?} has no triplets to canonicalize",
            d.id
        ))));
    }
    let started = (!cfg.is_replay()).then(unix_now);
    let backends = BackendSet::from_config(&cfg, args.pipeline.backend.record.as_deref())?;
    let out = run_define_canonicalize(&docs, schema.as_ref(), &cfg.pipeline, backends.backends())?;
    let manifest = manifest_for(
        "canonicalize",
        &args.pipeline,
        &cfg,
        &backends,
        docs.len(),
        &out,
        started,
    )?;
    write_outputs(&args.pipeline.out, &out, &manifest)?;
    report_run(&out);
    Ok(())
}

/// Candidate triplets by document id, plus the records they came from (empty
/// when read from a dataset file).
type Candidates = (BTreeMap<String, Vec<Triplet>>, Vec<ExtractionRecord>);

fn load_candidates(path: &Path) -> CliResult<Candidates> {
    if let Ok(records) = io::load_results(path) {
        let finals = final_records(&records);
        let map = finals
            .iter()
            .map(|r| (r.document_id.clone(), r.canonical_triplets.clone()))
            .collect();
        return Ok((map, records));
    }
    let docs = io::load_dataset(path)?;
    Ok((
        docs.into_iter()
            .map(|d| (d.id, d.reference_triplets.unwrap_or_default()))
            .collect(),
        Vec::new(),
    ))
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let (candidates, records) = load_candidates(&args.results)?;
    let references = io::load_dataset(&args.references)?;
    let criteria: Vec<MatchCriterion> = match args.criteria {
        CriteriaArg::All => MatchCriterion::ALL.to_vec(),
        CriteriaArg::Exact => vec![MatchCriterion::Exact],
        CriteriaArg::Partial => vec![MatchCriterion::Partial],
        CriteriaArg::Strict => vec![MatchCriterion::Strict],
    };
    let mut notes = Vec::new();
    let empty: Vec<Triplet> = Vec::new();
    let mut pairs: Vec<(&[Triplet], &[Triplet])> = Vec::new();
    for doc in &references {
        let Some(refs) = &doc.reference_triplets else {
            notes.push(format!(
                "document {:?} has no reference triplets; skipped",
                doc.id
            ));
            continue;
        };
        let cands = candidates.get(&doc.id).unwrap_or_else(|| {
            notes.push(format!("document {:?} has no candidate record", doc.id));
            &empty
        });
        pairs.push((cands.as_slice(), refs.as_slice()));
    }
    let mut cfg = load_config(&args.backend)?;
    cfg.pipeline.execution = if args.backend.jobs == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let (metrics, agg_notes) = score_corpus(&pairs, &criteria, cfg.pipeline.execution);
    notes.extend(agg_notes);

    let schema_path = args.schema.clone().or_else(|| {
        let p = args.results.parent()?.join("schema.json");
        p.is_file().then_some(p)
    });
    let schema = schema_path.as_deref().map(io::load_schema).transpose()?;
    let schema_size = match &schema {
        Some(s) => s.len(),
        None => {
            notes.push("no schema file; schema size counts distinct candidate relations".into());
            dedupe_strings(candidates.values().flatten().map(Triplet::relation)).len()
        }
    };
    let redundancy = match (&schema, cfg.embedding.is_some()) {
        (Some(s), true) if !s.is_empty() => {
            let backends = BackendSet::from_config(&cfg, args.backend.record.as_deref())?;
            let index =
                build_relation_index(s, &backends.embedder, IndexMode::DefinitionSimilarity)?;
            Some(redundancy_score(&index))
        }
        (Some(s), true) if s.is_empty() => Some(0.0),
        _ => {
            notes.push("redundancy needs a schema file and an embedding backend".into());
            None
        }
    };
    let finals = final_records(&records);
    let stats = if finals.is_empty() {
        let n = candidates.len();
        let total: usize = candidates.values().map(Vec::len).sum();
        edc::evaluate::SchemaStats {
            schema_size,
            avg_triplets_per_sentence: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        }
    } else {
        schema_stats(schema_size, &finals)
    };
    let report = EvalReport {
        criteria: metrics,
        schema_size: stats.schema_size,
        redundancy,
        avg_triplets_per_sentence: stats.avg_triplets_per_sentence,
        documents_scored: pairs.len(),
        warnings: count_warnings(records.iter().flat_map(|r| &r.warnings)),
        notes,
    };
    if let Some(out) = &args.out {
        io::write_json(out, &report)?;
    }
    println!(
        "{:<10}{:>10}{:>10}{:>10}",
        "criterion", "precision", "recall", "f1"
    );
    for (c, m) in &report.criteria {
        println!(
            "{:<10}{:>10.3}{:>10.3}{:>10.3}",
            c.name(),
            m.precision,
            m.recall,
            m.f1
        );
    }
    println!("schema size: {}", report.schema_size);
    match report.redundancy {
        Some(r) => println!("redundancy: {r:.3}"),
        None => println!("redundancy: n/a"),
    }
    println!(
        "triplets per sentence: {:.3}",
        report.avg_triplets_per_sentence
    );
    Ok(())
}

fn cmd_retriever_eval(args: RetrieverEvalArgs) -> CliResult {
    if args.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    let cfg = load_config(&args.backend)?;
    let docs = io::load_dataset(&args.dataset)?;
    let schema = io::load_schema(&args.schema)?;
    let pairs: Vec<RetrievalPair> = docs
        .iter()
        .filter_map(|d| {
            let refs = d.reference_triplets.as_ref()?;
            let gold = dedupe_strings(refs.iter().map(Triplet::relation));
            (!gold.is_empty()).then(|| RetrievalPair {
                text: d.text.clone(),
                gold,
            })
        })
        .collect();
    let backends = BackendSet::from_config(&cfg, args.backend.record.as_deref())?;
    let index = build_relation_index(&schema, &backends.retriever, IndexMode::TextRelevance)?;
    let recall = recall_at_k(
        &backends.retriever,
        &cfg.pipeline.instruction,
        &pairs,
        &index,
        args.k,
        cfg.pipeline.execution,
    )?;
    println!("recall@{}: {recall:.3} over {} texts", args.k, pairs.len());
    Ok(())
}
