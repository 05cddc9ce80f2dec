//! The `ultraese` command-line tool.
//!
//! Settings resolve as command-line flag, then config file (TOML), then
//! built-in default. Exit codes: 0 success, 1 usage or configuration error,
//! 2 invalid data, 3 provider failure, 4 every expansion came back empty.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::classgen::{generate_ultra_classes, UltraClass, DEFAULT_N_THRED};
use crate::corpus::{load_corpus, Corpus, EntityId, DEFAULT_SENTENCE_CAP};
use crate::embed::cache::{read_cache, write_cache};
use crate::embed::{EmbedConfig, EmbeddingStore};
use crate::error::Error;
use crate::eval::{evaluate, flatten_queries, render_table, ApNormalizer, EvalConfig, DEFAULT_KS};
use crate::genexpan::{run_genexpan, CotMode, EntityTrie, GenExpanConfig};
use crate::io::{read_jsonl, write_json, write_jsonl, write_metadata, RunMetadata};
use crate::providers::{
    splitmix64, Embedder, LanguageModel, ProviderEndpoint, RemoteProvider, SimilarityRanker,
    StubEmbedder, StubLm, Tokenizer, TokenizerKind,
};
use crate::ranking::{Framework, RankedListRecord};
use crate::retexpan::{
    expand, mine_contrastive_pairs, run_retexpan, select_similar_lists, ContrastivePairSet,
    EmbeddingRanker, PairMiningConfig, RetExpanConfig, DEFAULT_SEGMENT_LEN, DEFAULT_SIMILAR_T,
};
use crate::synthetic::{planted_corpus, PlantedConfig, CLASS_WORDS, ORIGIN_VALUES, OS_VALUES};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_EMPTY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ultraese", version, about = "Entity set expansion with positive and negative seeds")]
pub struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    /// Base URL of the model sidecar (remote provider).
    #[arg(long, global = true)]
    endpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ProviderKind {
    Stub,
    Remote,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate corpus files and report statistics.
    Ingest(IngestArgs),
    /// Generate ultra-fine-grained classes with targets and seed queries.
    GenClasses(GenClassesArgs),
    /// Compute and cache entity embeddings.
    Embed(EmbedArgs),
    /// Expand every query of a class file.
    Expand(ExpandArgs),
    /// Mine contrastive training pairs from expansion results.
    MinePairs(MinePairsArgs),
    /// Score ranked lists against a class file.
    Eval(EvalArgs),
    /// Write a planted synthetic corpus and matching stub config.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
struct CorpusArgs {
    /// Directory holding entities.jsonl, sentences.jsonl and fine_classes.jsonl.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    entities: Option<PathBuf>,
    #[arg(long)]
    sentences: Option<PathBuf>,
    #[arg(long)]
    classes: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Write a normalized copy of the corpus and stats.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenClassesArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to these fine classes (repeatable; default all).
    #[arg(long = "fine-class")]
    fine_classes: Vec<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "n-thred")]
    n_thred: Option<usize>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
    /// Sentences averaged per entity.
    #[arg(long)]
    cap: Option<usize>,
    /// Embed the bare name for entities without sentences.
    #[arg(long)]
    name_fallback: bool,
}

#[derive(Debug, Args)]
struct ExpandArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    framework: Option<FrameworkArg>,
    /// Embedding cache from `embed` (retrieval; computed when absent).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "segment-len")]
    segment_len: Option<usize>,
    /// Skip negative re-ranking.
    #[arg(long)]
    no_rerank: bool,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long = "per-round")]
    per_round: Option<usize>,
    #[arg(long)]
    select: Option<usize>,
    #[arg(long = "beam-width")]
    beam_width: Option<usize>,
    /// class_name, class+pos_attrs or class+pos+neg_attrs.
    #[arg(long)]
    cot: Option<String>,
    /// CoT transcript output (generation only).
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FrameworkArg {
    Ret,
    Gen,
}

impl From<FrameworkArg> for Framework {
    fn from(f: FrameworkArg) -> Self {
        match f {
            FrameworkArg::Ret => Framework::Ret,
            FrameworkArg::Gen => Framework::Gen,
        }
    }
}

#[derive(Debug, Args)]
struct MinePairsArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Size of the positive and negative similar lists.
    #[arg(long)]
    t: Option<usize>,
    /// Entities drawn from other fine classes per query.
    #[arg(long = "pool-size")]
    pool_size: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Ranked-list files, one method each (repeatable).
    #[arg(long, required = true)]
    results: Vec<PathBuf>,
    /// Method labels, one per results file.
    #[arg(long)]
    label: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the plain-text table here.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// min_k_g, ground_truth or hits.
    #[arg(long)]
    normalizer: Option<String>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "fine-classes", default_value_t = 5)]
    fine_classes: usize,
    #[arg(long = "per-class", default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
}

/// Config file layout. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    jobs: Option<usize>,
    provider: Option<ProviderKind>,
    endpoint: Option<String>,
    auth_token: Option<String>,
    timeout_ms: Option<u64>,
    retry: Option<u32>,
    mask_token: Option<String>,
    tokenizer: Option<TokenizerKind>,
    corpus: Option<PathBuf>,
    stub: StubSection,
    classgen: ClassgenSection,
    embed: EmbedSection,
    expand: ExpandSection,
    mine_pairs: MinePairsSection,
    eval: EvalSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StubSection {
    dim: Option<usize>,
    hash_seed: Option<u64>,
    block_width: Option<usize>,
    strength: Option<f64>,
    /// Word `i` shifts coordinate block `i`.
    planted: Option<Vec<String>>,
    lm_order: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ClassgenSection {
    m: Option<usize>,
    n: Option<usize>,
    n_thred: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EmbedSection {
    cap: Option<usize>,
    name_fallback: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExpandSection {
    framework: Option<FrameworkArg>,
    k: Option<usize>,
    segment_len: Option<usize>,
    rerank: Option<bool>,
    rounds: Option<usize>,
    per_round: Option<usize>,
    select: Option<usize>,
    beam_width: Option<usize>,
    cot: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MinePairsSection {
    k: Option<usize>,
    t: Option<usize>,
    pool_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSection {
    ks: Option<Vec<usize>>,
    normalizer: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
    Empty(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Data(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Settings shared by every command after merging flags and config.
#[derive(Debug, Clone, Serialize)]
struct Common {
    seed: u64,
    provider: ProviderKind,
    endpoint: Option<String>,
    timeout_ms: u64,
    retry: u32,
    mask_token: String,
    tokenizer: TokenizerKind,
    stub_dim: usize,
    stub_hash_seed: u64,
    stub_block_width: usize,
    stub_strength: f64,
    stub_planted: Vec<String>,
    stub_lm_order: usize,
    #[serde(skip)]
    auth_token: Option<String>,
}

fn resolve_common(g: &GlobalArgs, f: &FileConfig) -> CliResult<Common> {
    let provider = g.provider.or(f.provider).unwrap_or(ProviderKind::Stub);
    let endpoint = g.endpoint.clone().or_else(|| f.endpoint.clone());
    if provider == ProviderKind::Remote && endpoint.is_none() {
        return Err(usage("--provider remote needs --endpoint (or `endpoint` in the config)"));
    }
    let tokenizer = f.tokenizer.unwrap_or_default();
    if tokenizer == TokenizerKind::External {
        return Err(usage("the external tokenizer is only available through the library"));
    }
    Ok(Common {
        seed: g.seed.or(f.seed).unwrap_or(0),
        provider,
        endpoint,
        timeout_ms: f.timeout_ms.unwrap_or(30_000),
        retry: f.retry.unwrap_or(2),
        mask_token: f.mask_token.clone().unwrap_or_else(|| "[MASK]".into()),
        tokenizer,
        stub_dim: f.stub.dim.unwrap_or(64),
        stub_hash_seed: f.stub.hash_seed.unwrap_or(0),
        stub_block_width: f.stub.block_width.unwrap_or(4),
        stub_strength: f.stub.strength.unwrap_or(3.0),
        stub_planted: f.stub.planted.clone().unwrap_or_default(),
        stub_lm_order: f.stub.lm_order.unwrap_or(4),
        auth_token: f
            .auth_token
            .clone()
            .or_else(|| std::env::var("ULTRAESE_AUTH_TOKEN").ok()),
    })
}

impl Common {
    fn remote(&self) -> CliResult<RemoteProvider> {
        let mut ep = ProviderEndpoint::new(self.endpoint.clone().unwrap_or_default());
        ep.timeout = Duration::from_millis(self.timeout_ms);
        ep.retry = self.retry;
        ep.auth_token = self.auth_token.clone();
        RemoteProvider::new(ep)
            .map(|r| r.with_mask_token(self.mask_token.clone()))
            .map_err(|e| usage(format!("bad endpoint: {e}")))
    }

    fn stub_embedder(&self) -> CliResult<StubEmbedder> {
        if self.stub_dim == 0 || self.stub_block_width == 0 {
            return Err(usage("stub dim and block_width must be positive"));
        }
        let blocks = self.stub_planted.len() * self.stub_block_width;
        if blocks > self.stub_dim {
            return Err(usage(format!(
                "{} planted words need {blocks} dimensions but stub dim is {}",
                self.stub_planted.len(),
                self.stub_dim
            )));
        }
        let mut e = StubEmbedder::new(self.stub_dim, self.stub_hash_seed)
            .with_mask_token(self.mask_token.clone())
            .with_blocks(self.stub_block_width, self.stub_strength);
        for (i, w) in self.stub_planted.iter().enumerate() {
            e = e.plant(w.clone(), i);
        }
        Ok(e)
    }

    fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.tokenizer)
    }
}

enum Backend {
    Stub(StubEmbedder),
    Remote(RemoteProvider),
}

impl Backend {
    fn new(common: &Common) -> CliResult<Self> {
        Ok(match common.provider {
            ProviderKind::Stub => Self::Stub(common.stub_embedder()?),
            ProviderKind::Remote => Self::Remote(common.remote()?),
        })
    }

    fn embedder(&self) -> &dyn Embedder {
        match self {
            Self::Stub(e) => e,
            Self::Remote(r) => r,
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
struct CorpusPaths {
    entities: PathBuf,
    sentences: PathBuf,
    classes: PathBuf,
}

fn corpus_paths(a: &CorpusArgs, f: &FileConfig) -> CliResult<CorpusPaths> {
    let dir = a.corpus.clone().or_else(|| f.corpus.clone());
    let pick = |explicit: &Option<PathBuf>, file: &str| -> CliResult<PathBuf> {
        explicit
            .clone()
            .or_else(|| dir.as_ref().map(|d| d.join(file)))
            .ok_or_else(|| usage(format!("no corpus given: pass --corpus or --{}", file.trim_end_matches(".jsonl"))))
    };
    Ok(CorpusPaths {
        entities: pick(&a.entities, "entities.jsonl")?,
        sentences: pick(&a.sentences, "sentences.jsonl")?,
        classes: pick(&a.classes, "fine_classes.jsonl")?,
    })
}

fn load(paths: &CorpusPaths) -> CliResult<Corpus> {
    Ok(load_corpus(&paths.entities, &paths.sentences, &paths.classes)?)
}

fn load_dataset(path: &Path, corpus: &Corpus) -> CliResult<Vec<UltraClass>> {
    let dataset: Vec<UltraClass> = read_jsonl(path)?;
    for c in &dataset {
        c.verify(corpus)?;
    }
    Ok(dataset)
}

fn finish(command: &str, out: &Path, common: &Common, settings: serde_json::Value) -> CliResult {
    let config = json!({ "common": common, "settings": settings });
    let meta = RunMetadata::new(command, common.seed, &config)?;
    write_metadata(out, &meta)?;
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Empty(msg)) => {
            eprintln!("warning: {msg}");
            EXIT_EMPTY
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Provider { .. } => EXIT_PROVIDER,
                _ => EXIT_DATA,
            }
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let file = load_config(cli.global.config.as_deref())?;
    let common = resolve_common(&cli.global, &file)?;
    let jobs = cli.global.jobs.or(file.jobs).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| usage(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &file, &common),
        Command::GenClasses(a) => cmd_gen_classes(a, &file, &common),
        Command::Embed(a) => cmd_embed(a, &file, &common),
        Command::Expand(a) => cmd_expand(a, &file, &common),
        Command::MinePairs(a) => cmd_mine_pairs(a, &file, &common),
        Command::Eval(a) => cmd_eval(a, &file, &common),
        Command::Synth(a) => cmd_synth(a, &common),
    })
}

fn cmd_ingest(a: &IngestArgs, f: &FileConfig, common: &Common) -> CliResult {
    let paths = corpus_paths(&a.corpus, f)?;
    let corpus = load(&paths)?;
    let stats = corpus.stats();
    println!("{}", serde_json::to_string(&stats).map_err(Error::from)?);
    if stats.unmentioned_entities > 0 {
        log::warn!("{} entities have no sentences", stats.unmentioned_entities);
    }
    if let Some(dir) = &a.out {
        corpus.save(
            &dir.join("entities.jsonl"),
            &dir.join("sentences.jsonl"),
            &dir.join("fine_classes.jsonl"),
        )?;
        let out = dir.join("stats.json");
        write_json(&out, &stats)?;
        finish("ingest", &out, common, json!({ "corpus": paths }))?;
    }
    Ok(())
}

fn cmd_gen_classes(a: &GenClassesArgs, f: &FileConfig, common: &Common) -> CliResult {
    let paths = corpus_paths(&a.corpus, f)?;
    let corpus = load(&paths)?;
    let m = a.m.or(f.classgen.m).unwrap_or(1);
    let n = a.n.or(f.classgen.n).unwrap_or(1);
    let n_thred = a.n_thred.or(f.classgen.n_thred).unwrap_or(DEFAULT_N_THRED);
    let names: Vec<String> = if a.fine_classes.is_empty() {
        corpus.fine_classes().keys().cloned().collect()
    } else {
        a.fine_classes.clone()
    };
    let mut out = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let seed = splitmix64(common.seed.wrapping_add(i as u64));
        out.extend(generate_ultra_classes(&corpus, name, m, n, n_thred, seed)?);
    }
    if out.is_empty() {
        log::warn!("no class passed the size threshold {n_thred}");
    }
    eprintln!(
        "{} classes, {} queries",
        out.len(),
        out.iter().map(|c| c.queries.len()).sum::<usize>()
    );
    write_jsonl(&a.out, &out)?;
    finish(
        "gen-classes",
        &a.out,
        common,
        json!({ "corpus": paths, "fine_classes": names, "m": m, "n": n, "n_thred": n_thred }),
    )
}

fn embed_config(cap: Option<usize>, fallback: bool, f: &FileConfig) -> EmbedConfig {
    EmbedConfig {
        cap: cap.or(f.embed.cap).unwrap_or(DEFAULT_SENTENCE_CAP),
        name_fallback: fallback || f.embed.name_fallback.unwrap_or(false),
    }
}

fn cmd_embed(a: &EmbedArgs, f: &FileConfig, common: &Common) -> CliResult {
    let paths = corpus_paths(&a.corpus, f)?;
    let corpus = load(&paths)?;
    let config = embed_config(a.cap, a.name_fallback, f);
    let backend = Backend::new(common)?;
    let store = EmbeddingStore::build(&corpus, backend.embedder(), &config)?;
    let file = crate::io::create(&a.out)?;
    write_cache(&store, std::io::BufWriter::new(file)).map_err(|e| Error::io(&a.out, e))?;
    eprintln!("{} embeddings of dimension {}", store.len(), store.dim());
    finish("embed", &a.out, common, json!({ "corpus": paths, "embed": config }))
}

fn load_or_build_store(
    path: Option<&Path>,
    corpus: &Corpus,
    backend: &Backend,
    f: &FileConfig,
) -> CliResult<EmbeddingStore> {
    match path {
        Some(p) => {
            let file = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            Ok(read_cache(std::io::BufReader::new(file))?)
        }
        None => Ok(EmbeddingStore::build(corpus, backend.embedder(), &embed_config(None, false, f))?),
    }
}

#[derive(Serialize)]
struct CotLine<'a> {
    query_index: usize,
    mode: CotMode,
    prompt: &'a str,
    reply: &'a str,
    parsed: &'a crate::genexpan::CotContext,
}

fn cmd_expand(a: &ExpandArgs, f: &FileConfig, common: &Common) -> CliResult {
    let paths = corpus_paths(&a.corpus, f)?;
    let corpus = load(&paths)?;
    let dataset = load_dataset(&a.dataset, &corpus)?;
    let queries = flatten_queries(&dataset);
    let e = &f.expand;
    let framework = a.framework.or(e.framework).unwrap_or(FrameworkArg::Ret);
    let k = a.k.or(e.k).unwrap_or(100);
    let segment_len = a.segment_len.or(e.segment_len).unwrap_or(DEFAULT_SEGMENT_LEN);
    let rerank = !a.no_rerank && e.rerank.unwrap_or(true);
    let backend = Backend::new(common)?;

    let (records, settings) = match framework {
        FrameworkArg::Ret => {
            let store = load_or_build_store(a.embeddings.as_deref(), &corpus, &backend, f)?;
            let config = RetExpanConfig { k, segment_len, rerank };
            let records = queries
                .par_iter()
                .enumerate()
                .map(|(i, (_, q))| {
                    Ok(RankedListRecord {
                        query_index: i,
                        framework: Framework::Ret,
                        list: run_retexpan(&corpus, &store, q, &config)?,
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            (records, json!({ "framework": "ret", "retexpan": config, "embeddings": a.embeddings }))
        }
        FrameworkArg::Gen => {
            let cot = match a.cot.clone().or_else(|| e.cot.clone()) {
                Some(s) => Some(s.parse::<CotMode>().map_err(|e| usage(e.to_string()))?),
                None => None,
            };
            let config = GenExpanConfig {
                k,
                segment_len,
                rounds: a.rounds.or(e.rounds),
                per_round: a.per_round.or(e.per_round).unwrap_or(20),
                select: a.select.or(e.select).unwrap_or(5),
                beam_width: a.beam_width.or(e.beam_width).unwrap_or(20),
                rerank,
                seed: common.seed,
                cot,
            };
            let tokenizer = common.tokenizer();
            let trie = EntityTrie::from_corpus(&corpus, &tokenizer)?;
            let stub_lm;
            let lm: &dyn LanguageModel = match &backend {
                Backend::Remote(r) => r,
                Backend::Stub(_) => {
                    let texts = corpus.sentences().iter().map(|s| s.text.as_str());
                    stub_lm = StubLm::ngram(tokenizer, common.stub_lm_order.max(1), texts);
                    &stub_lm
                }
            };
            let runs = queries
                .par_iter()
                .enumerate()
                .map(|(i, (_, q))| {
                    let config = GenExpanConfig {
                        seed: splitmix64(common.seed ^ splitmix64(i as u64)),
                        ..config.clone()
                    };
                    run_genexpan(&corpus, q, lm, &trie, &config)
                })
                .collect::<Result<Vec<_>, Error>>()?;
            if let Some(path) = &a.transcript {
                let lines: Vec<CotLine> = runs
                    .iter()
                    .enumerate()
                    .filter_map(|(i, r)| {
                        r.cot.as_ref().map(|c| CotLine {
                            query_index: i,
                            mode: c.mode,
                            prompt: &c.prompt,
                            reply: &c.reply,
                            parsed: &c.parsed,
                        })
                    })
                    .collect();
                write_jsonl(path, &lines)?;
            }
            let records = runs
                .into_iter()
                .enumerate()
                .map(|(i, r)| RankedListRecord {
                    query_index: i,
                    framework: Framework::Gen,
                    list: r.list,
                })
                .collect();
            (records, json!({ "framework": "gen", "genexpan": config }))
        }
    };

    write_jsonl(&a.out, &records)?;
    finish(
        "expand",
        &a.out,
        common,
        json!({ "corpus": paths, "dataset": a.dataset, "run": settings }),
    )?;
    if !records.is_empty() && records.iter().all(|r| r.list.is_empty()) {
        return Err(Failure::Empty(format!("all {} expansions are empty", records.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct PairLine<'a> {
    query_index: usize,
    l_pos: &'a [EntityId],
    l_neg: &'a [EntityId],
    pool: &'a [EntityId],
    #[serde(flatten)]
    pairs: &'a ContrastivePairSet,
}

fn cmd_mine_pairs(a: &MinePairsArgs, f: &FileConfig, common: &Common) -> CliResult {
    let paths = corpus_paths(&a.corpus, f)?;
    let corpus = load(&paths)?;
    let dataset = load_dataset(&a.dataset, &corpus)?;
    let queries = flatten_queries(&dataset);
    let k = a.k.or(f.mine_pairs.k).unwrap_or(100);
    let t = a.t.or(f.mine_pairs.t).unwrap_or(DEFAULT_SIMILAR_T);
    let pool_size = a.pool_size.or(f.mine_pairs.pool_size).unwrap_or(10);
    let backend = Backend::new(common)?;
    let store = load_or_build_store(a.embeddings.as_deref(), &corpus, &backend, f)?;
    let fallback = EmbeddingRanker::new(&store, &corpus);
    let ranker: &dyn SimilarityRanker = match &backend {
        Backend::Remote(r) => r,
        Backend::Stub(_) => &fallback,
    };
    let mining = PairMiningConfig {
        mask_token: common.mask_token.clone(),
        ..Default::default()
    };

    let mined = queries
        .par_iter()
        .enumerate()
        .map(|(i, (class, q))| {
            let l0 = expand(&store, &corpus, q, k)?;
            let (l_pos, l_neg) = select_similar_lists(&l0, q, t, ranker, &corpus)?;
            let in_l0: BTreeSet<&EntityId> = l0.ids().collect();
            let own = corpus.fine_class(&class.fine_class)?;
            let others: Vec<&EntityId> = corpus
                .candidate_vocab()
                .iter()
                .filter(|id| !own.contains(*id) && !in_l0.contains(id) && !q.is_seed(id))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(common.seed ^ splitmix64(i as u64)));
            let mut pool: Vec<EntityId> = others
                .choose_multiple(&mut rng, pool_size.min(others.len()))
                .map(|id| (*id).clone())
                .collect();
            pool.sort();
            let pairs = mine_contrastive_pairs(&l0, &l_pos, &l_neg, &pool, &corpus, q, &mining)?;
            Ok((l_pos, l_neg, pool, pairs))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let lines: Vec<PairLine> = mined
        .iter()
        .enumerate()
        .map(|(i, (l_pos, l_neg, pool, pairs))| PairLine {
            query_index: i,
            l_pos,
            l_neg,
            pool,
            pairs,
        })
        .collect();
    write_jsonl(&a.out, &lines)?;
    finish(
        "mine-pairs",
        &a.out,
        common,
        json!({ "corpus": paths, "dataset": a.dataset, "k": k, "t": t, "pool_size": pool_size, "embeddings": a.embeddings }),
    )
}

fn cmd_eval(a: &EvalArgs, f: &FileConfig, common: &Common) -> CliResult {
    let dataset: Vec<UltraClass> = read_jsonl(&a.dataset)?;
    let normalizer = match a.normalizer.clone().or_else(|| f.eval.normalizer.clone()) {
        Some(s) => s.parse::<ApNormalizer>().map_err(|e| usage(e.to_string()))?,
        None => ApNormalizer::default(),
    };
    let config = EvalConfig {
        ks: a
            .ks
            .clone()
            .or_else(|| f.eval.ks.clone())
            .unwrap_or_else(|| DEFAULT_KS.to_vec()),
        normalizer,
    };
    if !a.label.is_empty() && a.label.len() != a.results.len() {
        return Err(usage("give one --label per --results file"));
    }
    let mut reports = Vec::new();
    for (i, path) in a.results.iter().enumerate() {
        let records: Vec<RankedListRecord> = read_jsonl(path)?;
        let label = match a.label.get(i) {
            Some(l) => l.clone(),
            None => {
                let frameworks: BTreeSet<Framework> = records.iter().map(|r| r.framework).collect();
                match (frameworks.len(), frameworks.first()) {
                    (1, Some(fw)) => fw.method_name().to_string(),
                    _ => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                }
            }
        };
        reports.push(evaluate(&label, &records, &dataset, &config)?);
    }
    let table = render_table(&reports);
    print!("{table}");
    write_json(&a.out, &json!({ "reports": reports }))?;
    if let Some(t) = &a.table {
        std::fs::write(t, &table).map_err(|e| Error::io(t, e))?;
    }
    finish(
        "eval",
        &a.out,
        common,
        json!({ "dataset": a.dataset, "results": a.results, "labels": a.label, "eval": config }),
    )
}

fn cmd_synth(a: &SynthArgs, common: &Common) -> CliResult {
    let config = PlantedConfig {
        classes: a.fine_classes,
        per_class: a.per_class,
        dim: a.dim,
        seed: common.seed,
    };
    let corpus = planted_corpus(&config).map_err(|e| usage(e.to_string()))?;
    let dir = &a.out;
    corpus.save(
        &dir.join("entities.jsonl"),
        &dir.join("sentences.jsonl"),
        &dir.join("fine_classes.jsonl"),
    )?;
    let planted: Vec<&str> = CLASS_WORDS
        .iter()
        .take(config.classes)
        .chain(&OS_VALUES)
        .chain(&ORIGIN_VALUES)
        .copied()
        .collect();
    let toml_text = format!(
        "# stub provider settings matching the planted corpus\ncorpus = {:?}\n\n[stub]\ndim = {}\nhash_seed = {}\nblock_width = 4\nstrength = 3.0\nplanted = [{}]\n",
        dir.display().to_string(),
        config.dim,
        config.seed,
        planted.iter().map(|w| format!("{w:?}")).collect::<Vec<_>>().join(", ")
    );
    let cfg_path = dir.join("stub.toml");
    std::fs::write(&cfg_path, toml_text).map_err(|e| Error::io(&cfg_path, e))?;
    eprintln!("wrote {} entities to {}", corpus.entity_count(), dir.display());
    Ok(())
}
