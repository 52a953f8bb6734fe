use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use got4rec::dataset::{self, Catalog, SplitDataset};
use got4rec::evaluation::{self, MetricsReport, Popularity, RankedList, RunTally, UserScores};
use got4rec::graph::Branch;
use got4rec::llm::{CassetteBackend, CassetteMode, Gateway, HttpChatBackend, LlmBackend, ScriptedMock, SyntheticResponder};
use got4rec::prompts::{Fingerprint, PromptLibrary};
use got4rec::retrieval::{embed_sequence, Embedder, EmbeddingMatrix, ItemIndex, LookupEmbedder, SequenceIndex};
use got4rec::strategies::{run_user, Env, FailureKind, Neighbourhood, RunRecord, StrategyConfig, StrategyRegistry, UserInput};
use got4rec::text::title_key;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, EmbeddingSource, RunConfig};
use crate::{BackendError, UsageError};

pub const MANIFEST: &str = "split.jsonl";
pub const CATALOG: &str = "catalog.json";
pub const ITEM_VECTORS: &str = "items.g4rv";
pub const SEQUENCE_VECTORS: &str = "sequences.g4rv";
pub const RUN_META: &str = "run.json";
pub const RECORDS: &str = "records";
pub const FAILURES: &str = "failures.jsonl";
pub const TIMINGS: &str = "timings.jsonl";
pub const METRICS: &str = "metrics.json";

/// Writes via a sibling temp file and a rename, so a killed process never
/// leaves a half-written file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn need(path: PathBuf, stage: &str) -> Result<PathBuf> {
    if !path.exists() {
        bail!("{} is missing; run `{stage}` first", path.display());
    }
    Ok(path)
}

struct WorkDir {
    split: SplitDataset,
    catalog: Catalog,
}

impl WorkDir {
    fn open(cfg: &RunConfig) -> Result<Self> {
        let dir = &cfg.data.work_dir;
        let split = SplitDataset::read_manifest(&need(dir.join(MANIFEST), "ingest")?)?;
        let catalog = read_json(&need(dir.join(CATALOG), "ingest")?)?;
        Ok(Self { split, catalog })
    }

    /// Model input titles per user, in the manifest's user order.
    fn inputs(&self) -> BTreeMap<String, Vec<String>> {
        self.split.users.iter().map(|(u, s)| (u.clone(), self.catalog.titles_of(&s.input_items()))).collect()
    }
}

pub fn ingest(cfg: &RunConfig) -> Result<String> {
    let report = dataset::ingest(&cfg.data.reviews, &cfg.data.fields)?;
    if report.skipped > 0 || report.duplicates > 0 {
        log::warn!("skipped {} malformed line(s) and {} duplicate record(s)", report.skipped, report.duplicates);
    }
    let filtered = dataset::filter_corpus(report.interactions, &cfg.filter)?;
    let catalog = Catalog::from_interactions(&filtered);
    let split = dataset::split(&dataset::group_sequences(filtered))?;
    let dir = &cfg.data.work_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut manifest = Vec::new();
    split.write_manifest(&mut manifest)?;
    write_atomic(&dir.join(MANIFEST), &manifest)?;
    write_json(&dir.join(CATALOG), &catalog)?;
    Ok(split.stats().to_string())
}

/// Item vectors keyed by item id, from the configured source.
fn item_vectors(cfg: &RunConfig, catalog: &Catalog) -> Result<EmbeddingMatrix> {
    let ids: Vec<String> = catalog.iter().map(|(i, _)| i.to_string()).collect();
    match cfg.embedding.source() {
        EmbeddingSource::File(path) => {
            let all = EmbeddingMatrix::load(path).with_context(|| format!("cannot load {}", path.display()))?;
            let mut m = EmbeddingMatrix::new(all.dim());
            for id in &ids {
                let v = all.get(id).with_context(|| format!("{} has no vector for item {id}", path.display()))?;
                m.push(id.clone(), v)?;
            }
            Ok(m)
        }
        _ => {
            let embedder = cfg.embedding.embedder().expect("text source");
            let titles: Vec<String> = catalog.iter().map(|(_, t)| t.to_string()).collect();
            let vectors = embedder.embed(&titles).map_err(|e| BackendError(format!("embedding failed: {e}")))?;
            Ok(EmbeddingMatrix::from_rows(embedder.dim(), ids.into_iter().zip(vectors))?)
        }
    }
}

pub fn embed(cfg: &RunConfig, force: bool) -> Result<String> {
    let work = WorkDir::open(cfg)?;
    let items = item_vectors(cfg, &work.catalog)?;
    let dir = &cfg.data.work_dir;
    for name in [ITEM_VECTORS, SEQUENCE_VECTORS] {
        let path = dir.join(name);
        if !force && path.exists() {
            let old = EmbeddingMatrix::load(&path).with_context(|| format!("cannot read existing {}", path.display()))?;
            if old.dim() != items.dim() {
                bail!("{} holds {}-dim vectors but the source gives {}; pass --force to overwrite", path.display(), old.dim(), items.dim());
            }
        }
    }
    let mut sequences = EmbeddingMatrix::new(items.dim());
    for (user, s) in &work.split.users {
        let rows = s.input_items().iter().map(|i| items.get(i).map(<[f32]>::to_vec).with_context(|| format!("no vector for item {i}"))).collect::<Result<Vec<_>>>()?;
        sequences.push(user.clone(), &embed_sequence(&rows)?)?;
    }
    let mut buf = Vec::new();
    items.write_to(&mut buf)?;
    write_atomic(&dir.join(ITEM_VECTORS), &buf)?;
    buf.clear();
    sequences.write_to(&mut buf)?;
    write_atomic(&dir.join(SEQUENCE_VECTORS), &buf)?;
    Ok(format!("items={} sequences={} dim={}", items.len(), sequences.len(), items.dim()))
}

#[derive(Deserialize)]
struct ScriptLine {
    fingerprint: Fingerprint,
    reply: String,
}

fn mock_backend(cfg: &RunConfig, catalog: &Catalog) -> Result<ScriptedMock> {
    let mut mock = ScriptedMock::new();
    if let Some(path) = &cfg.llm.mock.script {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read mock script {}", path.display()))?;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let l: ScriptLine = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
            mock.insert(l.fingerprint, l.reply);
        }
    }
    Ok(mock.with_fallback(SyntheticResponder::new(catalog.iter().map(|(_, t)| t.to_string()))))
}

fn backend(cfg: &RunConfig, kind: BackendKind, catalog: &Catalog) -> Result<Box<dyn LlmBackend>> {
    Ok(match kind {
        BackendKind::Mock => Box::new(mock_backend(cfg, catalog)?),
        BackendKind::Http => Box::new(HttpChatBackend::new(cfg.llm.http.clone())),
        BackendKind::Cassette => {
            let c = cfg.llm.cassette.as_ref().expect("validated");
            match c.mode {
                CassetteMode::Record => Box::new(CassetteBackend::record(&c.path, backend(cfg, c.record_from, catalog)?)?),
                CassetteMode::Permissive => Box::new(CassetteBackend::replay(&c.path, c.mode, Some(backend(cfg, c.record_from, catalog)?))?),
                CassetteMode::Strict => Box::new(CassetteBackend::replay(&c.path, c.mode, None)?),
            }
        }
    })
}

/// What a run directory was produced with. A resumed run must match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunMeta {
    strategy: StrategyConfig,
    sample_seed: u64,
    llm_seed: u64,
    backend: BackendKind,
    users: Vec<String>,
}

pub struct RunOptions {
    pub out: PathBuf,
    pub disable: Vec<Branch>,
    pub strategy: Option<String>,
    pub sample_seed: Option<u64>,
    /// Stop after this many new records, leaving the rest for a resume.
    pub limit: Option<usize>,
}

pub struct RunSummary {
    pub written: usize,
    pub skipped: usize,
    pub failed: usize,
    pub backend_failures: usize,
    pub llm_calls: u64,
}

fn record_path(out: &Path, user: &str) -> PathBuf {
    let safe: String = user
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c.to_string() } else { format!("~{:02x}", c as u32) })
        .collect();
    out.join(RECORDS).join(format!("{safe}.json"))
}

fn completed(path: &Path) -> bool {
    read_json::<RunRecord>(path).map(|r| r.is_completed()).unwrap_or(false)
}

pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let mut strategy_cfg = cfg.strategy.clone();
    if let Some(s) = &opts.strategy {
        strategy_cfg.strategy = s.clone();
    }
    for b in &opts.disable {
        strategy_cfg.disable(*b);
    }
    strategy_cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let registry = StrategyRegistry::builtin();
    let strategy = registry.get(&strategy_cfg.strategy).map_err(|e| UsageError(e.to_string()))?;

    let work = WorkDir::open(cfg)?;
    let inputs = work.inputs();
    let all_users: Vec<String> = inputs.keys().cloned().collect();
    let sample_seed = opts.sample_seed.unwrap_or(cfg.sample.seed);
    let users = dataset::sample_users(&all_users, cfg.sample.size, sample_seed);

    let needs_neighbours = strategy_cfg.strategy == "got4rec" && strategy_cfg.branches().contains(&Branch::Collab);
    let neighbours = if needs_neighbours {
        let seq_path = need(cfg.data.work_dir.join(SEQUENCE_VECTORS), "embed")?;
        let index = SequenceIndex::new(EmbeddingMatrix::load(&seq_path)?);
        Some(Neighbourhood::new(index, inputs.iter().map(|(u, t)| (u.clone(), t.clone()))))
    } else {
        None
    };

    let meta = RunMeta { strategy: strategy_cfg.clone(), sample_seed, llm_seed: cfg.llm.seed, backend: cfg.llm.backend, users: users.clone() };
    let meta_path = opts.out.join(RUN_META);
    if meta_path.exists() {
        let old: RunMeta = read_json(&meta_path)?;
        if old != meta {
            return Err(UsageError(format!("{} was produced with a different configuration; use a fresh output directory", opts.out.display())).into());
        }
    }
    fs::create_dir_all(opts.out.join(RECORDS)).with_context(|| format!("cannot create {}", opts.out.display()))?;
    write_json(&meta_path, &meta)?;

    let todo: Vec<&String> = users.iter().filter(|u| !completed(&record_path(&opts.out, u))).collect();
    let skipped = users.len() - todo.len();
    let todo: Vec<&String> = match opts.limit {
        Some(l) => todo.into_iter().take(l).collect(),
        None => todo,
    };
    if skipped > 0 {
        log::info!("resuming: {skipped} user(s) already complete");
    }

    let prompts = match &cfg.data.prompts_dir {
        Some(dir) => PromptLibrary::load_dir(dir)?,
        None => PromptLibrary::builtin(),
    };
    let gateway = Gateway::new(backend(cfg, cfg.llm.backend, &work.catalog)?, cfg.llm.params.clone())?.with_max_in_flight(cfg.llm.max_in_flight);
    let env = Env { gateway: &gateway, prompts: &prompts, neighbours: neighbours.as_ref(), seed: cfg.llm.seed };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.llm.workers).build()?;
    let done = AtomicUsize::new(0);
    let total = todo.len();
    let timings_path = opts.out.join(TIMINGS);

    let results: Vec<Result<(RunRecord, u128)>> = pool.install(|| {
        todo.par_iter()
            .map(|user| {
                let input = UserInput { user: (*user).clone(), titles: inputs[*user].clone() };
                let t0 = Instant::now();
                let record = run_user(strategy, &input, &strategy_cfg, &env)?;
                let millis = t0.elapsed().as_millis();
                write_json(&record_path(&opts.out, user), &record)?;
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n.is_multiple_of(25) || n == total {
                    log::info!("{n}/{total} users, {} llm calls", gateway.calls());
                }
                Ok((record, millis))
            })
            .collect()
    });

    let mut timings = OpenOptions::new().create(true).append(true).open(&timings_path)?;
    let mut written = 0;
    for r in &results {
        let (record, millis) = match r {
            Ok(v) => v,
            Err(e) => return Err(anyhow::anyhow!("{e:#}")),
        };
        writeln!(timings, "{}", serde_json::json!({"user": record.user, "millis": millis}))?;
        written += 1;
    }

    // The ledger lists every user of the sample still failed after this pass.
    let mut failed = 0;
    let mut backend_failures = 0;
    let mut ledger = String::new();
    for user in &users {
        let path = record_path(&opts.out, user);
        let Ok(rec) = read_json::<RunRecord>(&path) else { continue };
        if let Some(f) = &rec.failure {
            failed += 1;
            if f.kind == FailureKind::Backend {
                backend_failures += 1;
            }
            ledger.push_str(&serde_json::to_string(&serde_json::json!({"user": rec.user, "kind": f.kind, "message": f.message}))?);
            ledger.push('\n');
        }
    }
    write_atomic(&opts.out.join(FAILURES), ledger.as_bytes())?;
    Ok(RunSummary { written, skipped, failed, backend_failures, llm_calls: gateway.calls() })
}

/// Grounds titles against the catalog. A vector-file source can only look
/// up catalog titles, so other titles are dropped before grounding.
struct Grounder {
    index: ItemIndex,
    embedder: Box<dyn Embedder>,
    known: Option<HashSet<String>>,
}

impl Grounder {
    fn new(cfg: &RunConfig, catalog: &Catalog) -> Result<Self> {
        let items = EmbeddingMatrix::load(&need(cfg.data.work_dir.join(ITEM_VECTORS), "embed")?)?;
        let (embedder, known): (Box<dyn Embedder>, _) = match cfg.embedding.embedder() {
            Some(e) => (e, None),
            None => {
                let mut by_title = EmbeddingMatrix::new(items.dim());
                let mut known = HashSet::new();
                for (id, title) in catalog.iter() {
                    if known.insert(title_key(title)) {
                        by_title.push(title.to_string(), items.get(id).context("item vectors out of date; rerun `embed`")?)?;
                    }
                }
                (Box::new(LookupEmbedder::new(by_title)), Some(known))
            }
        };
        Ok(Self { index: ItemIndex::new(items), embedder, known })
    }

    fn ground(&self, record: &RunRecord, k: usize) -> Result<Option<RankedList>> {
        let source = record.strategy.as_str();
        let Some(known) = &self.known else {
            return Ok(evaluation::ground(record, &self.index, self.embedder.as_ref(), k, source)?);
        };
        let mut r = record.clone();
        if let Some(set) = r.final_set.as_mut() {
            set.items.retain(|t| known.contains(&title_key(t)));
        }
        Ok(evaluation::ground(&r, &self.index, self.embedder.as_ref(), k, source)?)
    }
}

pub struct EvalOutput {
    pub table: String,
    pub report: MetricsReport,
    pub tail_coverage: Option<f64>,
}

fn load_records(dir: &Path) -> Result<(RunMeta, Vec<RunRecord>)> {
    let meta: RunMeta = read_json(&dir.join(RUN_META)).with_context(|| format!("{} is not a run directory", dir.display()))?;
    let mut records = Vec::new();
    for u in &meta.users {
        let path = record_path(dir, u);
        if path.exists() {
            records.push(read_json(&path)?);
        }
    }
    if records.is_empty() {
        bail!("{} holds no run records", dir.display());
    }
    Ok((meta, records))
}

pub fn eval(cfg: &RunConfig, dirs: &[PathBuf], report_path: Option<&Path>, popularity_path: Option<&Path>) -> Result<EvalOutput> {
    let work = WorkDir::open(cfg)?;
    let grounder = Grounder::new(cfg, &work.catalog)?;
    let input_counts = work.split.input_popularity();
    let popularity = Popularity::new(input_counts.clone(), work.split.users.len() as u64);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.llm.workers).build()?;
    let mut reports = Vec::new();
    let mut all_lists = Vec::new();
    for dir in dirs {
        let (meta, records) = load_records(dir)?;
        let grounded: Vec<Result<Option<RankedList>>> = pool.install(|| records.par_iter().map(|r| grounder.ground(r, cfg.eval.grounding_k)).collect());
        let mut tally = RunTally { expected_users: Some(meta.users.len()), ..Default::default() };
        let mut scores: Vec<UserScores> = Vec::new();
        for (rec, list) in records.iter().zip(grounded) {
            tally.add(rec);
            match list? {
                Some(list) => {
                    let truth = &work.split.users.get(&rec.user).with_context(|| format!("user {} is not in the manifest", rec.user))?.test.item;
                    scores.push(evaluation::score_user(&list, truth, &cfg.eval.cutoffs, &popularity));
                    all_lists.push(list);
                }
                None if rec.is_completed() => tally.excluded += 1,
                None => {}
            }
        }
        let report = evaluation::summarize(&meta.strategy.strategy, &scores, &cfg.eval.cutoffs, &tally);
        write_json(&dir.join(METRICS), &report)?;
        reports.push(report);
    }
    let report = evaluation::average(&reports)?;
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    let tail_coverage = match popularity_path {
        Some(p) => {
            let pop = evaluation::popularity_report(&all_lists, &input_counts, cfg.eval.head_fraction);
            write_atomic(p, pop.to_tsv().as_bytes())?;
            Some(pop.tail_coverage)
        }
        None => None,
    };
    Ok(EvalOutput { table: evaluation::table(std::slice::from_ref(&report)), report, tail_coverage })
}
