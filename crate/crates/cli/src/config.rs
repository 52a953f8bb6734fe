use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use got4rec::dataset::{FieldMap, FilterConfig, SEED_PRESETS};
use got4rec::evaluation::{DEFAULT_CUTOFFS, DEFAULT_GROUNDING_K};
use got4rec::llm::{CassetteMode, GenerationParams, HttpChatConfig};
use got4rec::retrieval::{Embedder, ServiceEmbedder, StubEmbedder};
use got4rec::strategies::StrategyConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Environment variables checked, in order, for the chat endpoint token.
pub const TOKEN_VARS: [&str; 2] = ["GOT4REC_LLM_TOKEN", "OPENAI_API_KEY"];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub reviews: PathBuf,
    /// Where ingest and embed write the manifest, catalog and vectors.
    pub work_dir: PathBuf,
    #[serde(default)]
    pub fields: FieldMap,
    pub prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub size: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { size: 3000, seed: SEED_PRESETS[0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
    Cassette,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendKind,
    /// Base seed mixed into every per-call seed.
    pub seed: u64,
    pub max_in_flight: usize,
    /// Users processed in parallel by `run`.
    pub workers: usize,
    pub params: GenerationParams,
    pub http: HttpChatConfig,
    pub mock: MockConfig,
    pub cassette: Option<CassetteConfig>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            seed: 0,
            max_in_flight: 8,
            workers: 4,
            params: GenerationParams::default(),
            http: HttpChatConfig::default(),
            mock: MockConfig::default(),
            cassette: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// JSONL of `{"fingerprint": .., "reply": ..}` canned replies; anything
    /// not in it goes to the synthetic responder.
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteConfig {
    pub path: PathBuf,
    pub mode: CassetteMode,
    /// Backend that answers while recording.
    #[serde(default = "default_record_from")]
    pub record_from: BackendKind,
}

fn default_record_from() -> BackendKind {
    BackendKind::Http
}

/// Exactly one of `stub_dim`, `service_url` or `vector_file`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub stub_dim: Option<usize>,
    pub service_url: Option<String>,
    /// Item vectors keyed by item id, e.g. exported by the embed service.
    pub vector_file: Option<PathBuf>,
    /// Expected dimension for the service.
    #[serde(default = "default_service_dim")]
    pub dim: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_service_dim() -> usize {
    got4rec::retrieval::REFERENCE_DIM
}

fn default_timeout() -> u64 {
    60
}

fn default_batch() -> usize {
    256
}

pub enum EmbeddingSource<'a> {
    Stub(usize),
    Service(&'a str),
    File(&'a Path),
}

impl EmbeddingConfig {
    pub fn source(&self) -> EmbeddingSource<'_> {
        match (&self.stub_dim, &self.service_url, &self.vector_file) {
            (Some(d), None, None) => EmbeddingSource::Stub(*d),
            (None, Some(u), None) => EmbeddingSource::Service(u),
            (None, None, Some(p)) => EmbeddingSource::File(p),
            _ => unreachable!("validated"),
        }
    }

    /// Text encoder for the configured source; `None` for a vector file,
    /// which can only look titles up.
    pub fn embedder(&self) -> Option<Box<dyn Embedder>> {
        match self.source() {
            EmbeddingSource::Stub(d) => Some(Box::new(StubEmbedder::new(d))),
            EmbeddingSource::Service(url) => {
                Some(Box::new(ServiceEmbedder::new(url, self.dim, Duration::from_secs(self.timeout_secs)).with_batch(self.batch)))
            }
            EmbeddingSource::File(_) => None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    /// Catalog items retrieved per generated title.
    pub grounding_k: usize,
    /// Share of trained items counted as the popular head.
    pub head_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { cutoffs: DEFAULT_CUTOFFS.to_vec(), grounding_k: DEFAULT_GROUNDING_K, head_fraction: 0.2 }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads and validates a TOML config. Relative paths are taken from the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        resolve(&base, &mut cfg.data.reviews);
        resolve(&base, &mut cfg.data.work_dir);
        for p in [cfg.data.prompts_dir.as_mut(), cfg.embedding.vector_file.as_mut(), cfg.llm.mock.script.as_mut()].into_iter().flatten() {
            resolve(&base, p);
        }
        if let Some(c) = cfg.llm.cassette.as_mut() {
            resolve(&base, &mut c.path);
        }
        if cfg.llm.http.token.is_none() {
            cfg.llm.http.token = TOKEN_VARS.iter().find_map(|v| std::env::var(v).ok().filter(|t| !t.is_empty()));
        }
        cfg.validate()?;
        let replayed = cfg.llm.cassette.as_ref().filter(|c| c.mode != CassetteMode::Record).map(|c| &c.path);
        for p in [cfg.data.prompts_dir.as_ref(), cfg.embedding.vector_file.as_ref(), cfg.llm.mock.script.as_ref(), replayed].into_iter().flatten() {
            if !p.exists() {
                anyhow::bail!("{} does not exist", p.display());
            }
        }
        Ok(cfg)
    }

    /// Rejects contradictory settings before any work starts.
    pub fn validate(&self) -> Result<(), UsageError> {
        let usage = |m: String| Err(UsageError(m));
        let e = &self.embedding;
        let sources = [e.stub_dim.is_some(), e.service_url.is_some(), e.vector_file.is_some()].iter().filter(|s| **s).count();
        if sources != 1 {
            return usage(format!("[embedding] needs exactly one of stub_dim, service_url, vector_file (got {sources})"));
        }
        if e.stub_dim == Some(0) || e.dim == 0 {
            return usage("embedding dimension must be positive".into());
        }
        self.strategy.validate().map_err(|err| UsageError(err.to_string()))?;
        self.llm.params.validate().map_err(|err| UsageError(err.to_string()))?;
        if self.llm.workers == 0 || self.llm.max_in_flight == 0 {
            return usage("llm.workers and llm.max_in_flight must be at least 1".into());
        }
        match (self.llm.backend, &self.llm.cassette) {
            (BackendKind::Cassette, None) => return usage("backend = \"cassette\" needs an [llm.cassette] table".into()),
            (BackendKind::Cassette, Some(c)) if c.mode == CassetteMode::Record && c.record_from == BackendKind::Cassette => {
                return usage("a cassette cannot record from itself".into())
            }
            (BackendKind::Mock | BackendKind::Http, Some(_)) => {
                return usage("[llm.cassette] is set but backend is not \"cassette\"".into())
            }
            _ => {}
        }
        if self.sample.size == 0 {
            return usage("sample.size must be at least 1".into());
        }
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) || self.eval.grounding_k == 0 {
            return usage("eval cutoffs and grounding_k must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eval.head_fraction) {
            return usage("eval.head_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[data]\nreviews = \"r.jsonl\"\nwork_dir = \"w\"\n";

    fn parse(extra: &str) -> Result<RunConfig, String> {
        let cfg: RunConfig = toml::from_str(&format!("{BASE}{extra}")).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.0)?;
        Ok(cfg)
    }

    #[test]
    fn example_config_parses() {
        let cfg: RunConfig = toml::from_str(include_str!("../got4rec.example.toml")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.strategy, StrategyConfig::default());
    }

    #[test]
    fn exactly_one_embedding_source() {
        assert!(parse("[embedding]\nstub_dim = 16\n").is_ok());
        assert!(parse("[embedding]\n").unwrap_err().contains("exactly one"));
        assert!(parse("[embedding]\nstub_dim = 16\nservice_url = \"http://x\"\n").unwrap_err().contains("exactly one"));
    }

    #[test]
    fn contradictions_rejected() {
        let emb = "[embedding]\nstub_dim = 16\n";
        assert!(parse(&format!("{emb}[llm]\nbackend = \"cassette\"\n")).is_err());
        assert!(parse(&format!("{emb}[strategy]\nn = 0\n")).is_err());
        assert!(parse(&format!("{emb}[strategy]\nbogus = 1\n")).is_err());
        let ok = parse(&format!("{emb}[llm]\nbackend = \"cassette\"\n[llm.cassette]\npath = \"c.jsonl\"\nmode = \"strict\"\n")).unwrap();
        assert_eq!(ok.llm.cassette.unwrap().mode, CassetteMode::Strict);
    }
}
