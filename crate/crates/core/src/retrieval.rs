//! Exact flat-vector retrieval.
//!
//! Two indexes share one storage type: [`SequenceIndex`] holds one
//! mean-pooled vector per user and is searched by Euclidean distance
//! (nearest first); [`ItemIndex`] holds one vector per catalog item and is
//! searched by inner product (largest first). Both break ties by ascending
//! id, which makes the ordering total.
//!
//! Vector file layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "G4RV"
//! version u32      1
//! dim     u32
//! count   u32
//! ids     count × (u32 byte length, UTF-8 bytes)
//! rows    count × dim × f32
//! ```

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::title_key;

pub const VECTOR_MAGIC: &[u8; 4] = b"G4RV";
pub const VECTOR_VERSION: u32 = 1;
/// Dimensionality of all-mpnet-base-v2 sentence embeddings.
pub const REFERENCE_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("cannot pool an empty sequence")]
    EmptySequence,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("vector for {0:?} has non-finite components")]
    NonFinite(String),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("bad vector file: {0}")]
    Format(String),
    #[error("embedder: {0}")]
    Embedder(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Dense row-major `count × dim` matrix with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    positions: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), data: Vec::new(), positions: HashMap::new() }
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self, RetrievalError> {
        let mut m = Self::new(dim);
        for (id, v) in rows {
            m.push(id, &v)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, id: String, vector: &[f32]) -> Result<(), RetrievalError> {
        if vector.len() != self.dim {
            return Err(RetrievalError::DimMismatch { expected: self.dim, got: vector.len() });
        }
        if !vector.iter().all(|x| x.is_finite()) {
            return Err(RetrievalError::NonFinite(id));
        }
        if self.positions.contains_key(&id) {
            return Err(RetrievalError::DuplicateId(id));
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&i| self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(VECTOR_MAGIC)?;
        w.write_all(&VECTOR_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u32).to_le_bytes())?;
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, RetrievalError> {
        fn u32_of(r: &mut impl Read) -> Result<u32, RetrievalError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| RetrievalError::Format(e.to_string()))?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| RetrievalError::Format(e.to_string()))?;
        if &magic != VECTOR_MAGIC {
            return Err(RetrievalError::Format(format!("bad magic {magic:?}")));
        }
        let version = u32_of(&mut r)?;
        if version != VECTOR_VERSION {
            return Err(RetrievalError::Format(format!("unsupported version {version}")));
        }
        let dim = u32_of(&mut r)? as usize;
        let count = u32_of(&mut r)? as usize;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32_of(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(|e| RetrievalError::Format(e.to_string()))?;
            ids.push(String::from_utf8(buf).map_err(|e| RetrievalError::Format(e.to_string()))?);
        }
        let mut m = Self::new(dim);
        let mut row = vec![0f32; dim];
        let mut b = [0u8; 4];
        for id in ids {
            for x in row.iter_mut() {
                r.read_exact(&mut b).map_err(|e| RetrievalError::Format(e.to_string()))?;
                *x = f32::from_le_bytes(b);
            }
            m.push(id, &row)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(RetrievalError::Format("trailing bytes after rows".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let bytes = fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

/// Component-wise arithmetic mean of `vectors`.
pub fn embed_sequence<V: AsRef<[f32]>>(vectors: &[V]) -> Result<Vec<f32>, RetrievalError> {
    let first = vectors.first().ok_or(RetrievalError::EmptySequence)?.as_ref();
    let dim = first.len();
    let mut acc = vec![0f64; dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(RetrievalError::DimMismatch { expected: dim, got: v.len() });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += f64::from(*x);
        }
    }
    let m = vectors.len() as f64;
    Ok(acc.into_iter().map(|a| (a / m) as f32).collect())
}

pub fn squared_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(x - y) * f64::from(x - y)).sum()
}

pub fn inner_product(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Selects the best `k` rows under `cmp`, which must already include the id
/// tie-break.
fn top_k(mut scored: Vec<(f64, usize)>, k: usize, cmp: impl Fn(&(f64, usize), &(f64, usize)) -> Ordering) -> Vec<(f64, usize)> {
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, &cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored
}

/// One mean-pooled vector per user sequence, searched by Euclidean distance.
#[derive(Debug, Clone)]
pub struct SequenceIndex {
    matrix: EmbeddingMatrix,
}

impl SequenceIndex {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        Self { matrix }
    }

    /// Pools each user's item vectors looked up in `items`.
    pub fn build<'a>(
        items: &EmbeddingMatrix,
        sequences: impl IntoIterator<Item = (&'a str, &'a [String])>,
    ) -> Result<Self, RetrievalError> {
        let mut m = EmbeddingMatrix::new(items.dim());
        for (user, seq) in sequences {
            let vecs = seq
                .iter()
                .map(|id| items.get(id).ok_or_else(|| RetrievalError::UnknownId(id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            m.push(user.to_string(), &embed_sequence(&vecs)?)?;
        }
        Ok(Self { matrix: m })
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn vector(&self, user: &str) -> Option<&[f32]> {
        self.matrix.get(user)
    }

    /// The `k` nearest stored sequences, ascending by distance, never
    /// including `exclude`.
    pub fn retrieve_similar(&self, query: &[f32], k: usize, exclude: Option<&str>) -> Result<Vec<Hit>, RetrievalError> {
        if self.matrix.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.len() != self.matrix.dim() {
            return Err(RetrievalError::DimMismatch { expected: self.matrix.dim(), got: query.len() });
        }
        let ids = self.matrix.ids();
        let scored: Vec<(f64, usize)> = (0..self.matrix.len())
            .filter(|&i| exclude != Some(ids[i].as_str()))
            .map(|i| (squared_euclidean(query, self.matrix.row(i)), i))
            .collect();
        let best = top_k(scored, k, |a, b| a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
        Ok(best.into_iter().map(|(d, i)| Hit { id: ids[i].clone(), score: d.sqrt() }).collect())
    }
}

/// One vector per catalog item, searched by inner product.
#[derive(Debug, Clone)]
pub struct ItemIndex {
    matrix: EmbeddingMatrix,
}

impl ItemIndex {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    /// The `k` items with the largest inner product, descending.
    pub fn retrieve(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, RetrievalError> {
        if self.matrix.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.len() != self.matrix.dim() {
            return Err(RetrievalError::DimMismatch { expected: self.matrix.dim(), got: query.len() });
        }
        let ids = self.matrix.ids();
        let scored: Vec<(f64, usize)> = (0..self.matrix.len()).map(|i| (inner_product(query, self.matrix.row(i)), i)).collect();
        let best = top_k(scored, k, |a, b| b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
        Ok(best.into_iter().map(|(s, i)| Hit { id: ids[i].clone(), score: s }).collect())
    }

    /// Maps generated titles to catalog items: the top-`k` block for each
    /// title, concatenated in title order, keeping each item's first position.
    pub fn ground_titles<S: AsRef<str>>(&self, embedder: &dyn Embedder, titles: &[S], k: usize) -> Result<Vec<String>, RetrievalError> {
        if titles.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<String> = titles.iter().map(|t| t.as_ref().to_string()).collect();
        let vectors = embedder.embed(&texts)?;
        let mut seen = HashSet::new();
        let mut ranked = Vec::new();
        for v in &vectors {
            for hit in self.retrieve(v, k)? {
                if seen.insert(hit.id.clone()) {
                    ranked.push(hit.id);
                }
            }
        }
        Ok(ranked)
    }
}

/// Sentence encoder boundary.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector per text, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError>;
}

/// Deterministic offline encoder: the unit-normalized sum of one seeded
/// Gaussian vector per lowercase word, so titles sharing words land close
/// together.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    fn word_vector(&self, word: &str, acc: &mut [f64]) {
        let digest = Sha256::digest(word.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        for a in acc.iter_mut() {
            let x: f64 = StandardNormal.sample(&mut rng);
            *a += x;
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0f64; self.dim];
        let key = title_key(text);
        let mut words = key.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).peekable();
        if words.peek().is_none() {
            self.word_vector(&key, &mut acc);
        } else {
            for w in words {
                self.word_vector(w, &mut acc);
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        acc.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl Embedder for StubEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Client for the sentence-encoder HTTP service (`POST {base}/embed`).
pub struct ServiceEmbedder {
    base_url: String,
    dim: usize,
    batch: usize,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
    #[serde(default)]
    model: String,
}

impl ServiceEmbedder {
    /// At most 256 texts are sent per request.
    pub const MAX_BATCH: usize = 256;

    pub fn new(base_url: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), dim, batch: Self::MAX_BATCH, agent }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch.clamp(1, Self::MAX_BATCH);
        self
    }

    fn call(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        let url = format!("{}/embed", self.base_url);
        let body = json!({ "texts": texts }).to_string();
        let resp = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(|e| RetrievalError::Embedder(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp.into_body().read_to_string().map_err(|e| RetrievalError::Embedder(e.to_string()))?;
        if status != 200 {
            return Err(RetrievalError::Embedder(format!("{url} returned HTTP {status}: {text}")));
        }
        let parsed: EmbedResponse = serde_json::from_str(&text).map_err(|e| RetrievalError::Embedder(e.to_string()))?;
        if parsed.dim != self.dim {
            return Err(RetrievalError::DimMismatch { expected: self.dim, got: parsed.dim });
        }
        if parsed.vectors.len() != texts.len() {
            return Err(RetrievalError::Embedder(format!(
                "service ({}) returned {} vectors for {} texts",
                parsed.model,
                parsed.vectors.len(),
                texts.len()
            )));
        }
        if let Some(bad) = parsed.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(RetrievalError::DimMismatch { expected: self.dim, got: bad.len() });
        }
        Ok(parsed.vectors)
    }
}

impl Embedder for ServiceEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch) {
            out.extend(self.call(chunk)?);
        }
        Ok(out)
    }
}

/// Looks texts up in a precomputed vector file whose ids are the texts.
pub struct LookupEmbedder {
    matrix: EmbeddingMatrix,
    by_key: HashMap<String, usize>,
}

impl LookupEmbedder {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        let by_key = matrix.ids().iter().enumerate().map(|(i, t)| (title_key(t), i)).collect();
        Self { matrix, by_key }
    }
}

impl Embedder for LookupEmbedder {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        texts
            .iter()
            .map(|t| {
                self.by_key
                    .get(&title_key(t))
                    .map(|&i| self.matrix.row(i).to_vec())
                    .ok_or_else(|| RetrievalError::Embedder(format!("no precomputed vector for {t:?}")))
            })
            .collect()
    }
}
