use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use serde_json::{json, Value};

use super::EmbeddingVector;
use crate::backend::{digest, map_ureq_error, write_fixture, Limiter, RetryPolicy};
use crate::error::{BackendError, Error, Result};
use crate::text::split_camel_case;

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> String;

    /// Raw (not necessarily normalized) vectors, one per input, in order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;

    fn used_fixtures(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Embedding endpoint speaking `{model, input: [..]}`.
///
/// The response may be a bare list of vectors, `{"data": [{"embedding": ..}]}`
/// or `{"embeddings": [..]}`.
pub struct HttpEmbedding {
    url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpEmbedding {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        HttpEmbedding {
            url: url.into(),
            model: model.into(),
            api_key,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn parse_response(body: &Value) -> Result<Vec<Vec<f64>>, BackendError> {
        let invalid = |m: &str| BackendError::InvalidResponse(m.to_string());
        let rows: Vec<&Value> = if let Some(list) = body.as_array() {
            list.iter().collect()
        } else if let Some(data) = body.get("data").and_then(Value::as_array) {
            let mut data: Vec<&Value> = data.iter().collect();
            data.sort_by_key(|d| d.get("index").and_then(Value::as_u64).unwrap_or(0));
            data.into_iter()
                .map(|d| {
                    d.get("embedding")
                        .ok_or_else(|| invalid("data item without embedding"))
                })
                .collect::<Result<_, _>>()?
        } else if let Some(list) = body.get("embeddings").and_then(Value::as_array) {
            list.iter().collect()
        } else {
            return Err(invalid("unrecognized embedding response"));
        };
        rows.into_iter()
            .map(|row| {
                row.as_array()
                    .ok_or_else(|| invalid("embedding is not an array"))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .ok_or_else(|| invalid("non-numeric embedding value"))
                    })
                    .collect()
            })
            .collect()
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn id(&self) -> String {
        format!("http:{}#{}", self.url, self.model)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let body: Value = call
            .send_json(json!({ "model": self.model, "input": texts }))
            .map_err(map_ureq_error)?
            .into_json()
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        Self::parse_response(&body)
    }
}

/// Serves `<digest>.vec` files holding newline-separated decimal floats.
pub struct ReplayEmbedding {
    dir: PathBuf,
    used: Mutex<BTreeSet<String>>,
}

impl ReplayEmbedding {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayEmbedding {
            dir: dir.into(),
            used: Mutex::new(BTreeSet::new()),
        }
    }

    fn load(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let key = digest(text);
        let path = self.dir.join(format!("{key}.vec"));
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(BackendError::UnresolvedReplay { digest: key })
            }
            Err(e) => {
                return Err(BackendError::Fixture {
                    path,
                    message: e.to_string(),
                })
            }
        };
        let values = raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| BackendError::Fixture {
                path: path.clone(),
                message: e.to_string(),
            })?;
        self.used
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key);
        Ok(values)
    }
}

impl EmbeddingBackend for ReplayEmbedding {
    fn id(&self) -> String {
        "replay".into()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        texts.iter().map(|t| self.load(t)).collect()
    }

    fn used_fixtures(&self) -> Vec<String> {
        self.used
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .cloned()
            .collect()
    }
}

/// Forwards to another backend and writes each vector as a `.vec` fixture.
pub struct RecordingEmbedding<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: EmbeddingBackend> RecordingEmbedding<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        RecordingEmbedding {
            inner,
            dir: dir.into(),
        }
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for RecordingEmbedding<B> {
    fn id(&self) -> String {
        format!("record:{}", self.inner.id())
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let vectors = self.inner.embed_batch(texts)?;
        for (text, vector) in texts.iter().zip(&vectors) {
            let body: String = vector.iter().map(|v| format!("{v}\n")).collect();
            write_fixture(&self.dir, &format!("{}.vec", digest(text)), &body)?;
        }
        Ok(vectors)
    }
}

/// Deterministic bag-of-words embedder using signed feature hashing.
///
/// Tokens are camel-case split, lowercased and stripped of punctuation;
/// stopwords are skipped and an optional synonym table maps words onto a
/// shared feature. Useful for offline runs and for authoring fixtures.
pub struct HashingEmbedder {
    dim: usize,
    synonyms: HashMap<String, String>,
}

const STOPWORDS: &[&str] = &[
    "a",
    "an",
    "the",
    "of",
    "in",
    "on",
    "by",
    "to",
    "is",
    "was",
    "and",
    "or",
    "that",
    "this",
    "it",
    "its",
    "as",
    "at",
    "for",
    "with",
    "be",
    "are",
    "were",
    "which",
    "from",
    "has",
    "had",
    "he",
    "she",
    "they",
    "subject",
    "object",
    "entity",
    "specified",
    "given",
    "text",
    "instruct",
    "retrieve",
    "relations",
    "present",
    "query",
];

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        HashingEmbedder {
            dim: dim.max(2),
            synonyms: HashMap::new(),
        }
    }

    /// Maps every word in `words` onto the feature of `canonical`.
    pub fn with_synonyms(mut self, canonical: &str, words: &[&str]) -> Self {
        for w in words {
            self.synonyms
                .insert(w.to_lowercase(), canonical.to_lowercase());
        }
        self
    }

    fn fnv1a(s: &str) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in s.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let split = split_camel_case(text).to_lowercase();
        for raw in split.split(|c: char| !c.is_alphanumeric()) {
            if raw.is_empty() || STOPWORDS.contains(&raw) {
                continue;
            }
            let token = self.synonyms.get(raw).map(String::as_str).unwrap_or(raw);
            let h = Self::fnv1a(token);
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        if v.iter().all(|x| *x == 0.0) {
            v[(Self::fnv1a(text) % self.dim as u64) as usize] = 1.0;
        }
        v
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing:{}", self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Client-side wrapper for an embedding backend: caching, batching, the
/// in-flight bound, retries and dimension checks.
pub struct Embedder {
    backend: Box<dyn EmbeddingBackend>,
    limiter: Limiter,
    retry: RetryPolicy,
    batch_size: usize,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
    dim: OnceLock<usize>,
    requests: AtomicUsize,
}

impl Embedder {
    pub fn new(backend: impl EmbeddingBackend + 'static, max_in_flight: usize) -> Self {
        Self::from_boxed(Box::new(backend), max_in_flight)
    }

    pub fn from_boxed(backend: Box<dyn EmbeddingBackend>, max_in_flight: usize) -> Self {
        Embedder {
            backend,
            limiter: Limiter::new(max_in_flight),
            retry: RetryPolicy::default(),
            batch_size: 32,
            cache: Mutex::new(HashMap::new()),
            dim: OnceLock::new(),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn used_fixtures(&self) -> Vec<String> {
        self.backend.used_fixtures()
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    /// Unit-normalized embeddings for `texts`, in order.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Precondition("nothing to embed".into()));
        }
        let missing: Vec<String> = {
            let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            let mut seen = BTreeSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        for chunk in missing.chunks(self.batch_size) {
            let raw = {
                let _permit = self.limiter.acquire();
                self.requests.fetch_add(1, Ordering::Relaxed);
                self.retry.run(|| self.backend.embed_batch(chunk), |_| {})?
            };
            if raw.len() != chunk.len() {
                return Err(BackendError::InvalidResponse(format!(
                    "expected {} embeddings, got {}",
                    chunk.len(),
                    raw.len()
                ))
                .into());
            }
            let mut fresh = Vec::with_capacity(raw.len());
            for values in raw {
                let v = EmbeddingVector::normalized(values)?;
                let dim = *self.dim.get_or_init(|| v.dim());
                if v.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: v.dim(),
                    });
                }
                fresh.push(v);
            }
            let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            for (text, v) in chunk.iter().zip(fresh) {
                cache.insert(text.clone(), v);
            }
        }
        let cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self
            .embed_texts(&[text.to_string()])?
            .pop()
            .expect("one input yields one vector"))
    }
}
