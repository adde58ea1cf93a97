//! Run configuration file and backend construction.
//!
//! ```toml
//! [pipeline]
//! iterations = 1
//! [pipeline.canon]
//! mode = "self"
//!
//! [chat]
//! kind = "http"
//! url = "http://localhost:8000/v1/chat/completions"
//! api_key_env = "EDC_API_KEY"
//!
//! [gateway]
//! model_tag = "my-model"
//!
//! [embedding]
//! kind = "hashing"
//! ```
//!
//! API keys are only ever read from the environment variable a backend
//! names; config files never hold them.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::DEFAULT_MAX_IN_FLIGHT;
use crate::embedding::{
    Embedder, EmbeddingBackend, HashingEmbedder, HttpEmbedding, RecordingEmbedding, ReplayEmbedding,
};
use crate::error::{Error, Result};
use crate::gateway::{ChatBackend, Gateway, GatewayConfig, HttpChat, RecordingChat, ReplayChat};
use crate::refine::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChatBackendConfig {
    Http {
        url: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    Replay {
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingBackendConfig {
    Http {
        url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    Replay {
        dir: PathBuf,
    },
    Hashing {
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

fn default_timeout() -> u64 {
    120
}

fn default_dim() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub gateway: GatewayConfig,
    pub chat: Option<ChatBackendConfig>,
    pub embedding: Option<EmbeddingBackendConfig>,
    /// Defaults to the embedding backend when absent.
    pub retriever: Option<EmbeddingBackendConfig>,
    pub embedding_max_in_flight: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            gateway: GatewayConfig::default(),
            chat: None,
            embedding: None,
            retriever: None,
            embedding_max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Points every backend at the fixture layout under `root`:
    /// `chat/`, `embedding/` and `retriever/` (the last falling back to
    /// `embedding/` when missing).
    pub fn use_replay(&mut self, root: &Path) {
        self.chat = Some(ChatBackendConfig::Replay {
            dir: root.join("chat"),
        });
        self.embedding = Some(EmbeddingBackendConfig::Replay {
            dir: root.join("embedding"),
        });
        let retriever = root.join("retriever");
        self.retriever = Some(EmbeddingBackendConfig::Replay {
            dir: if retriever.is_dir() {
                retriever
            } else {
                root.join("embedding")
            },
        });
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.chat, Some(ChatBackendConfig::Replay { .. }))
            && !matches!(self.embedding, Some(EmbeddingBackendConfig::Http { .. }))
            && !matches!(self.retriever, Some(EmbeddingBackendConfig::Http { .. }))
    }
}

fn api_key(env: &Option<String>) -> Option<String> {
    env.as_deref().and_then(|name| std::env::var(name).ok())
}

pub fn chat_backend(cfg: &ChatBackendConfig, record: Option<&Path>) -> Arc<dyn ChatBackend> {
    match cfg {
        ChatBackendConfig::Http {
            url,
            api_key_env,
            timeout_secs,
        } => {
            let http = HttpChat::new(
                url.clone(),
                api_key(api_key_env),
                Duration::from_secs(*timeout_secs),
            );
            match record {
                Some(dir) => Arc::new(RecordingChat::new(http, dir.join("chat"))),
                None => Arc::new(http),
            }
        }
        ChatBackendConfig::Replay { dir } => Arc::new(ReplayChat::new(dir.clone())),
    }
}

pub fn embedding_backend(
    cfg: &EmbeddingBackendConfig,
    record: Option<&Path>,
    record_subdir: &str,
) -> Box<dyn EmbeddingBackend> {
    fn wrap<B: EmbeddingBackend + 'static>(
        b: B,
        record: Option<&Path>,
        sub: &str,
    ) -> Box<dyn EmbeddingBackend> {
        match record {
            Some(dir) => Box::new(RecordingEmbedding::new(b, dir.join(sub))),
            None => Box::new(b),
        }
    }
    match cfg {
        EmbeddingBackendConfig::Http {
            url,
            model,
            api_key_env,
            timeout_secs,
        } => wrap(
            HttpEmbedding::new(
                url.clone(),
                model.clone(),
                api_key(api_key_env),
                Duration::from_secs(*timeout_secs),
            ),
            record,
            record_subdir,
        ),
        EmbeddingBackendConfig::Replay { dir } => Box::new(ReplayEmbedding::new(dir.clone())),
        EmbeddingBackendConfig::Hashing { dim } => {
            wrap(HashingEmbedder::new(*dim), record, record_subdir)
        }
    }
}

/// The gateway, definition embedder and retriever described by `cfg`.
pub struct BackendSet {
    pub gateway: Gateway,
    pub embedder: Embedder,
    pub retriever: Embedder,
}

impl BackendSet {
    pub fn from_config(cfg: &RunConfig, record: Option<&Path>) -> Result<Self> {
        let chat = cfg.chat.as_ref().ok_or_else(|| {
            Error::Config("no chat backend configured (use [chat] or --replay)".into())
        })?;
        let embedding = cfg.embedding.as_ref().ok_or_else(|| {
            Error::Config("no embedding backend configured (use [embedding] or --replay)".into())
        })?;
        let retriever = cfg.retriever.as_ref().unwrap_or(embedding);
        Ok(BackendSet {
            gateway: Gateway::new(chat_backend(chat, record), cfg.gateway.clone()),
            embedder: Embedder::from_boxed(
                embedding_backend(embedding, record, "embedding"),
                cfg.embedding_max_in_flight,
            ),
            retriever: Embedder::from_boxed(
                embedding_backend(retriever, record, "retriever"),
                cfg.embedding_max_in_flight,
            ),
        })
    }

    pub fn backends(&self) -> crate::refine::Backends<'_> {
        crate::refine::Backends {
            gateway: &self.gateway,
            embedder: &self.embedder,
            retriever: &self.retriever,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [pipeline]
            iterations = 2
            [pipeline.canon]
            mode = "self"
            candidate_k = 3
            [chat]
            kind = "http"
            url = "http://localhost:1/v1/chat/completions"
            api_key_env = "EDC_TEST_KEY"
            [embedding]
            kind = "hashing"
            dim = 64
            "#,
        )
        .unwrap();
        assert_eq!(cfg.pipeline.iterations, 2);
        assert_eq!(cfg.pipeline.canon.candidate_k, 3);
        assert_eq!(cfg.pipeline.retrieval_k, 10);
        assert!(matches!(
            cfg.embedding,
            Some(EmbeddingBackendConfig::Hashing { dim: 64 })
        ));
        assert!(toml::from_str::<RunConfig>("api_key = \"secret\"").is_err());
    }

    #[test]
    fn replay_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.use_replay(dir.path());
        assert!(cfg.is_replay());
        assert_eq!(
            cfg.retriever,
            Some(EmbeddingBackendConfig::Replay {
                dir: dir.path().join("embedding")
            })
        );
        std::fs::create_dir(dir.path().join("retriever")).unwrap();
        cfg.use_replay(dir.path());
        assert_eq!(
            cfg.retriever,
            Some(EmbeddingBackendConfig::Replay {
                dir: dir.path().join("retriever")
            })
        );
    }
}
