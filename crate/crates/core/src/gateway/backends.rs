use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, Completion};
use crate::backend::{digest, map_ureq_error, write_fixture};
use crate::error::BackendError;

/// JSON chat-completion endpoint (`{model, messages, temperature, max_tokens}`).
pub struct HttpChat {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        HttpChat {
            url: url.into(),
            api_key,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    /// Reads the API key from the named environment variable, if set.
    pub fn from_env(url: impl Into<String>, api_key_env: Option<&str>, timeout: Duration) -> Self {
        let key = api_key_env.and_then(|name| std::env::var(name).ok());
        Self::new(url, key, timeout)
    }
}

impl ChatBackend for HttpChat {
    fn id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let body = json!({
            "model": request.model_tag,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let response: Value = call
            .send_json(body)
            .map_err(map_ureq_error)?
            .into_json()
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        let choice = response
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| BackendError::InvalidResponse("no choices in response".into()))?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::InvalidResponse("choice has no message content".into()))?;
        let truncated = choice.get("finish_reason").and_then(Value::as_str) == Some("length");
        Ok(Completion {
            text: text.to_string(),
            truncated,
        })
    }
}

/// Serves `<digest>.txt` files from a fixture directory.
pub struct ReplayChat {
    dir: PathBuf,
    used: Mutex<BTreeSet<String>>,
}

impl ReplayChat {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayChat {
            dir: dir.into(),
            used: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl ChatBackend for ReplayChat {
    fn id(&self) -> String {
        "replay".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let key = digest(&request.prompt_text());
        let path = self.dir.join(format!("{key}.txt"));
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                self.used
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .insert(key);
                Ok(Completion::new(text))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(BackendError::UnresolvedReplay { digest: key })
            }
            Err(e) => Err(BackendError::Fixture {
                path,
                message: e.to_string(),
            }),
        }
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

/// Forwards to another backend and stores every answer as a replay fixture.
pub struct RecordingChat<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: ChatBackend> RecordingChat<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        RecordingChat {
            inner,
            dir: dir.into(),
        }
    }
}

impl<B: ChatBackend> ChatBackend for RecordingChat<B> {
    fn id(&self) -> String {
        format!("record:{}", self.inner.id())
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let completion = self.inner.complete(request)?;
        let key = digest(&request.prompt_text());
        write_fixture(&self.dir, &format!("{key}.txt"), &completion.text)?;
        Ok(completion)
    }
}

type Responder = dyn Fn(&str) -> Result<String, BackendError> + Send + Sync;

/// In-process backend answering prompts with a closure. Handy for tests and
/// for authoring fixtures together with [`RecordingChat`].
#[derive(Clone)]
pub struct ScriptedChat {
    name: String,
    respond: Arc<Responder>,
}

impl ScriptedChat {
    pub fn new(
        name: impl Into<String>,
        respond: impl Fn(&str) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        ScriptedChat {
            name: name.into(),
            respond: Arc::new(respond),
        }
    }

    /// The error a script should return for a prompt it does not handle.
    pub fn unresolved(prompt: &str) -> BackendError {
        BackendError::UnresolvedReplay {
            digest: digest(prompt),
        }
    }
}

impl ChatBackend for ScriptedChat {
    fn id(&self) -> String {
        format!("scripted:{}", self.name)
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        (self.respond)(&request.prompt_text()).map(Completion::new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, Gateway, GatewayConfig};

    #[test]
    fn replay_passthrough_and_missing_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let prompt = "extract please";
        std::fs::write(
            dir.path().join(format!("{}.txt", digest(prompt))),
            "[['A','r','B']]",
        )
        .unwrap();
        let gw = Gateway::new(
            Arc::new(ReplayChat::new(dir.path())),
            GatewayConfig::default(),
        );
        assert_eq!(gw.ask(prompt).unwrap().text, "[['A','r','B']]");
        assert_eq!(gw.used_fixtures(), vec![digest(prompt)]);

        let err = gw.ask("something else").unwrap_err();
        assert!(err.to_string().contains("unresolved replay request"));
        assert!(err.is_fatal());
    }

    #[test]
    fn recording_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let scripted = ScriptedChat::new("echo", |p: &str| Ok(format!("len={}", p.len())));
        let rec = RecordingChat::new(scripted, dir.path());
        let req = ChatRequest {
            messages: vec![ChatMessage::user("hello")],
            temperature: 0.0,
            max_output_tokens: 8,
            model_tag: "m".into(),
        };
        let live = rec.complete(&req).unwrap();
        let replayed = ReplayChat::new(dir.path()).complete(&req).unwrap();
        assert_eq!(live, replayed);
    }
}
