//! HTTP backends against a local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use edc::backend::RetryPolicy;
use edc::embedding::{Embedder, EmbeddingBackend, HttpEmbedding};
use edc::error::{BackendError, Error};
use edc::gateway::{Gateway, GatewayConfig, HttpChat, RecordingChat, ReplayChat};

#[derive(Debug, Clone)]
struct Seen {
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Answers one request per scripted `(status, body)` pair, then stops.
fn stub(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                headers,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        initial_backoff: Duration::from_millis(1),
        max_backoff: Duration::from_millis(4),
    }
}

fn chat_reply(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    })
    .to_string()
}

#[test]
fn chat_retries_rate_limits_then_succeeds() {
    let busy = (429, r#"{"error":"slow down"}"#.to_string());
    let (url, seen, handle) = stub(vec![
        busy.clone(),
        busy,
        (200, chat_reply("[['a', 'b', 'c']]")),
    ]);
    let backend = HttpChat::new(url, Some("sk-test".into()), Duration::from_secs(5));
    let gateway =
        Gateway::new(Arc::new(backend), GatewayConfig::default()).with_retry(fast_retry());
    let completion = gateway.ask("extract please").unwrap();
    handle.join().unwrap();
    assert_eq!(completion.text, "[['a', 'b', 'c']]");
    assert!(!completion.truncated);
    let stats = gateway.stats();
    assert_eq!((stats.requests, stats.retries), (1, 2));

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let req = &seen[2];
    assert_eq!(req.body["messages"][0]["content"], "extract please");
    assert_eq!(req.body["messages"][0]["role"], "user");
    assert_eq!(req.body["temperature"], 0.0);
    assert!(req.body["max_tokens"].is_number());
    assert!(req
        .headers
        .iter()
        .any(|h| h == "Authorization: Bearer sk-test"));
}

#[test]
fn chat_client_errors_are_not_retried() {
    let (url, seen, handle) = stub(vec![(400, r#"{"error":"bad request"}"#.to_string())]);
    let gateway = Gateway::new(
        Arc::new(HttpChat::new(url, None, Duration::from_secs(5))),
        GatewayConfig::default(),
    )
    .with_retry(fast_retry());
    let err = gateway.ask("hello").unwrap_err();
    handle.join().unwrap();
    assert!(
        matches!(
            err,
            Error::Backend(BackendError::Status { status: 400, .. })
        ),
        "{err:?}"
    );
    assert_eq!(seen.lock().unwrap().len(), 1);
    assert!(seen.lock().unwrap()[0]
        .headers
        .iter()
        .all(|h| !h.starts_with("Authorization")));
}

#[test]
fn truncated_completion_is_flagged() {
    let body = serde_json::json!({
        "choices": [{"message": {"content": "[['a', 'b'"}, "finish_reason": "length"}]
    })
    .to_string();
    let (url, _, handle) = stub(vec![(200, body)]);
    let gateway = Gateway::new(
        Arc::new(HttpChat::new(url, None, Duration::from_secs(5))),
        GatewayConfig::default(),
    );
    let completion = gateway.ask("hello").unwrap();
    handle.join().unwrap();
    assert!(completion.truncated);
    assert_eq!(gateway.stats().truncated, 1);
}

#[test]
fn recorded_http_answers_replay_offline() {
    let (url, _, handle) = stub(vec![(200, chat_reply("recorded answer"))]);
    let dir = tempfile::tempdir().unwrap();
    let recorder = RecordingChat::new(HttpChat::new(url, None, Duration::from_secs(5)), dir.path());
    let live = Gateway::new(Arc::new(recorder), GatewayConfig::default());
    assert_eq!(live.ask("question").unwrap().text, "recorded answer");
    handle.join().unwrap();

    let replay = ReplayChat::new(dir.path());
    let offline = Gateway::new(Arc::new(replay), GatewayConfig::default());
    assert_eq!(offline.ask("question").unwrap().text, "recorded answer");
    assert_eq!(offline.used_fixtures().len(), 1);
    let err = offline.ask("another question").unwrap_err();
    assert!(matches!(
        err,
        Error::Backend(BackendError::UnresolvedReplay { .. })
    ));
}

#[test]
fn embedding_retries_and_orders_by_index() {
    let body = serde_json::json!({
        "data": [
            {"index": 1, "embedding": [0.0, 2.0]},
            {"index": 0, "embedding": [3.0, 0.0]}
        ]
    })
    .to_string();
    let (url, seen, handle) = stub(vec![(429, "{}".into()), (200, body)]);
    let backend = HttpEmbedding::new(url, "embed-model", Some("k".into()), Duration::from_secs(5));
    assert!(backend.id().contains("embed-model"));
    let embedder = Embedder::new(backend, 2).with_retry(fast_retry());
    let vectors = embedder
        .embed_texts(&["first".into(), "second".into()])
        .unwrap();
    handle.join().unwrap();
    assert_eq!(vectors[0].values(), &[1.0, 0.0]);
    assert_eq!(vectors[1].values(), &[0.0, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[1].body["model"], "embed-model");
    assert_eq!(
        seen[1].body["input"],
        serde_json::json!(["first", "second"])
    );
}
