//! HTTP text-completion adapter.
//!
//! The request is `POST <url>` with body `{"prompt": ..., "temperature": ...}`.
//! The reply may be JSON carrying the text under `text`, `completion`, or
//! `choices[0].text`, or plain text.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PlannerContext;
use crate::error::{Error, Result};
use crate::plan::{parse_plan, Plan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            temperature: default_temperature(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

fn extract_text(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<serde_json::Value>(body) else {
        return body.to_string();
    };
    let pick = |v: &serde_json::Value| v.as_str().map(str::to_string);
    v.get("text")
        .and_then(pick)
        .or_else(|| v.get("completion").and_then(pick))
        .or_else(|| v.pointer("/choices/0/text").and_then(pick))
        .unwrap_or_else(|| body.to_string())
}

/// Sends the prompt and returns the raw response text.
pub(super) fn complete(prompt: &str, cfg: &EndpointConfig) -> Result<String> {
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_millis(cfg.timeout_ms))
        .build();
    let resp = agent
        .post(&cfg.url)
        .send_json(serde_json::json!({
            "prompt": prompt,
            "temperature": cfg.temperature,
        }))
        .map_err(|e| Error::Endpoint(e.to_string()))?;
    let body = resp
        .into_string()
        .map_err(|e| Error::Endpoint(e.to_string()))?;
    Ok(extract_text(&body))
}

pub fn endpoint_plan(ctx: &PlannerContext, cfg: &EndpointConfig) -> Result<Plan> {
    let text = complete(&ctx.prompt, cfg)?;
    Ok(parse_plan(&text)?.plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::context::SceneGraph;
    use crate::plan::HighLevelAction;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Serves one canned reply per accepted connection and returns the
    /// bodies it received.
    fn stub(replies: Vec<&'static str>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/complete", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for reply in replies {
                let (mut sock, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = sock.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(end) = text.find("\r\n\r\n") {
                        let len: usize = text[..end]
                            .lines()
                            .find_map(|l| {
                                l.to_ascii_lowercase()
                                    .strip_prefix("content-length:")
                                    .map(|v| v.trim().parse().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= end + 4 + len {
                            bodies.push(text[end + 4..].to_string());
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let resp = format!(
                    "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                sock.write_all(resp.as_bytes()).unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn ctx() -> PlannerContext {
        PlannerContext::new(SceneGraph::init(&builtin::scene(1).unwrap()), 0)
    }

    #[test]
    fn echo_endpoint_yields_the_plan() {
        let (url, h) = stub(vec!["go to kitchen 0", r#"{"text": "go to kitchen 0"}"#]);
        let c = ctx();
        let cfg = EndpointConfig::new(url);
        for _ in 0..2 {
            let plan = endpoint_plan(&c, &cfg).unwrap();
            assert_eq!(plan.actions, [HighLevelAction::GoTo("kitchen 0".into())]);
        }
        let bodies = h.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["prompt"], c.prompt.as_str());
        assert_eq!(sent["temperature"], 1.0);
    }

    #[test]
    fn long_replies_are_truncated() {
        let (url, h) = stub(vec!["go to a 0, go to a 1, go to a 2, go to a 3, go to a 4, go to a 5, go to a 6, go to a 7, go to a 8, go to a 9, go to a 10, go to a 11"]);
        let plan = endpoint_plan(&ctx(), &EndpointConfig::new(url)).unwrap();
        assert_eq!(plan.actions.len(), 10);
        h.join().unwrap();
    }

    #[test]
    fn malformed_reply_is_an_empty_plan() {
        let (url, h) = stub(vec!["I cannot help with that."]);
        assert!(matches!(
            endpoint_plan(&ctx(), &EndpointConfig::new(url)),
            Err(Error::EmptyPlan { .. })
        ));
        h.join().unwrap();
    }

    #[test]
    fn silent_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let cfg = EndpointConfig {
            timeout_ms: 200,
            ..EndpointConfig::new(url)
        };
        let err = endpoint_plan(&ctx(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Endpoint(_)));
        drop(listener);
    }

    #[test]
    fn openai_style_bodies_are_understood() {
        assert_eq!(
            extract_text(r#"{"choices":[{"text":"pick up mug 0"}]}"#),
            "pick up mug 0"
        );
        assert_eq!(extract_text(r#"{"completion":"x"}"#), "x");
        assert_eq!(extract_text("plain"), "plain");
    }
}
