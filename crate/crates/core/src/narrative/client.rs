use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::prompt::{Prompt, INTEGRATION_HEADING, SECTIONS};
use super::NarrativeError;

/// Append-only JSONL request/response log. Each record gets a timestamp.
#[derive(Debug)]
pub struct JsonlLog {
    path: PathBuf,
    lock: Mutex<()>,
}

impl JsonlLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, mut record: Value) -> Result<(), NarrativeError> {
        if let Value::Object(m) = &mut record {
            m.insert("ts".into(), Value::String(chrono::Utc::now().to_rfc3339()));
        }
        let _g = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| NarrativeError::Io(format!("{}: {e}", self.path.display())))?;
        writeln!(f, "{record}").map_err(|e| NarrativeError::Io(e.to_string()))
    }
}

pub trait LlmClient: Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &Prompt, seed: u64) -> Result<String, NarrativeError>;
}

/// Offline client. Echoes section A and names every driver in the
/// integration paragraph; other sections get fixed sentences that mention
/// no tabular feature. Ignores the seed.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubClient;

impl LlmClient for StubClient {
    fn name(&self) -> &str {
        "STUB"
    }

    fn complete(&self, prompt: &Prompt, _seed: u64) -> Result<String, NarrativeError> {
        let fixed = [
            "",
            "The structured measurements were read against the drivers listed above.",
            "Ontology evidence was checked for consistency with the recorded diagnoses.",
            "Reference thresholds from the knowledge base were applied to each driver value.",
            "Notes were used as supporting context only.",
        ];
        let mut out = String::new();
        for ((key, _, heading), text) in SECTIONS.iter().zip(fixed) {
            let body = if *key == 'A' {
                prompt.section('A').unwrap_or("")
            } else {
                text
            };
            out.push_str(&format!("{key}. {heading}\n{body}\n\n"));
        }
        let names: Vec<&str> = prompt.drivers.iter().map(|d| d.name.as_str()).collect();
        out.push_str(INTEGRATION_HEADING);
        out.push('\n');
        if names.is_empty() {
            out.push_str("Overall, no single driver stands out in the available evidence.\n");
        } else {
            out.push_str(&format!(
                "Taken together, the main drivers of the predicted risk are {}. Overall, the clinical evidence is consistent with the threshold findings because each driver is checked against the normal range.\n",
                join_names(&names)
            ));
            out.push_str(&format!(
                "Actionable themes: 1) monitor {} closely; 2) reassess the estimate after treatment changes.\n",
                names[0]
            ));
        }
        Ok(out)
    }
}

fn join_names(names: &[&str]) -> String {
    match names {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChatError {
    Timeout { retries: u32 },
    Transport(String),
    Malformed(String),
}

/// POST a chat-completions request and return the first choice's content.
/// Timeouts and transport failures are retried; a malformed body is not.
pub fn chat_completion(
    url: &str,
    model: &str,
    system: &str,
    user: &str,
    temperature: f64,
    timeout: Duration,
    retries: u32,
) -> Result<String, ChatError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let body = json!({
        "model": model,
        "temperature": temperature,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
    });
    let mut last = ChatError::Transport("no attempt made".into());
    for attempt in 0..=retries {
        match agent.post(url).send_json(&body) {
            Ok(resp) => {
                let text = resp
                    .into_body()
                    .read_to_string()
                    .map_err(|e| ChatError::Transport(e.to_string()))?;
                return parse_chat_response(&text);
            }
            Err(e) => {
                let timed_out = matches!(e, ureq::Error::Timeout(_))
                    || matches!(&e, ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut);
                last = if timed_out {
                    ChatError::Timeout { retries: attempt }
                } else {
                    ChatError::Transport(e.to_string())
                };
                log::warn!("chat request to {url} failed (attempt {}): {e}", attempt + 1);
            }
        }
    }
    Err(last)
}

pub fn parse_chat_response(text: &str) -> Result<String, ChatError> {
    let v: Value = serde_json::from_str(text).map_err(|_| ChatError::Malformed(text.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ChatError::Malformed(text.to_string()))
}

/// Chat-completions endpoint client.
#[derive(Debug, Clone)]
pub struct HttpClient {
    pub url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub retries: u32,
}

impl HttpClient {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            temperature: 0.2,
            timeout: Duration::from_secs(120),
            retries: 2,
        }
    }
}

impl LlmClient for HttpClient {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &Prompt, _seed: u64) -> Result<String, NarrativeError> {
        let text = prompt.render();
        let rules = prompt.rules().to_string();
        chat_completion(
            &self.url,
            &self.model,
            &rules,
            &text,
            self.temperature,
            self.timeout,
            self.retries,
        )
        .map_err(|e| match e {
            ChatError::Timeout { retries } => NarrativeError::ClientTimeout { retries },
            ChatError::Transport(m) => NarrativeError::Transport(m),
            ChatError::Malformed(raw) => NarrativeError::MalformedResponse(raw),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn parses_chat_shape() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        assert_eq!(parse_chat_response(ok), Ok("hello".into()));
        assert!(matches!(parse_chat_response("{}"), Err(ChatError::Malformed(_))));
        assert!(matches!(parse_chat_response("not json"), Err(ChatError::Malformed(_))));
    }

    #[test]
    fn timeout_reports_retries() {
        // accepts connections but never answers
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let r = chat_completion(&url, "m", "s", "u", 0.2, Duration::from_millis(200), 2);
        assert_eq!(r, Err(ChatError::Timeout { retries: 2 }));
        drop(listener);
    }

    #[test]
    fn log_lines_are_json() {
        let dir = tempfile::tempdir().unwrap();
        let log = JsonlLog::new(dir.path().join("llm.jsonl"));
        log.append(json!({"kind": "request"})).unwrap();
        log.append(json!({"kind": "response"})).unwrap();
        let text = std::fs::read_to_string(log.path()).unwrap();
        let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1]["ts"].is_string());
    }
}
