//! Chat backends: an HTTP client for OpenAI-compatible endpoints, a
//! file-backed replay mock, and in-process scripted/recording wrappers.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_ENDPOINT: &str = "DEVSGEN_ENDPOINT";
pub const ENV_API_KEY: &str = "DEVSGEN_API_KEY";
pub const ENV_MODEL: &str = "DEVSGEN_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Classify,
    Split,
    Formulate,
    Summarize,
    CreateAtomic,
    CreateCoupled,
    CreateController,
}

impl Agent {
    pub const ALL: [Agent; 7] = [
        Agent::Classify,
        Agent::Split,
        Agent::Formulate,
        Agent::Summarize,
        Agent::CreateAtomic,
        Agent::CreateCoupled,
        Agent::CreateController,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Agent::Classify => "classify",
            Agent::Split => "split",
            Agent::Formulate => "formulate",
            Agent::Summarize => "summarize",
            Agent::CreateAtomic => "create_atomic",
            Agent::CreateCoupled => "create_coupled",
            Agent::CreateController => "create_controller",
        }
    }

    /// Whether the reply is a JSON object rather than source code.
    pub fn wants_json(self) -> bool {
        !matches!(
            self,
            Agent::CreateAtomic | Agent::CreateCoupled | Agent::CreateController
        )
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One role-tagged exchange. `node` is the plan path the request serves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub agent: Agent,
    pub node: String,
    pub system: String,
    pub schema_hint: String,
    pub prompt: String,
}

impl ChatRequest {
    /// Hex sha256 over everything sent to the backend.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for part in [self.agent.as_str(), &self.system, &self.schema_hint, &self.prompt] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error("no scripted reply for {agent} at {node} (digest {digest})")]
    Unscripted { agent: Agent, node: String, digest: String },
    #[error("client configuration: {0}")]
    Config(String),
}

/// Must tolerate concurrent calls from sibling tasks.
pub trait ChatClient: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, ClientError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn send(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (**self).send(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn send(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (**self).send(request)
    }
}

/// OpenAI-compatible `POST {endpoint}/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpClient {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Attempts per request on transport errors, 429 and 5xx.
    pub attempts: usize,
    pub backoff: Duration,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(120),
            attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn from_env() -> Result<Self, ClientError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        let endpoint = var(ENV_ENDPOINT).ok_or_else(|| ClientError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = var(ENV_MODEL).ok_or_else(|| ClientError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut client = Self::new(endpoint, model);
        client.api_key = var(ENV_API_KEY);
        Ok(client)
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let system = if request.schema_hint.is_empty() {
            request.system.clone()
        } else {
            format!("{}\n\nReply format:\n{}", request.system, request.schema_hint)
        };
        let mut body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": request.prompt},
            ],
        });
        if request.agent.wants_json() {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }

    fn attempt(&self, agent: &ureq::Agent, body: &Value) -> Result<String, (bool, ClientError)> {
        let mut call = agent.post(&format!("{}/chat/completions", self.endpoint));
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let reply = match call.send_json(body.clone()) {
            Ok(reply) => reply,
            Err(ureq::Error::Status(status, reply)) => {
                let retry = status == 429 || status >= 500;
                let body = reply.into_string().unwrap_or_default();
                return Err((retry, ClientError::Status { status, body }));
            }
            Err(e) => return Err((true, ClientError::Transport(e.to_string()))),
        };
        let value: Value = reply
            .into_json()
            .map_err(|e| (false, ClientError::Malformed(e.to_string())))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| (false, ClientError::Malformed(format!("no message content in {value}"))))
    }
}

impl ChatClient for HttpClient {
    fn send(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let body = self.body(request);
        let mut last = None;
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(self.backoff * attempt as u32);
            }
            match self.attempt(&agent, &body) {
                Ok(text) => return Ok(text),
                Err((true, e)) => last = Some(e),
                Err((false, e)) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

pub type Responder = dyn Fn(&ChatRequest) -> Result<String, ClientError> + Send + Sync;

/// Answers from a closure.
pub struct ScriptedClient {
    respond: Box<Responder>,
}

impl ScriptedClient {
    pub fn new(respond: impl Fn(&ChatRequest) -> Result<String, ClientError> + Send + Sync + 'static) -> Self {
        Self {
            respond: Box::new(respond),
        }
    }
}

impl ChatClient for ScriptedClient {
    fn send(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (self.respond)(request)
    }
}

/// One recorded exchange.
#[derive(Debug, Clone, Serialize)]
pub struct Exchange {
    pub request: ChatRequest,
    pub reply: Result<String, String>,
}

/// Wraps a client and keeps every exchange in call order.
pub struct RecordingClient<C> {
    inner: C,
    log: Mutex<Vec<Exchange>>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("recording lock").clone()
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn send(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let reply = self.inner.send(request);
        self.log.lock().expect("recording lock").push(Exchange {
            request: request.clone(),
            reply: reply.as_ref().map(Clone::clone).map_err(ToString::to_string),
        });
        reply
    }
}

pub const MOCK_VERSION: u32 = 1;

/// On-disk mock script.
///
/// ```json
/// {"version": 1, "entries": [
///   {"agent": "classify", "node": "Root", "digest": "…", "response": {"verdict": "atomic"}},
///   {"agent": "create_atomic", "node": "Root", "digest": "…", "response_file": "code/Root.rhai"}
/// ]}
/// ```
/// A non-string `response` is sent as its compact JSON text; `response_file`
/// is read relative to the script.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    pub version: u32,
    pub entries: Vec<MockEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockEntry {
    pub agent: Agent,
    pub node: String,
    #[serde(default)]
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayMode {
    /// Match the request digest exactly.
    Digest,
    /// Match on agent and node path only; for authoring scripts.
    ByNode,
}

/// Replays a [`MockScript`].
#[derive(Debug, Clone)]
pub struct ReplayClient {
    mode: ReplayMode,
    replies: Vec<String>,
    by_digest: HashMap<String, usize>,
    by_node: HashMap<(Agent, String), usize>,
}

impl ReplayClient {
    pub fn load(path: &Path, mode: ReplayMode) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Config(format!("cannot read {}: {e}", path.display())))?;
        let script: MockScript =
            serde_json::from_str(&text).map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        Self::from_script(&script, path.parent().unwrap_or(Path::new(".")), mode)
    }

    pub fn from_script(script: &MockScript, base: &Path, mode: ReplayMode) -> Result<Self, ClientError> {
        if script.version != MOCK_VERSION {
            return Err(ClientError::Config(format!(
                "unsupported mock script version {}",
                script.version
            )));
        }
        let mut client = Self {
            mode,
            replies: Vec::new(),
            by_digest: HashMap::new(),
            by_node: HashMap::new(),
        };
        for entry in &script.entries {
            let reply = match (&entry.response, &entry.response_file) {
                (Some(Value::String(s)), None) => s.clone(),
                (Some(v), None) => v.to_string(),
                (None, Some(file)) => std::fs::read_to_string(base.join(file))
                    .map_err(|e| ClientError::Config(format!("cannot read {file}: {e}")))?,
                _ => {
                    return Err(ClientError::Config(format!(
                        "entry {} at {} needs exactly one of response and response_file",
                        entry.agent, entry.node
                    )))
                }
            };
            let index = client.replies.len();
            client.replies.push(reply);
            if !entry.digest.is_empty() && client.by_digest.insert(entry.digest.clone(), index).is_some() {
                return Err(ClientError::Config(format!("digest {} scripted twice", entry.digest)));
            }
            client.by_node.entry((entry.agent, entry.node.clone())).or_insert(index);
        }
        Ok(client)
    }
}

impl ChatClient for ReplayClient {
    fn send(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let digest = request.digest();
        let found = match self.mode {
            ReplayMode::Digest => self.by_digest.get(&digest),
            ReplayMode::ByNode => self.by_node.get(&(request.agent, request.node.clone())),
        };
        found.map(|&i| self.replies[i].clone()).ok_or(ClientError::Unscripted {
            agent: request.agent,
            node: request.node.clone(),
            digest,
        })
    }
}
