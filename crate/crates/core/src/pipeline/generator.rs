//! Formula generators: a chat-completions client and a scripted mock.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::specfile::MrbtSpecFile;

/// What a response must contain, which selects its parser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expected {
    SubtaskList,
    FormulaPsi(usize),
    FormulaPhi(usize),
    Masks(usize),
}

impl fmt::Display for Expected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expected::SubtaskList => write!(f, "subtask list"),
            Expected::FormulaPsi(i) => write!(f, "psi{}", i + 1),
            Expected::FormulaPhi(i) => write!(f, "phi{}", i + 1),
            Expected::Masks(i) => write!(f, "masks{}", i + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub expected: Expected,
}

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error("generator is not configured: {0}")]
    Config(String),
    #[error("request to {endpoint} failed: {message}")]
    Http { endpoint: String, message: String },
    #[error("unexpected response shape: {0}")]
    Response(String),
    #[error("mock generator has no response for {0}")]
    Exhausted(Expected),
}

pub trait Generator {
    /// Identifier recorded in spec-file provenance.
    fn id(&self) -> String;

    fn generate(&mut self, request: &GeneratorRequest) -> Result<String, GeneratorError>;
}

fn fenced(body: &str) -> String {
    format!("```\n{body}\n```")
}

/// Replays canned responses. Each request kind has a queue; the last entry of
/// a queue repeats once the earlier ones are used up.
#[derive(Clone, Debug, Default)]
pub struct MockGenerator {
    queues: HashMap<Expected, VecDeque<String>>,
    /// Requests received, in order.
    pub log: Vec<GeneratorRequest>,
}

impl MockGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Answers every request from `spec`.
    pub fn from_spec(spec: &MrbtSpecFile) -> Self {
        let mut g = Self::new();
        let names: Vec<&str> = spec.subtasks.iter().map(|s| s.name.as_str()).collect();
        g.push(Expected::SubtaskList, fenced(&names.join("\n")));
        for (i, s) in spec.subtasks.iter().enumerate() {
            g.push(Expected::FormulaPsi(i), fenced(&s.psi));
            g.push(Expected::FormulaPhi(i), fenced(&s.phi));
            g.push(
                Expected::Masks(i),
                fenced(&format!(
                    "nav: {}\ninteract: {}",
                    s.mask_nav.join(", "),
                    s.mask_interact.join(", ")
                )),
            );
        }
        g
    }

    /// Replaces the responses for `expected` with `responses`, in order.
    pub fn script<I, S>(mut self, expected: Expected, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.queues.insert(expected, responses.into_iter().map(Into::into).collect());
        self
    }

    pub fn push(&mut self, expected: Expected, response: impl Into<String>) {
        self.queues.entry(expected).or_default().push_back(response.into());
    }

    /// Number of requests received for `expected`.
    pub fn requests_for(&self, expected: Expected) -> usize {
        self.log.iter().filter(|r| r.expected == expected).count()
    }
}

impl Generator for MockGenerator {
    fn id(&self) -> String {
        "mock".into()
    }

    fn generate(&mut self, request: &GeneratorRequest) -> Result<String, GeneratorError> {
        self.log.push(request.clone());
        let queue = self
            .queues
            .get_mut(&request.expected)
            .ok_or(GeneratorError::Exhausted(request.expected))?;
        match queue.len() {
            0 => Err(GeneratorError::Exhausted(request.expected)),
            1 => Ok(queue[0].clone()),
            _ => Ok(queue.pop_front().expect("non-empty")),
        }
    }
}

pub const ENV_ENDPOINT: &str = "MRBT_CHAT_ENDPOINT";
pub const ENV_API_KEY: &str = "MRBT_CHAT_API_KEY";
pub const ENV_MODEL: &str = "MRBT_CHAT_MODEL";

/// Client for an OpenAI-style `/chat/completions` endpoint.
#[derive(Clone, Debug)]
pub struct ChatGenerator {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<&'a ChatMessage>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

impl ChatGenerator {
    /// Reads the endpoint, key and model from `MRBT_CHAT_ENDPOINT`,
    /// `MRBT_CHAT_API_KEY` and `MRBT_CHAT_MODEL`.
    pub fn from_env() -> Result<Self, GeneratorError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| GeneratorError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        Ok(Self {
            endpoint,
            api_key: std::env::var(ENV_API_KEY).ok(),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".into()),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
        })
    }
}

impl Generator for ChatGenerator {
    fn id(&self) -> String {
        format!("chat:{}", self.model)
    }

    fn generate(&mut self, request: &GeneratorRequest) -> Result<String, GeneratorError> {
        let system = ChatMessage {
            role: Role::System,
            content: request.system_prompt.clone(),
        };
        let body = ChatRequestBody {
            model: &self.model,
            messages: std::iter::once(&system).chain(&request.messages).collect(),
            temperature: self.temperature,
        };
        let http_err = |e: ureq::Error| GeneratorError::Http {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let reply: ChatResponseBody = req
            .send_json(&body)
            .map_err(http_err)?
            .body_mut()
            .read_json()
            .map_err(http_err)?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GeneratorError::Response("no message content in first choice".into()))
    }
}
