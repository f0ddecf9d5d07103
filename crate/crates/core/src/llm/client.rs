use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::FEEDBACK_MARKER;
use super::spec::{stub_initial_spec, stub_refined_spec, Provenance, RepresentationSpec};
use super::LlmError;

pub const API_KEY_ENV: &str = "SATMARL_LLM_API_KEY";

pub trait LlmClient {
    /// Text of the model's reply to a single user message.
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
    fn provenance(&self) -> Provenance;
    fn max_retries(&self) -> u32 {
        0
    }
}

/// Offline stand-in: answers with the initial stub spec, or with the refined
/// one when the prompt carries a feedback section. Anything else it cannot
/// answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubClient;

impl LlmClient for StubClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        if !prompt.contains("## Output Format") {
            return Err(LlmError::Endpoint("stub only answers representation prompts".into()));
        }
        let spec = if prompt.contains(FEEDBACK_MARKER) { stub_refined_spec() } else { stub_initial_spec() };
        Ok(spec.to_json())
    }

    fn provenance(&self) -> Provenance {
        Provenance::Stub
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub temperature: f64,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            timeout_ms: 10_000,
            max_retries: 2,
            temperature: 0.0,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_ms == 0 {
            return Err(LlmError::Config("timeout_ms must be positive".into()));
        }
        if self.base_url.is_empty() {
            return Err(LlmError::Config("base_url is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// Chat-completion client: POSTs `{model, messages, temperature}` to
/// `{base_url}/chat/completions` and returns the first choice's text.
/// A bearer token is read from `SATMARL_LLM_API_KEY` when set.
pub struct LiveClient {
    config: LlmEndpointConfig,
    agent: ureq::Agent,
}

impl LiveClient {
    pub fn new(config: LlmEndpointConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.config
    }

    pub fn request_body(&self, prompt: &str) -> String {
        serde_json::to_string(&ChatRequest {
            model: &self.config.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: self.config.temperature,
        })
        .expect("request serializes")
    }
}

/// First choice's message text from a chat-completion response document.
pub fn parse_chat_response(body: &str) -> Result<String, LlmError> {
    let resp: ChatResponse = serde_json::from_str(body).map_err(|e| LlmError::Endpoint(e.to_string()))?;
    resp.choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| LlmError::Endpoint("response has no choices".into()))
}

impl LlmClient for LiveClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(self.request_body(prompt)).map_err(|e| LlmError::Endpoint(e.to_string()))?;
        let body = resp.body_mut().read_to_string().map_err(|e| LlmError::Endpoint(e.to_string()))?;
        parse_chat_response(&body)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Live
    }

    fn max_retries(&self) -> u32 {
        self.config.max_retries
    }
}

/// How a spec request ended.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecResponse {
    pub spec: RepresentationSpec,
    pub attempts: u32,
    pub errors: Vec<String>,
}

impl SpecResponse {
    pub fn fell_back(&self) -> bool {
        self.spec.provenance == Provenance::Identity
    }
}

/// Asks for a spec, retrying on transport or validation failures up to the
/// client's retry limit, then falling back to the identity spec.
pub fn request_representation(client: &dyn LlmClient, prompt: &str) -> SpecResponse {
    let mut errors = Vec::new();
    let tries = client.max_retries() + 1;
    for attempt in 1..=tries {
        let result = client
            .complete(prompt)
            .and_then(|text| RepresentationSpec::parse_response(&text, client.provenance()).map_err(LlmError::from));
        match result {
            Ok(spec) => return SpecResponse { spec, attempts: attempt, errors },
            Err(e) => {
                log::warn!("representation request attempt {attempt}/{tries} failed: {e}");
                errors.push(e.to_string());
            }
        }
    }
    SpecResponse { spec: RepresentationSpec::identity(), attempts: tries, errors }
}
