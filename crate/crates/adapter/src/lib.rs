//! Remote chat-completions endpoints as language-agent policies.
//!
//! A [`RemotePolicy`] sends the full LAP prompt of each step as a single user
//! turn and parses the reply with the same action parser as the token model.
//! It exposes text only, never token log-probabilities, so it can be
//! evaluated but not trained.

pub mod mock;

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use msgrpo::lap::{build_prompt, parse_action, ParsedAction, PromptTemplate};
use msgrpo::rng::Rng;
use msgrpo::tmsg::{AgentPolicy, Decision, StepContext};
use serde::{Deserialize, Serialize};

/// Largest completion budget a config may request.
pub const MAX_COMPLETION_TOKENS: usize = 4096;
/// Header carrying the `episode-step` tag of a request.
pub const TAG_HEADER: &str = "X-Request-Tag";

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("malformed response: {0}")]
    Protocol(String),
}

impl AdapterError {
    /// Whether a later attempt may succeed.
    fn is_transient(&self) -> bool {
        match self {
            AdapterError::Transport { .. } => true,
            AdapterError::Status { status, .. } => *status == 429 || *status >= 500,
            AdapterError::Config(_) | AdapterError::Protocol(_) => false,
        }
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. The token
    /// itself is never stored in the config.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_tokens: usize,
    pub temperature: f64,
    /// Extra attempts after the first one.
    pub retries: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_secs: 60.0,
            max_tokens: MAX_COMPLETION_TOKENS,
            temperature: 1.0,
            retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
        }
    }
}

// Hand-written so that a future secret-bearing field cannot leak through
// a derived Debug.
impl fmt::Debug for EndpointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointConfig")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key_env", &self.api_key_env)
            .field("timeout_secs", &self.timeout_secs)
            .field("max_tokens", &self.max_tokens)
            .field("temperature", &self.temperature)
            .field("retries", &self.retries)
            .field("backoff_ms", &self.backoff_ms)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), AdapterError> {
        let bad = |m: String| Err(AdapterError::Config(m));
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!(
                "base_url must be an http(s) URL, got {:?}",
                self.base_url
            ));
        }
        if self.model.is_empty() {
            return bad("model must not be empty".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad(format!(
                "timeout_secs must be positive, got {}",
                self.timeout_secs
            ));
        }
        if !(1..=MAX_COMPLETION_TOKENS).contains(&self.max_tokens) {
            return bad(format!(
                "max_tokens must be in [1, {MAX_COMPLETION_TOKENS}], got {}",
                self.max_tokens
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            ));
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    max_tokens: usize,
    temperature: f64,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    completion_tokens: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Reported completion tokens, or a whitespace word count if the
    /// endpoint reports no usage.
    pub token_count: usize,
    pub attempts: u32,
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking chat-completions client.
pub struct ChatClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    token: Option<String>,
    slots: Slots,
}

impl fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatClient")
            .field("config", &self.config)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl ChatClient {
    /// Validates the config and reads the token from its environment
    /// variable, if one is named. A named but unset variable is an error.
    pub fn new(config: EndpointConfig) -> Result<Self, AdapterError> {
        config.validate()?;
        let token = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                AdapterError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build();
        let slots = Slots {
            free: Mutex::new(config.max_in_flight),
            cv: Condvar::new(),
        };
        Ok(ChatClient {
            config,
            agent,
            token,
            slots,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Sends `prompt` as one user turn, retrying transient failures with
    /// exponential backoff.
    pub fn complete(&self, prompt: &str, tag: &str) -> Result<Completion, AdapterError> {
        let body = serde_json::to_string(&ChatRequest {
            model: &self.config.model,
            messages: [Message {
                role: "user",
                content: prompt,
            }],
            max_tokens: self.config.max_tokens,
            temperature: self.config.temperature,
        })
        .map_err(|e| AdapterError::Protocol(e.to_string()))?;

        let mut attempts = 0;
        loop {
            attempts += 1;
            let result = {
                let _slot = self.slots.acquire();
                self.send_once(&body, tag, attempts)
            };
            match result {
                Ok((text, token_count)) => {
                    if attempts > 1 {
                        log::info!("request {tag} succeeded after {attempts} attempts");
                    }
                    return Ok(Completion {
                        text,
                        token_count,
                        attempts,
                    });
                }
                Err(e) if e.is_transient() && attempts <= self.config.retries => {
                    let delay = self
                        .config
                        .backoff_ms
                        .saturating_mul(1 << (attempts - 1).min(16));
                    log::warn!(
                        "request {tag} attempt {attempts} failed: {e}; retrying in {delay} ms"
                    );
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(e) => {
                    log::warn!("request {tag} failed: {e}");
                    return Err(e);
                }
            }
        }
    }

    fn send_once(
        &self,
        body: &str,
        tag: &str,
        attempts: u32,
    ) -> Result<(String, usize), AdapterError> {
        let mut req = self
            .agent
            .post(&self.config.url())
            .set("Content-Type", "application/json")
            .set(TAG_HEADER, tag);
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let response = match req.send_string(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, _)) => {
                return Err(AdapterError::Status { status, attempts })
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(AdapterError::Transport {
                    attempts,
                    message: t.kind().to_string(),
                })
            }
        };
        let text = response
            .into_string()
            .map_err(|e| AdapterError::Transport {
                attempts,
                message: e.kind().to_string(),
            })?;
        parse_response(&text)
    }
}

fn parse_response(body: &str) -> Result<(String, usize), AdapterError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| AdapterError::Protocol(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| AdapterError::Protocol("response has no choices".into()))?;
    let text = choice
        .message
        .content
        .ok_or_else(|| AdapterError::Protocol("first choice has no content".into()))?;
    let count = parsed
        .usage
        .and_then(|u| u.completion_tokens)
        .unwrap_or_else(|| text.split_whitespace().count());
    Ok((text, count))
}

/// A remote model behind a LAP template.
#[derive(Debug)]
pub struct RemotePolicy {
    pub client: ChatClient,
    pub template: PromptTemplate,
}

impl RemotePolicy {
    pub fn new(config: EndpointConfig, template: PromptTemplate) -> Result<Self, AdapterError> {
        Ok(RemotePolicy {
            client: ChatClient::new(config)?,
            template,
        })
    }
}

/// `{episode seed as hex}-{step}`; unique per step of a suite.
pub fn request_tag(episode_seed: u64, step: usize) -> String {
    format!("{episode_seed:016x}-{step}")
}

impl AgentPolicy for RemotePolicy {
    fn act(&self, ctx: &StepContext<'_>, _rng: &mut Rng) -> Decision {
        let prompt = build_prompt(&self.template, ctx.observation);
        let tag = request_tag(ctx.episode_seed, ctx.step);
        match self.client.complete(&prompt, &tag) {
            Ok(c) => Decision {
                parsed: parse_action(&c.text),
                prompt,
                completion_tokens: Vec::new(),
                completion_text: c.text,
                token_count: c.token_count,
                error: None,
            },
            Err(e) => Decision {
                prompt,
                completion_tokens: Vec::new(),
                completion_text: String::new(),
                token_count: 0,
                parsed: ParsedAction::default(),
                error: Some(e.to_string()),
            },
        }
    }
}
