//! Language agent policies: prompt template, generation config, token model
//! and action parser.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::policy::{self, PolicyParams, TokenId};
use crate::rng::Rng;
use crate::tmsg::{AgentPolicy, Decision, Direction, Observation, StepContext};

pub const PLACEHOLDER: &str = "{observation}";

/// Reasoning and output-format instructions shared by every environment.
pub const AGENT_TEMPLATE: &str = "You are an agent playing a grid game. Read the observation and choose your next move.\n\n{observation}\nFirst think briefly inside <think></think> tags, then give exactly one action inside <action></action> tags, for example: <think>the goal is below me</think><action>down</action>\nValid actions: up, down, left, right.\n";

pub const AGENT_TEMPLATE_ID: &str = "agent-v1";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{id}` has {count} `{{observation}}` placeholders, expected exactly one")]
    Placeholder { id: String, count: usize },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown template id `{0}`")]
    Unknown(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    text: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, TemplateError> {
        let (id, text) = (id.into(), text.into());
        let count = text.matches(PLACEHOLDER).count();
        if count != 1 {
            return Err(TemplateError::Placeholder { id, count });
        }
        Ok(PromptTemplate { id, text })
    }

    pub fn agent() -> Self {
        PromptTemplate::new(AGENT_TEMPLATE_ID, AGENT_TEMPLATE).expect("built-in template")
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Templates keyed by id, loadable from a directory of `<id>.txt` files.
#[derive(Clone, Debug, Default)]
pub struct TemplateLibrary {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateLibrary {
    /// The built-in agent template only.
    pub fn builtin() -> Self {
        let mut lib = TemplateLibrary::default();
        lib.insert(PromptTemplate::agent());
        lib
    }

    pub fn insert(&mut self, t: PromptTemplate) {
        self.templates.insert(t.id.clone(), t);
    }

    /// Adds every `*.txt` file in `dir`, keyed by file stem.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, TemplateError> {
        let io = |source| TemplateError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .collect::<Result<_, _>>()
            .map_err(io)?;
        entries.sort_by_key(|e| e.path());
        let mut n = 0;
        for e in entries {
            let path = e.path();
            if path.extension().and_then(|x| x.to_str()) != Some("txt") {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })?;
            self.insert(PromptTemplate::new(id, text)?);
            n += 1;
        }
        Ok(n)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(id)
            .ok_or_else(|| TemplateError::Unknown(id.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub temperature: f64,
    /// `None` keeps the whole vocabulary.
    #[serde(default)]
    pub top_k: Option<usize>,
    pub max_tokens: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 1.0,
            top_k: None,
            max_tokens: 200,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.top_k == Some(0) {
            return Err("top_k must be positive".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be at least 1".into());
        }
        Ok(())
    }
}

/// Result of the action parser; `value == None` is the unparseable outcome.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAction {
    pub value: Option<Direction>,
    pub raw_span: String,
}

/// Substitutes the observation into the template.
pub fn build_prompt(template: &PromptTemplate, observation: &Observation) -> String {
    template.text.replacen(PLACEHOLDER, &observation.text, 1)
}

/// Reads the content of the last `<action>…</action>` pair, trimmed and
/// lowercased, and maps the four direction words to actions.
pub fn parse_action(completion: &str) -> ParsedAction {
    const OPEN: &str = "<action>";
    const CLOSE: &str = "</action>";
    let Some(close) = completion.rfind(CLOSE) else {
        return ParsedAction::default();
    };
    let Some(open) = completion[..close].rfind(OPEN) else {
        return ParsedAction::default();
    };
    let raw = &completion[open + OPEN.len()..close];
    ParsedAction {
        value: Direction::from_word(&raw.trim().to_lowercase()),
        raw_span: raw.to_string(),
    }
}

/// A language agent policy backed by the token model.
#[derive(Clone, Debug)]
pub struct Lap<'a> {
    pub params: &'a PolicyParams,
    pub generation: GenerationConfig,
    pub template: PromptTemplate,
}

/// Prompt, sampled tokens, decoded text and parsed action for one step.
pub fn act(
    params: &PolicyParams,
    generation: &GenerationConfig,
    template: &PromptTemplate,
    observation: &Observation,
    rng: &mut Rng,
) -> (String, Vec<TokenId>, String, ParsedAction) {
    let prompt = build_prompt(template, observation);
    let tokens = policy::sample_completion(params, generation, &prompt, rng);
    let text = params.vocab.decode(&tokens);
    let parsed = parse_action(&text);
    (prompt, tokens, text, parsed)
}

impl AgentPolicy for Lap<'_> {
    fn act(&self, ctx: &StepContext<'_>, rng: &mut Rng) -> Decision {
        let (prompt, tokens, text, parsed) = act(
            self.params,
            &self.generation,
            &self.template,
            ctx.observation,
            rng,
        );
        Decision {
            prompt,
            token_count: tokens.len(),
            completion_tokens: tokens,
            completion_text: text,
            parsed,
            error: None,
        }
    }
}
