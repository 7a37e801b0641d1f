//! Run configuration: one TOML file plus `--set path=value` overrides.

use std::path::{Path, PathBuf};

use msgrpo::env::{EnvConfig, Variant};
use msgrpo::eval::{EvalSuite, DEFAULT_EPISODES};
use msgrpo::lap::{GenerationConfig, PromptTemplate, TemplateLibrary, AGENT_TEMPLATE_ID};
use msgrpo::policy::{FeatureSpec, PolicyParams, Vocabulary, DEFAULT_PRIOR_STRENGTH};
use msgrpo::rng::{self, tag};
use msgrpo::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::UsageError;

/// Suite name that evaluates on the training environment itself.
pub const TRAIN_SUITE: &str = "train";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds training, selection and parameter initialisation.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub template: String,
    /// Extra `*.txt` templates, keyed by file stem.
    pub template_dir: Option<PathBuf>,
    /// Iterations between checkpoints; the last iteration is always saved.
    pub checkpoint_every: usize,
    pub trainer: TrainerConfig,
    pub env: EnvConfig,
    pub generation: GenerationConfig,
    pub policy: PolicyConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            template: AGENT_TEMPLATE_ID.to_string(),
            template_dir: None,
            checkpoint_every: 50,
            trainer: TrainerConfig::default(),
            env: EnvConfig::new(Variant::FrozenlakeNotSlippery),
            generation: GenerationConfig::default(),
            policy: PolicyConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Follows the response format, no preference between directions.
    Prior,
    Zeros,
    /// Uniform in `[-random_scale, random_scale]`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub init: Init,
    pub prior_strength: f64,
    pub random_scale: f64,
    pub features: FeatureSpec,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            init: Init::Prior,
            prior_strength: DEFAULT_PRIOR_STRENGTH,
            random_scale: 0.1,
            features: FeatureSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Variant ids, or `train` for the training environment.
    pub suites: Vec<String>,
    pub episodes: usize,
    /// Also log one summary record per evaluated episode.
    pub log_episodes: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            suites: vec![TRAIN_SUITE.to_string()],
            episodes: DEFAULT_EPISODES,
            log_episodes: false,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults), applies `overrides` in order and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, UsageError> {
        let mut user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| UsageError(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        if user
            .get("trainer")
            .and_then(Value::as_table)
            .is_some_and(|t| t.contains_key("seed"))
        {
            return Err(UsageError(
                "trainer.seed: set the top-level `seed` instead".into(),
            ));
        }
        let mut merged = defaults_table();
        merge(&mut merged, user);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(merged))
            .map_err(|e| UsageError(format!("{}: {}", e.path(), e.inner().message())))?;
        cfg.trainer.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The config as written into a run directory. Loading it back gives an
    /// equal value.
    pub fn to_toml(&self) -> String {
        let mut t = table_of(self);
        if let Some(Value::Table(tr)) = t.get_mut("trainer") {
            tr.remove("seed");
        }
        toml::to_string(&t).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let field = |name: &str, e: String| UsageError(format!("{name}: {e}"));
        self.trainer
            .validate()
            .map_err(|e| field("trainer", e.to_string()))?;
        self.env.validate().map_err(|e| field("env", e))?;
        self.generation
            .validate()
            .map_err(|e| field("generation", e))?;
        if self.checkpoint_every == 0 {
            return Err(field("checkpoint_every", "must be positive".into()));
        }
        if !self.policy.prior_strength.is_finite() {
            return Err(field("policy.prior_strength", "must be finite".into()));
        }
        if !(self.policy.random_scale.is_finite() && self.policy.random_scale >= 0.0) {
            return Err(field(
                "policy.random_scale",
                "must be finite and non-negative".into(),
            ));
        }
        if self.policy.features.max_tokens < self.generation.max_tokens {
            return Err(field(
                "policy.features.max_tokens",
                format!(
                    "must cover generation.max_tokens ({})",
                    self.generation.max_tokens
                ),
            ));
        }
        if self.eval.episodes == 0 {
            return Err(field("eval.episodes", "must be positive".into()));
        }
        for s in &self.eval.suites {
            suite_by_name(s, &self.env, 1).map_err(|e| field("eval.suites", e.0))?;
        }
        self.prompt_template()?;
        Ok(())
    }

    pub fn prompt_template(&self) -> Result<PromptTemplate, UsageError> {
        let mut lib = TemplateLibrary::builtin();
        if let Some(dir) = &self.template_dir {
            lib.load_dir(dir)
                .map_err(|e| UsageError(format!("template_dir: {e}")))?;
        }
        lib.get(&self.template)
            .cloned()
            .map_err(|e| UsageError(format!("template: {e}")))
    }

    pub fn initial_params(&self) -> PolicyParams {
        let spec = self.policy.features.clone();
        match self.policy.init {
            Init::Prior => PolicyParams::format_prior(spec, self.policy.prior_strength),
            Init::Zeros => PolicyParams::zeros(Vocabulary::agent(), spec),
            Init::Random => {
                let mut rng = rng::stream(self.seed, &[tag::INIT_PARAMS]);
                PolicyParams::random(
                    Vocabulary::agent(),
                    spec,
                    self.policy.random_scale,
                    &mut rng,
                )
            }
        }
    }

    pub fn eval_suites(&self) -> Vec<EvalSuite> {
        self.eval
            .suites
            .iter()
            .map(|s| suite_by_name(s, &self.env, self.eval.episodes).expect("validated"))
            .collect()
    }
}

/// A standard suite by variant id, or the training environment for `train`.
pub fn suite_by_name(
    name: &str,
    train_env: &EnvConfig,
    episodes: usize,
) -> Result<EvalSuite, UsageError> {
    if name == TRAIN_SUITE {
        return Ok(EvalSuite::with_env(
            TRAIN_SUITE,
            train_env.clone(),
            episodes,
        ));
    }
    name.parse::<Variant>()
        .map(|v| EvalSuite::standard(v, episodes))
        .map_err(|_| {
            UsageError(format!(
                "unknown suite `{name}`; expected `{TRAIN_SUITE}` or one of {}",
                Variant::ALL.map(Variant::id).join(", ")
            ))
        })
}

fn table_of<T: Serialize>(value: &T) -> Table {
    match Value::try_from(value).expect("serializes to TOML") {
        Value::Table(t) => t,
        _ => unreachable!("structs serialize to tables"),
    }
}

fn defaults_table() -> Table {
    let mut t = table_of(&RunConfig::default());
    if let Some(Value::Table(tr)) = t.get_mut("trainer") {
        tr.remove("seed");
    }
    t
}

/// Recursively overlays `top` onto `base`; non-table values replace.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal, falling back
/// to a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), UsageError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override `{spec}` is not of the form path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(UsageError(format!(
            "override `{spec}` has an empty path segment"
        )));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));

    let (last, parents) = keys.split_last().expect("non-empty");
    let mut cur = table;
    for (i, k) in parents.iter().enumerate() {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            UsageError(format!(
                "override `{spec}`: `{}` is not a table",
                keys[..=i].join(".")
            ))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
