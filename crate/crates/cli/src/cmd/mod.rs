//! Subcommands.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use msgrpo::eval::{GreedyOraclePolicy, RandomDirectionPolicy};
use msgrpo::lap::Lap;
use msgrpo::policy::PolicyParams;
use msgrpo::tmsg::AgentPolicy;
use msgrpo::Execution;
use msgrpo_adapter::{EndpointConfig, RemotePolicy};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::UsageError;

pub mod eval;
pub mod oracle;
pub mod play;
pub mod train;

#[derive(Debug, Parser)]
#[command(
    name = "msgrpo",
    version,
    about = "Train and evaluate language-agent policies on text grid games"
)]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Run episodes one at a time instead of in parallel. Results are identical.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy; writes a run directory.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint, a remote endpoint or a scripted policy on suites.
    Eval(eval::EvalArgs),
    /// Print one episode: rolled out now or replayed from an episode log.
    Play(play::PlayArgs),
    /// Print a lake map with its exact values and greedy actions.
    Oracle(oracle::OracleArgs),
}

impl Cli {
    pub fn run(self) -> Result<()> {
        let exec = execution(self.sequential);
        match self.command {
            Command::Train(a) => train::run(a, exec),
            Command::Eval(a) => eval::run(a, exec),
            Command::Play(a) => play::run(a),
            Command::Oracle(a) => oracle::run(a),
        }
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

/// Config file plus overrides, shared by the commands that need one.
#[derive(Debug, Clone, clap::Args)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set trainer.iterations=5` (repeatable).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig, UsageError> {
        RunConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    /// Value-iteration greedy policy (Frozen Lake only).
    Oracle,
    /// Uniformly random directions.
    Random,
}

/// Where a policy comes from.
#[derive(Debug, Clone, clap::Args)]
pub struct PolicyArgs {
    /// Checkpoint file of the token model.
    #[arg(long, group = "source")]
    pub checkpoint: Option<PathBuf>,
    /// TOML endpoint configuration of a remote chat-completions model.
    #[arg(long, group = "source")]
    pub endpoint: Option<PathBuf>,
    /// A scripted policy.
    #[arg(long, value_enum, group = "source")]
    pub policy: Option<Builtin>,
}

/// A resolved policy and the id it is reported under.
pub enum LoadedPolicy {
    Model { params: PolicyParams, id: String },
    Remote(Box<RemotePolicy>),
    Oracle(GreedyOraclePolicy),
    Random(RandomDirectionPolicy),
}

impl LoadedPolicy {
    pub fn resolve(args: &PolicyArgs, cfg: &RunConfig) -> Result<LoadedPolicy> {
        if let Some(p) = &args.checkpoint {
            let (params, id) = load_checkpoint(p)?;
            return Ok(LoadedPolicy::Model { params, id });
        }
        if let Some(p) = &args.endpoint {
            let endpoint = load_endpoint(p)?;
            let remote = RemotePolicy::new(endpoint, cfg.prompt_template()?)
                .map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
            return Ok(LoadedPolicy::Remote(Box::new(remote)));
        }
        Ok(match args.policy {
            Some(Builtin::Oracle) => LoadedPolicy::Oracle(GreedyOraclePolicy::new()),
            Some(Builtin::Random) => LoadedPolicy::Random(RandomDirectionPolicy),
            None => {
                return Err(UsageError(
                    "no policy given: pass --checkpoint, --endpoint or --policy".into(),
                )
                .into())
            }
        })
    }

    pub fn id(&self) -> String {
        match self {
            LoadedPolicy::Model { id, .. } => id.clone(),
            LoadedPolicy::Remote(r) => format!("endpoint:{}", r.client.config().model),
            LoadedPolicy::Oracle(_) => "oracle".into(),
            LoadedPolicy::Random(_) => "random".into(),
        }
    }

    /// Runs `f` with the policy as an [`AgentPolicy`].
    pub fn with<T>(&self, cfg: &RunConfig, f: impl FnOnce(&dyn AgentPolicy) -> T) -> Result<T> {
        Ok(match self {
            LoadedPolicy::Model { params, .. } => {
                let lap = Lap {
                    params,
                    generation: cfg.generation.clone(),
                    template: cfg.prompt_template()?,
                };
                f(&lap)
            }
            LoadedPolicy::Remote(r) => f(r.as_ref()),
            LoadedPolicy::Oracle(o) => f(o),
            LoadedPolicy::Random(r) => f(r),
        })
    }
}

/// Loads a checkpoint; its id is `sha256:<hex>`. A missing file is a usage error.
pub fn load_checkpoint(path: &Path) -> Result<(PolicyParams, String)> {
    if !path.is_file() {
        return Err(UsageError(format!("checkpoint {} not found", path.display())).into());
    }
    let (ck, hash) = Checkpoint::load(path)?;
    Ok((ck.params, format!("sha256:{hash}")))
}

pub fn load_endpoint(path: &Path) -> Result<EndpointConfig, UsageError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        UsageError(format!(
            "cannot read endpoint config {}: {e}",
            path.display()
        ))
    })?;
    let de = toml::Deserializer::new(&text);
    let cfg: EndpointConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        UsageError(format!(
            "{}: {}: {}",
            path.display(),
            e.path(),
            e.inner().message()
        ))
    })?;
    cfg.validate()
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}
