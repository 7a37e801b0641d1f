use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use msgrpo::env::Variant;
use msgrpo::tmsg::{run_episode, EpisodeRecord};

use super::{ConfigArgs, LoadedPolicy, PolicyArgs};
use crate::records::{read_episode_log, write_episode_log};
use crate::UsageError;

#[derive(Debug, clap::Args)]
pub struct PlayArgs {
    /// Environment variant; defaults to the config's.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Episode seed: initial state, dynamics and policy sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Replay an episode log instead of rolling out.
    #[arg(long, conflicts_with_all = ["checkpoint", "endpoint", "policy", "record"])]
    pub from_log: Option<PathBuf>,
    /// Position of the episode in the log.
    #[arg(long, default_value_t = 0, requires = "from_log")]
    pub episode: usize,
    /// Save the rolled-out episode as an episode log.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn run(args: PlayArgs) -> Result<()> {
    let (variant, episode) = match &args.from_log {
        Some(path) => {
            let mut all =
                read_episode_log(path).with_context(|| format!("reading {}", path.display()))?;
            if args.episode >= all.len() {
                return Err(UsageError(format!(
                    "{} holds {} episodes, asked for #{}",
                    path.display(),
                    all.len(),
                    args.episode
                ))
                .into());
            }
            let e = all.swap_remove(args.episode);
            (e.variant, e.record)
        }
        None => {
            let mut cfg = args.config.load()?;
            if let Some(v) = args.variant {
                if cfg.env.fixed_map.is_some() && v.is_snake() {
                    cfg.env.fixed_map = None;
                }
                cfg.env.variant = v;
            }
            cfg.validate()?;
            let policy = LoadedPolicy::resolve(&args.policy, &cfg)?;
            let env_cfg = cfg.env.clone();
            let record = policy.with(&cfg, |agent| {
                let mut env = env_cfg.build(args.seed, args.seed);
                run_episode(
                    env.as_mut(),
                    agent,
                    &env_cfg.opponents(),
                    args.seed,
                    env_cfg.step_cap(),
                )
            })??;
            if let Some(p) = &args.record {
                let mut f = std::io::BufWriter::new(
                    std::fs::File::create(p)
                        .with_context(|| format!("creating {}", p.display()))?,
                );
                write_episode_log(&mut f, env_cfg.variant, &record)?;
                f.flush()?;
            }
            (env_cfg.variant, record)
        }
    };
    print!("{}", transcript(variant, &episode));
    Ok(())
}

/// Human-readable episode: every observation, completion, action and reward.
pub fn transcript(variant: Variant, e: &EpisodeRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "episode {} on {variant}", e.seed);
    for (i, s) in e.steps.iter().enumerate() {
        let _ = writeln!(out, "--- step {i} ---");
        let _ = writeln!(out, "{}", s.observation.text.trim_end());
        let _ = writeln!(out, "completion: {:?}", s.completion_text);
        let parsed = s.parsed_action.map_or("none", |d| d.word());
        let _ = writeln!(out, "action: {parsed} (applied {:?})", s.applied_action);
        let _ = writeln!(
            out,
            "reward: env {:+.3} invalid {:+.3} format {:+.3}",
            s.env_reward,
            s.invalid_penalty,
            s.format_penalty.total()
        );
        if let Some(err) = &s.policy_error {
            let _ = writeln!(out, "policy error: {err}");
        }
    }
    let _ = writeln!(
        out,
        "=== {:?} after {} steps: env reward {:.3}, composite {:.3}",
        e.terminal_reason,
        e.steps.len(),
        e.total_env_reward,
        e.composite_reward
    );
    out
}
