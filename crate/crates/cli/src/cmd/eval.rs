use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use msgrpo::env::Variant;
use msgrpo::eval::{compare, evaluate, report_table, EvalReport, EvalSuite, DEFAULT_EPISODES};
use msgrpo::lap::Lap;
use msgrpo::Execution;

use super::{load_checkpoint, ConfigArgs, LoadedPolicy, PolicyArgs};
use crate::config::suite_by_name;
use crate::records::{write_episode_log, Entry, EpisodeSummary, EvalEntry, RunLog};
use crate::UsageError;

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Also evaluate this checkpoint and print a before/after table.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Suites to run: variant ids or `train`. Defaults to all four variants.
    #[arg(long, value_delimiter = ',')]
    pub suites: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_EPISODES)]
    pub episodes: usize,
    /// Supplies the template, generation settings and the `train` suite.
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Append eval_report (and episode) records to this run log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write every evaluated episode, step by step, to this file.
    #[arg(long)]
    pub episode_log: Option<PathBuf>,
}

pub fn run(args: EvalArgs, exec: Execution) -> Result<()> {
    let cfg = args.config.load()?;
    if args.episodes == 0 {
        return Err(UsageError("--episodes must be positive".into()).into());
    }
    let names: Vec<String> = if args.suites.is_empty() {
        Variant::ALL.iter().map(|v| v.id().to_string()).collect()
    } else {
        args.suites.clone()
    };
    let suites: Vec<EvalSuite> = names
        .iter()
        .map(|n| suite_by_name(n, &cfg.env, args.episodes))
        .collect::<Result<_, _>>()?;
    let policy = LoadedPolicy::resolve(&args.policy, &cfg)?;
    let baseline = args.baseline.as_deref().map(load_checkpoint).transpose()?;

    let mut log = match &args.out {
        Some(p) => {
            let existing = if p.exists() {
                crate::records::read_run_log(p, false)?.len() as u64
            } else {
                0
            };
            Some(RunLog::append_to(p, existing)?)
        }
        None => None,
    };
    let mut episode_log = match &args.episode_log {
        Some(p) => Some(BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };

    let mut run_suites =
        |agent: &dyn msgrpo::tmsg::AgentPolicy, id: &str| -> Result<Vec<EvalReport>> {
            let mut reports = Vec::new();
            for suite in &suites {
                let ev = evaluate(agent, suite, exec)?;
                if let Some(out) = episode_log.as_mut() {
                    for e in &ev.episodes {
                        write_episode_log(out, suite.env.variant, e)?;
                    }
                }
                if let Some(log) = log.as_mut() {
                    for e in &ev.episodes {
                        log.write(&Entry::Episode(EpisodeSummary::of(&suite.id, id, e)))?;
                    }
                    log.write(&Entry::EvalReport(EvalEntry {
                        checkpoint_id: id.to_string(),
                        report: ev.report.clone(),
                    }))?;
                }
                if ev.report.policy_errors > 0 {
                    log::warn!(
                        "{}: {} steps failed inside the policy and were recorded as invalid",
                        suite.id,
                        ev.report.policy_errors
                    );
                }
                reports.push(ev.report);
            }
            Ok(reports)
        };

    let id = policy.id();
    let reports = policy.with(&cfg, |agent| run_suites(agent, &id))??;
    match baseline {
        Some((params, base_id)) => {
            let lap = Lap {
                params: &params,
                generation: cfg.generation.clone(),
                template: cfg.prompt_template()?,
            };
            let initial = run_suites(&lap, &base_id)?;
            print!("{}", compare(&initial, &reports).to_table());
        }
        None => print!("{}", report_table(&reports)),
    }
    let errors: usize = reports.iter().map(|r| r.policy_errors).sum();
    if errors > 0 {
        println!("policy errors: {errors} steps (recorded as invalid actions)");
    }
    if let Some(mut out) = episode_log {
        out.flush()?;
    }
    Ok(())
}
