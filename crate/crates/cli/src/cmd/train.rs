use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use msgrpo::eval::{compare, evaluate, EvalReport};
use msgrpo::lap::Lap;
use msgrpo::policy::PolicyParams;
use msgrpo::trainer::Trainer;
use msgrpo::Execution;

use super::ConfigArgs;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::records::{
    read_run_log, CheckpointRef, CheckpointRole, Entry, EpisodeSummary, EvalEntry, RunLog,
};
use crate::UsageError;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REFERENCE_FILE: &str = "reference.ckpt";
pub const TABLE_FILE: &str = "eval_table.txt";

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory; defaults to `output_dir` of the config. Must be empty.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue the run in this directory from its latest checkpoint.
    #[arg(long, conflicts_with_all = ["config", "set", "out"])]
    pub resume: Option<PathBuf>,
    /// Stop after this many completed iterations without evaluating, as an
    /// interrupted run would.
    #[arg(long, hide = true)]
    pub halt_after: Option<usize>,
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoints/ckpt-{iteration:06}.ckpt")
}

struct Run {
    cfg: RunConfig,
    dir: PathBuf,
    log: RunLog,
    params: PolicyParams,
    reference: PolicyParams,
    reference_id: String,
    latest_id: String,
    start: usize,
}

pub fn run(args: TrainArgs, exec: Execution) -> Result<()> {
    let mut run = match &args.resume {
        Some(dir) => resume(dir)?,
        None => fresh(&args)?,
    };
    let cfg = run.cfg.clone();
    let total = cfg.trainer.iterations;
    let trainer = Trainer::new(
        cfg.trainer.clone(),
        cfg.env.clone(),
        cfg.prompt_template()?,
        cfg.generation.clone(),
        &run.reference,
    )?
    .with_execution(exec);

    let mut latest_id = run.latest_id.clone();
    for it in run.start..total {
        let m = trainer.iterate(&mut run.params, it)?;
        log::info!(
            "iteration {it}: mean composite {:.4}, mean env reward {:.4}, kl {:.5}",
            m.mean_composite,
            m.mean_env_reward,
            m.kl
        );
        run.log.write(&Entry::IterationMetrics(m))?;
        let done = it + 1;
        if done % cfg.checkpoint_every == 0 || done == total {
            latest_id = save_checkpoint(&mut run, done, CheckpointRole::Policy)?;
        }
        if args.halt_after == Some(done) && done < total {
            println!("halted after {done} iterations in {}", run.dir.display());
            return Ok(());
        }
    }

    let suites = cfg.eval_suites();
    if suites.is_empty() {
        println!("trained {total} iterations in {}", run.dir.display());
        return Ok(());
    }
    let template = cfg.prompt_template()?;
    let mut eval_params = |params: &PolicyParams, id: &str| -> Result<Vec<EvalReport>> {
        let lap = Lap {
            params,
            generation: cfg.generation.clone(),
            template: template.clone(),
        };
        let mut reports = Vec::new();
        for suite in &suites {
            let ev = evaluate(&lap, suite, exec)?;
            if cfg.eval.log_episodes {
                for e in &ev.episodes {
                    run.log
                        .write(&Entry::Episode(EpisodeSummary::of(&suite.id, id, e)))?;
                }
            }
            run.log.write(&Entry::EvalReport(EvalEntry {
                checkpoint_id: id.to_string(),
                report: ev.report.clone(),
            }))?;
            reports.push(ev.report);
        }
        Ok(reports)
    };
    let initial = eval_params(&run.reference, &run.reference_id)?;
    let trained = eval_params(&run.params, &latest_id)?;
    let table = compare(&initial, &trained).to_table();
    std::fs::write(run.dir.join(TABLE_FILE), &table)?;
    print!("{table}");
    println!("trained {total} iterations in {}", run.dir.display());
    Ok(())
}

fn save_checkpoint(run: &mut Run, iteration: usize, role: CheckpointRole) -> Result<String> {
    let (rel, params) = match role {
        CheckpointRole::Reference => (REFERENCE_FILE.to_string(), &run.reference),
        CheckpointRole::Policy => (checkpoint_name(iteration), &run.params),
    };
    let hash = Checkpoint::new(iteration, params.clone())
        .save(&run.dir.join(&rel))
        .with_context(|| format!("writing {rel}"))?;
    run.log.write(&Entry::CheckpointRef(CheckpointRef {
        role,
        iteration,
        path: rel,
        sha256: hash.clone(),
    }))?;
    Ok(format!("sha256:{hash}"))
}

fn fresh(args: &TrainArgs) -> Result<Run> {
    let cfg = args.config.load()?;
    let dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    if dir.exists() && dir.read_dir()?.next().is_some() {
        return Err(UsageError(format!(
            "run directory {} is not empty; use --resume to continue it",
            dir.display()
        ))
        .into());
    }
    std::fs::create_dir_all(dir.join("checkpoints"))
        .with_context(|| format!("creating {}", dir.display()))?;
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml())?;
    if RunConfig::load(Some(&config_path), &[])? != cfg {
        bail!("resolved config does not reload to the same value");
    }
    let params = cfg.initial_params();
    let log = RunLog::create(&dir.join(METRICS_FILE))?;
    let mut run = Run {
        cfg,
        dir,
        log,
        reference: params.clone(),
        params,
        reference_id: String::new(),
        latest_id: String::new(),
        start: 0,
    };
    run.reference_id = save_checkpoint(&mut run, 0, CheckpointRole::Reference)?;
    run.latest_id = run.reference_id.clone();
    Ok(run)
}

/// Reopens a run at its latest checkpoint. Log records written after that
/// checkpoint are dropped; they are reproduced exactly by continuing.
fn resume(dir: &Path) -> Result<Run> {
    let config_path = dir.join(CONFIG_FILE);
    if !config_path.is_file() {
        return Err(UsageError(format!("{} is not a run directory", dir.display())).into());
    }
    let cfg = RunConfig::load(Some(&config_path), &[])?;
    let metrics = dir.join(METRICS_FILE);
    let records =
        read_run_log(&metrics, true).with_context(|| format!("reading {}", metrics.display()))?;

    let refs: Vec<(usize, &CheckpointRef)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, (_, e))| match e {
            Entry::CheckpointRef(c) => Some((i, c)),
            _ => None,
        })
        .collect();
    let Some(&(_, reference)) = refs
        .iter()
        .find(|(_, c)| c.role == CheckpointRole::Reference)
    else {
        bail!("{} has no reference checkpoint", metrics.display());
    };
    let &(keep_upto, latest) = refs.last().expect("reference exists");

    let reference_params =
        Checkpoint::load_verified(&dir.join(&reference.path), &reference.sha256)?;
    let latest_params = Checkpoint::load_verified(&dir.join(&latest.path), &latest.sha256)?;
    if latest_params.iteration != latest.iteration {
        bail!(
            "{} holds iteration {}, log says {}",
            latest.path,
            latest_params.iteration,
            latest.iteration
        );
    }

    let kept = &records[..=keep_upto];
    let tmp = metrics.with_extension("jsonl.tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for (line, _) in kept {
            f.write_all(line.as_bytes())?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, &metrics)?;
    log::info!(
        "resuming {} at iteration {} ({} log records kept of {})",
        dir.display(),
        latest.iteration,
        kept.len(),
        records.len()
    );
    Ok(Run {
        log: RunLog::append_to(&metrics, kept.len() as u64)?,
        start: latest.iteration,
        params: latest_params.params,
        reference: reference_params.params,
        reference_id: format!("sha256:{}", reference.sha256),
        latest_id: format!("sha256:{}", latest.sha256),
        dir: dir.to_path_buf(),
        cfg,
    })
}
