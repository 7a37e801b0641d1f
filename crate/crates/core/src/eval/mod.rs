//! Fixed-seed evaluation suites, oracle solvers and before/after comparison.

mod oracle;

pub use oracle::{
    transitions, value_iteration, GreedyOraclePolicy, RandomDirectionPolicy, ValueTable,
    DEFAULT_TOLERANCE,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Variant};
use crate::exec::Execution;
use crate::rng;
use crate::tmsg::{run_episode, AgentPolicy, EpisodeRecord, TerminalReason, TmsgError};
use crate::trainer::{mean, pop_std};

pub const DEFAULT_EPISODES: usize = 50;
const SUITE_SEED_BASE: u64 = 0x5eed_e7a1;

/// A frozen list of episode seeds on one environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSuite {
    pub id: String,
    pub env: EnvConfig,
    pub seeds: Vec<u64>,
}

impl EvalSuite {
    /// The standard suite of a variant: `episodes` seeds derived from the
    /// suite id, so the same id always yields the same episodes.
    pub fn standard(variant: Variant, episodes: usize) -> Self {
        EvalSuite::with_env(variant.id(), EnvConfig::new(variant), episodes)
    }

    pub fn with_env(id: impl Into<String>, env: EnvConfig, episodes: usize) -> Self {
        let id = id.into();
        let base = rng::derive_seed(SUITE_SEED_BASE, &[fnv1a(id.as_bytes())]);
        let seeds = (0..episodes as u64)
            .map(|i| rng::derive_seed(base, &[i]))
            .collect();
        EvalSuite { id, env, seeds }
    }

    /// All four standard suites, in reporting order.
    pub fn all_standard(episodes: usize) -> Vec<EvalSuite> {
        Variant::ALL
            .iter()
            .map(|&v| EvalSuite::standard(v, episodes))
            .collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Aggregate metrics of one suite. Rewards are environment rewards plus the
/// invalid-action penalty; format penalties are not included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suite_id: String,
    pub variant: Variant,
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    /// Lake: fraction reaching the goal. Snake: fraction surviving to the step cap.
    pub success_rate: f64,
    /// Fraction of steps whose completion did not parse.
    pub invalid_rate: f64,
    pub mean_length: f64,
    pub mean_composite: f64,
    /// Steps where the policy itself failed (for example a transport error).
    pub policy_errors: usize,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub episodes: Vec<EpisodeRecord>,
}

fn succeeded(variant: Variant, e: &EpisodeRecord) -> bool {
    if variant.is_lake() {
        e.terminal_reason == TerminalReason::Goal
    } else {
        e.terminal_reason == TerminalReason::StepCap
    }
}

/// Runs every suite seed once with `policy`.
///
/// Episode `s` uses `s` for its initial state, its dynamics and the policy's
/// sampling stream. Results are aggregated in seed order.
pub fn evaluate(
    policy: &dyn AgentPolicy,
    suite: &EvalSuite,
    exec: Execution,
) -> Result<Evaluation, TmsgError> {
    let opponents = suite.env.opponents();
    let cap = suite.env.step_cap();
    let episodes: Vec<EpisodeRecord> = exec
        .map_slice(&suite.seeds, |&s| {
            let mut env = suite.env.build(s, s);
            run_episode(env.as_mut(), policy, &opponents, s, cap)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    Ok(Evaluation {
        report: summarize(suite, &episodes),
        episodes,
    })
}

pub fn summarize(suite: &EvalSuite, episodes: &[EpisodeRecord]) -> EvalReport {
    let rewards: Vec<f64> = episodes.iter().map(|e| e.total_env_reward).collect();
    let composite: Vec<f64> = episodes.iter().map(|e| e.composite_reward).collect();
    let steps: usize = episodes.iter().map(|e| e.steps.len()).sum();
    let invalid: usize = episodes.iter().map(|e| e.invalid_steps()).sum();
    let n = episodes.len();
    let variant = suite.env.variant;
    let nan_if_empty = |x: f64| if n == 0 { f64::NAN } else { x };
    EvalReport {
        suite_id: suite.id.clone(),
        variant,
        episodes: n,
        mean_reward: nan_if_empty(mean(&rewards)),
        std_reward: nan_if_empty(pop_std(&rewards)),
        success_rate: nan_if_empty(
            episodes.iter().filter(|e| succeeded(variant, e)).count() as f64 / n as f64,
        ),
        invalid_rate: invalid as f64 / steps.max(1) as f64,
        mean_length: nan_if_empty(steps as f64 / n as f64),
        mean_composite: nan_if_empty(mean(&composite)),
        policy_errors: episodes
            .iter()
            .flat_map(|e| &e.steps)
            .filter(|s| s.policy_error.is_some())
            .count(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub suite_id: String,
    pub initial_mean: f64,
    pub initial_std: f64,
    pub final_mean: f64,
    pub final_std: f64,
    pub delta: f64,
}

/// Before/after table: one row per suite present in both inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(initial: &[EvalReport], trained: &[EvalReport]) -> Comparison {
    let rows = initial
        .iter()
        .filter_map(|a| {
            let b = trained.iter().find(|b| b.suite_id == a.suite_id)?;
            Some(ComparisonRow {
                suite_id: a.suite_id.clone(),
                initial_mean: a.mean_reward,
                initial_std: a.std_reward,
                final_mean: b.mean_reward,
                final_std: b.std_reward,
                delta: b.mean_reward - a.mean_reward,
            })
        })
        .collect();
    Comparison { rows }
}

impl Comparison {
    /// `suite | initial mean (std) | final mean (std) | Δ`
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<26} {:>16} {:>16} {:>8}",
            "environment", "initial", "final", "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<26} {:>16} {:>16} {:>+8.3}",
                r.suite_id,
                format!("{:.3} ({:.3})", r.initial_mean, r.initial_std),
                format!("{:.3} ({:.3})", r.final_mean, r.final_std),
                r.delta
            );
        }
        out
    }
}

/// One-column table of a set of reports.
pub fn report_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<26} {:>8} {:>16} {:>8} {:>8} {:>8}",
        "environment", "episodes", "reward", "success", "invalid", "length"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<26} {:>8} {:>16} {:>8.3} {:>8.3} {:>8.2}",
            r.suite_id,
            r.episodes,
            format!("{:.3} ({:.3})", r.mean_reward, r.std_reward),
            r.success_rate,
            r.invalid_rate,
            r.mean_length
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_are_frozen_by_id() {
        let a = EvalSuite::standard(Variant::SnakeStandard, 5);
        let b = EvalSuite::standard(Variant::SnakeStandard, 8);
        assert_eq!(a.seeds[..], b.seeds[..5]);
        assert_ne!(a.seeds, EvalSuite::standard(Variant::SnakePoison, 5).seeds);
        assert_eq!(EvalSuite::all_standard(50).len(), 4);
    }

    #[test]
    fn compare_identical_is_zero() {
        let suite = EvalSuite::standard(Variant::FrozenlakeNotSlippery, 6);
        let r = evaluate(&RandomDirectionPolicy, &suite, Execution::Sequential)
            .unwrap()
            .report;
        let c = compare(std::slice::from_ref(&r), std::slice::from_ref(&r));
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].delta, 0.0);
        assert!(c.to_table().contains("frozenlake-not-slippery"));
    }

    #[test]
    fn delta_convention() {
        let mk = |m: f64, s: f64| EvalReport {
            suite_id: "x".into(),
            variant: Variant::FrozenlakeSlippery,
            episodes: 50,
            mean_reward: m,
            std_reward: s,
            success_rate: 0.0,
            invalid_rate: 0.0,
            mean_length: 1.0,
            mean_composite: 0.0,
            policy_errors: 0,
        };
        let c = compare(&[mk(-0.158, 0.2)], &[mk(0.573, 0.121)]);
        assert!((c.rows[0].delta - 0.731).abs() < 1e-12);
        assert!(c.to_table().contains("0.573 (0.121)"));
    }
}
