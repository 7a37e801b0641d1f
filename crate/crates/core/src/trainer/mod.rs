//! Multi-step group-relative policy optimization.
//!
//! Each iteration rolls out a group of episodes from one shared initial
//! state under a frozen snapshot of the policy, normalises their composite
//! rewards into advantages, optionally keeps an advantage-weighted subset,
//! and takes a gradient-ascent step on the clipped surrogate objective with
//! a KL penalty towards a fixed reference policy.

mod advantage;
mod objective;

pub use advantage::{
    aaw_probabilities, aaw_sample, compute_advantages, mean, pop_std, recompute_sampled_advantages,
    AdvantageGroup, DEGENERATE_STD,
};
pub use objective::{
    clip, clipped_token_objective, episode_terms, importance_ratios, kl_estimate, kl_penalty,
    surrogate_objective, EpisodeTerms, ObjectiveSettings, ObjectiveValue, TokenEpisode, TokenStep,
};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::exec::Execution;
use crate::lap::{GenerationConfig, Lap, PromptTemplate};
use crate::policy::{PolicyParams, Snapshot};
use crate::rng::{self, tag};
use crate::tmsg::{run_episode, EpisodeRecord, TmsgError};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("advantages need a group of at least 2 episodes, got {0}")]
    GroupTooSmall(usize),
    #[error("cannot sample {requested} episodes from a group of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("episode index {index} out of range for a group of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("composite reward of episode {0} is not finite")]
    NonFiniteReward(usize),
    #[error("token {token} outside a vocabulary of {vocab}")]
    TokenOutOfVocab { token: u32, vocab: usize },
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error("non-finite gradient at iteration {iteration}\n{dump}")]
    NonFiniteGradient { iteration: usize, dump: String },
    #[error(transparent)]
    Game(#[from] TmsgError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Episodes per group (G).
    pub group_size: usize,
    /// Episodes kept by advantage-weighted selection (G').
    pub sampled_size: usize,
    /// Selection temperature; 0 disables selection and keeps every episode.
    pub episode_temperature: f64,
    pub clip_low: f64,
    pub clip_high: f64,
    pub kl_weight: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Gradient steps per group. One step at the rollout parameters leaves
    /// clipping inert; more steps make it active.
    pub inner_epochs: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            group_size: 16,
            sampled_size: 8,
            episode_temperature: 1.0,
            clip_low: 0.2,
            clip_high: 0.2,
            kl_weight: 0.01,
            learning_rate: 0.05,
            iterations: 300,
            inner_epochs: 1,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let err = |m: String| Err(TrainerError::Config(m));
        if self.group_size < 2 {
            return err(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            ));
        }
        if !(self.episode_temperature >= 0.0 && self.episode_temperature.is_finite()) {
            return err(format!(
                "episode_temperature must be a non-negative number, got {}",
                self.episode_temperature
            ));
        }
        if self.selection_enabled() && !(2..=self.group_size).contains(&self.sampled_size) {
            return err(format!(
                "sampled_size must be in [2, group_size = {}] when selection is on, got {}",
                self.group_size, self.sampled_size
            ));
        }
        if !(self.clip_low > 0.0 && self.clip_low < 1.0) || !(self.clip_high > 0.0) {
            return err(format!(
                "clip bounds must satisfy 0 < clip_low < 1 and clip_high > 0, got {} and {}",
                self.clip_low, self.clip_high
            ));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return err(format!(
                "kl_weight must be non-negative, got {}",
                self.kl_weight
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.inner_epochs == 0 {
            return err("inner_epochs must be at least 1".into());
        }
        Ok(())
    }

    pub fn selection_enabled(&self) -> bool {
        self.episode_temperature > 0.0
    }

    pub fn objective_settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            eps_low: self.clip_low,
            eps_high: self.clip_high,
            kl_weight: self.kl_weight,
        }
    }
}

/// One record per training iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_composite: f64,
    pub std_composite: f64,
    pub mean_env_reward: f64,
    pub mean_abs_advantage: f64,
    pub degenerate: bool,
    /// Episode indices used for the update, ascending.
    pub sampled_indices: Vec<usize>,
    pub objective: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub clipped_fraction: f64,
    pub mean_tokens_per_step: f64,
    pub invalid_rate: f64,
}

/// Seeds for iteration `iteration`: the shared initial state and each
/// episode's private stream.
pub fn iteration_seeds(seed: u64, iteration: usize, group: usize) -> (u64, Vec<u64>) {
    let initial = rng::derive_seed(seed, &[tag::INITIAL_STATE, iteration as u64]);
    let episodes = (0..group)
        .map(|j| rng::derive_seed(seed, &[tag::EPISODE, iteration as u64, j as u64]))
        .collect();
    (initial, episodes)
}

/// Everything needed to run MS-GRPO on one environment.
pub struct Trainer {
    pub config: TrainerConfig,
    pub env: EnvConfig,
    pub template: PromptTemplate,
    pub generation: GenerationConfig,
    pub reference: Snapshot,
    pub execution: Execution,
}

/// Result of [`Trainer::train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub history: Vec<IterationMetrics>,
}

impl Trainer {
    pub fn new(
        config: TrainerConfig,
        env: EnvConfig,
        template: PromptTemplate,
        generation: GenerationConfig,
        reference: &PolicyParams,
    ) -> Result<Self, TrainerError> {
        config.validate()?;
        env.validate().map_err(TrainerError::Config)?;
        generation.validate().map_err(TrainerError::Config)?;
        Ok(Trainer {
            config,
            env,
            template,
            generation,
            reference: reference.snapshot(),
            execution: Execution::default(),
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Rolls out the group of iteration `iteration` under `policy`.
    pub fn rollout_group(
        &self,
        policy: &PolicyParams,
        iteration: usize,
    ) -> Result<Vec<EpisodeRecord>, TrainerError> {
        let (initial, seeds) = iteration_seeds(self.config.seed, iteration, self.config.group_size);
        let lap = Lap {
            params: policy,
            generation: self.generation.clone(),
            template: self.template.clone(),
        };
        let opponents = self.env.opponents();
        let cap = self.env.step_cap();
        self.execution
            .map_slice(&seeds, |&s| {
                let mut env = self.env.build(initial, s);
                run_episode(env.as_mut(), &lap, &opponents, s, cap)
            })
            .into_iter()
            .collect::<Result<_, _>>()
            .map_err(TrainerError::from)
    }

    /// Runs iteration `iteration`, updating `params` in place.
    ///
    /// The outcome depends only on `params`, the configuration and the
    /// iteration index, so a run resumed from a checkpoint continues exactly.
    pub fn iterate(
        &self,
        params: &mut PolicyParams,
        iteration: usize,
    ) -> Result<IterationMetrics, TrainerError> {
        let old = params.snapshot();
        let episodes = self.rollout_group(&old, iteration)?;
        let composite: Vec<f64> = episodes.iter().map(|e| e.composite_reward).collect();
        let full = compute_advantages(&composite)?;

        let (indices, group) = if self.config.selection_enabled() {
            let mut sel = rng::stream(self.config.seed, &[tag::SELECTION, iteration as u64]);
            let mut idx = aaw_sample(
                &full.advantages,
                self.config.episode_temperature,
                self.config.sampled_size,
                &mut sel,
            )?;
            // Ascending order makes a full draw identical to no selection.
            idx.sort_unstable();
            let group = recompute_sampled_advantages(&composite, &idx)?;
            (idx, group)
        } else {
            ((0..composite.len()).collect(), full.clone())
        };

        let token_eps: Vec<TokenEpisode> = self.execution.map_slice(&indices, |&i| {
            TokenEpisode::from_record(&old.spec, &episodes[i])
        });
        let refs: Vec<&TokenEpisode> = token_eps.iter().collect();
        let settings = self.config.objective_settings();

        let mut first = None;
        for _ in 0..self.config.inner_epochs {
            let (value, grad) = objective::surrogate_objective_with(
                self.execution,
                &refs,
                &group.advantages,
                params,
                &old,
                &self.reference,
                &settings,
            )?;
            if !grad.is_finite() {
                return Err(TrainerError::NonFiniteGradient {
                    iteration,
                    dump: format!(
                        "objective={} kl={} sampled={:?} advantages={:?} composite={:?}",
                        value.objective, value.kl, indices, group.advantages, composite
                    ),
                });
            }
            let norm = grad.norm();
            params.ascend(&grad, self.config.learning_rate);
            first.get_or_insert((value, norm));
        }
        let (value, grad_norm) = first.expect("at least one inner epoch");

        let steps: usize = episodes.iter().map(|e| e.steps.len()).sum();
        let tokens: usize = episodes.iter().map(|e| e.generated_tokens()).sum();
        let invalid: usize = episodes.iter().map(|e| e.invalid_steps()).sum();
        let env_rewards: Vec<f64> = episodes.iter().map(|e| e.total_env_reward).collect();
        Ok(IterationMetrics {
            iteration,
            mean_composite: mean(&composite),
            std_composite: pop_std(&composite),
            mean_env_reward: mean(&env_rewards),
            mean_abs_advantage: mean(&group.advantages.iter().map(|a| a.abs()).collect::<Vec<_>>()),
            degenerate: group.degenerate,
            sampled_indices: indices,
            objective: value.objective,
            kl: value.kl,
            grad_norm,
            clipped_fraction: value.clipped_fraction,
            mean_tokens_per_step: tokens as f64 / steps.max(1) as f64,
            invalid_rate: invalid as f64 / steps.max(1) as f64,
        })
    }

    /// Runs iterations `start..config.iterations`, calling `on_iteration`
    /// after each update with the metrics and the updated parameters.
    pub fn train_from(
        &self,
        mut params: PolicyParams,
        start: usize,
        mut on_iteration: impl FnMut(&IterationMetrics, &PolicyParams) -> Result<(), TrainerError>,
    ) -> Result<TrainOutcome, TrainerError> {
        let mut history = Vec::new();
        for it in start..self.config.iterations {
            let m = self.iterate(&mut params, it)?;
            log::debug!(
                "iteration {it}: mean C {:.4}, mean env {:.4}, kl {:.5}, |g| {:.4}",
                m.mean_composite,
                m.mean_env_reward,
                m.kl,
                m.grad_norm
            );
            on_iteration(&m, &params)?;
            history.push(m);
        }
        Ok(TrainOutcome { params, history })
    }

    pub fn train(&self, params: PolicyParams) -> Result<TrainOutcome, TrainerError> {
        self.train_from(params, 0, |_, _| Ok(()))
    }
}

/// Trains `params` on `env` with the reference policy fixed to the initial
/// parameters.
pub fn train(
    env: EnvConfig,
    params: PolicyParams,
    config: TrainerConfig,
    template: PromptTemplate,
    generation: GenerationConfig,
) -> Result<TrainOutcome, TrainerError> {
    let trainer = Trainer::new(config, env, template, generation, &params)?;
    trainer.train(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{LakeMap, Variant};
    use crate::policy::FeatureSpec;

    fn small(config: TrainerConfig) -> (Trainer, PolicyParams) {
        let map = LakeMap::from_text("SFFF/FHFH/FFFH/HFFG").unwrap();
        let env = EnvConfig::new(Variant::FrozenlakeNotSlippery).with_fixed_map(map);
        let params = PolicyParams::format_prior(FeatureSpec::default(), 4.0);
        let gen = GenerationConfig {
            max_tokens: 24,
            ..GenerationConfig::default()
        };
        let t = Trainer::new(config, env, PromptTemplate::agent(), gen, &params).unwrap();
        (t, params)
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig {
            sampled_size: 1,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
        let off = TrainerConfig {
            sampled_size: 1,
            episode_temperature: 0.0,
            ..TrainerConfig::default()
        };
        assert!(off.validate().is_ok());
        let too_many = TrainerConfig {
            sampled_size: 17,
            ..TrainerConfig::default()
        };
        assert!(too_many.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (t, p) = small(TrainerConfig {
            group_size: 4,
            sampled_size: 2,
            iterations: 3,
            learning_rate: 0.0,
            ..TrainerConfig::default()
        });
        let out = t.train(p.clone()).unwrap();
        assert_eq!(out.params, p);
        assert_eq!(out.history.len(), 3);
        assert!(out.history.iter().all(|m| m.sampled_indices.len() == 2));
    }

    #[test]
    fn group_shares_initial_state() {
        let (t, p) = small(TrainerConfig {
            group_size: 6,
            sampled_size: 4,
            ..TrainerConfig::default()
        });
        let eps = t.rollout_group(&p, 0).unwrap();
        let first = &eps[0].steps[0].observation;
        assert!(eps.iter().all(|e| &e.steps[0].observation == first));
    }
}
