//! Importance ratios, the clipped token objective, the KL penalty and the
//! group surrogate with its exact gradient.

use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::policy::{FeatureSpec, Gradient, PolicyParams, PromptFeatures, TokenId, END};
use crate::tmsg::EpisodeRecord;

/// One step of an episode as seen by the trainer: the prompt features and
/// the generated tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenStep {
    pub features: PromptFeatures,
    pub tokens: Vec<TokenId>,
}

/// The token view of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenEpisode {
    pub steps: Vec<TokenStep>,
}

impl TokenEpisode {
    pub fn new<S: AsRef<str>>(
        spec: &FeatureSpec,
        steps: impl IntoIterator<Item = (S, Vec<TokenId>)>,
    ) -> Self {
        TokenEpisode {
            steps: steps
                .into_iter()
                .map(|(prompt, tokens)| TokenStep {
                    features: spec.prompt_features(prompt.as_ref()),
                    tokens,
                })
                .collect(),
        }
    }

    pub fn from_record(spec: &FeatureSpec, record: &EpisodeRecord) -> Self {
        TokenEpisode::new(
            spec,
            record
                .steps
                .iter()
                .map(|s| (s.prompt.as_str(), s.completion_tokens.clone())),
        )
    }

    /// `|y|`, the number of generated tokens over all steps.
    pub fn token_count(&self) -> usize {
        self.steps.iter().map(|s| s.tokens.len()).sum()
    }

    pub fn check_vocab(&self, vocab_len: usize) -> Result<(), TrainerError> {
        for s in &self.steps {
            if let Some(&t) = s.tokens.iter().find(|&&t| t as usize >= vocab_len) {
                return Err(TrainerError::TokenOutOfVocab {
                    token: t,
                    vocab: vocab_len,
                });
            }
        }
        Ok(())
    }
}

/// `w = exp(log p_θ − log p_old)` for every generated token, per step.
pub fn importance_ratios(
    theta: &PolicyParams,
    old: &PolicyParams,
    episode: &TokenEpisode,
) -> Result<Vec<Vec<f64>>, TrainerError> {
    episode.check_vocab(theta.vocab.len().min(old.vocab.len()))?;
    Ok(episode
        .steps
        .iter()
        .map(|s| {
            let a = theta.token_path_logprobs(&s.features, &s.tokens);
            let b = old.token_path_logprobs(&s.features, &s.tokens);
            a.iter().zip(&b).map(|(x, y)| (x - y).exp()).collect()
        })
        .collect())
}

pub fn clip(w: f64, eps_low: f64, eps_high: f64) -> f64 {
    w.clamp(1.0 - eps_low, 1.0 + eps_high)
}

/// `min(w·A, clip(w, 1−ε_low, 1+ε_high)·A)`.
pub fn clipped_token_objective(w: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    (w * advantage).min(clip(w, eps_low, eps_high) * advantage)
}

/// Per-token KL estimate `r − ln r − 1` given `ln r = log p_ref − log p_θ`.
pub fn kl_estimate(log_ratio: f64) -> f64 {
    // exp_m1 keeps precision when r is close to one.
    log_ratio.exp_m1() - log_ratio
}

/// KL estimate averaged over the episode's generated tokens. Zero for an
/// episode without tokens.
pub fn kl_penalty(
    theta: &PolicyParams,
    reference: &PolicyParams,
    episode: &TokenEpisode,
) -> Result<f64, TrainerError> {
    episode.check_vocab(theta.vocab.len().min(reference.vocab.len()))?;
    let n = episode.token_count();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = episode
        .steps
        .iter()
        .map(|s| {
            let a = theta.token_path_logprobs(&s.features, &s.tokens);
            let r = reference.token_path_logprobs(&s.features, &s.tokens);
            a.iter()
                .zip(&r)
                .map(|(x, y)| kl_estimate(y - x))
                .sum::<f64>()
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSettings {
    pub eps_low: f64,
    pub eps_high: f64,
    pub kl_weight: f64,
}

/// Contribution of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTerms {
    /// `(1/|y|) Σ_t Σ_k min(wA, clip(w)A)`
    pub clipped_mean: f64,
    /// Per-token mean KL estimate.
    pub kl: f64,
    /// Tokens whose ratio left the clip interval.
    pub clipped_tokens: usize,
    pub tokens: usize,
}

/// Value and (optionally) gradient of `clipped_mean − β·kl` for one episode.
pub fn episode_terms(
    theta: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    episode: &TokenEpisode,
    advantage: f64,
    settings: &ObjectiveSettings,
    grad: Option<&mut Gradient>,
) -> EpisodeTerms {
    let n = episode.token_count();
    let mut terms = EpisodeTerms {
        clipped_mean: 0.0,
        kl: 0.0,
        clipped_tokens: 0,
        tokens: n,
    };
    if n == 0 {
        return terms;
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = grad;
    for step in &episode.steps {
        let lp_theta = theta.sequence_logprobs(&step.features, &step.tokens);
        let lp_old = old.token_path_logprobs(&step.features, &step.tokens);
        let lp_ref = reference.token_path_logprobs(&step.features, &step.tokens);
        let mut prev = END;
        for (k, &y) in step.tokens.iter().enumerate() {
            let lp = lp_theta[k][y as usize];
            let w = (lp - lp_old[k]).exp();
            let unclipped = w * advantage;
            let clipped = clip(w, settings.eps_low, settings.eps_high) * advantage;
            terms.clipped_mean += unclipped.min(clipped);
            let ratio_active = unclipped <= clipped;
            if !ratio_active {
                terms.clipped_tokens += 1;
            }
            let log_r = lp_ref[k] - lp;
            terms.kl += kl_estimate(log_r);
            if let Some(g) = grad.as_deref_mut() {
                // d/dθ of w·A is w·A·∇log p; of r − ln r − 1 it is (1 − r)·∇log p.
                let surrogate = if ratio_active { unclipped } else { 0.0 };
                let kl_coef = -log_r.exp_m1();
                let coef = inv_n * (surrogate - settings.kl_weight * kl_coef);
                g.accumulate_token(theta, &step.features, prev, k, &lp_theta[k], y, coef);
            }
            prev = y;
        }
    }
    terms.clipped_mean *= inv_n;
    terms.kl *= inv_n;
    terms
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// `(1/n) Σ_j clipped_mean_j − β · (1/n) Σ_j kl_j` over included episodes.
    pub objective: f64,
    /// Mean per-episode KL estimate.
    pub kl: f64,
    /// Episodes that contributed (those with at least one token).
    pub episodes: usize,
    pub clipped_fraction: f64,
}

/// The group surrogate objective and, when `want_grad`, its gradient.
///
/// Episodes without generated tokens are skipped with a warning.
pub fn surrogate_objective(
    episodes: &[&TokenEpisode],
    advantages: &[f64],
    theta: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    settings: &ObjectiveSettings,
    want_grad: bool,
) -> Result<(ObjectiveValue, Option<Gradient>), TrainerError> {
    let per_episode = |i: usize| -> Result<(EpisodeTerms, Option<Gradient>), TrainerError> {
        let ep = episodes[i];
        ep.check_vocab(theta.vocab.len())?;
        let mut g = want_grad.then(|| Gradient::zeros_like(theta));
        let t = episode_terms(
            theta,
            old,
            reference,
            ep,
            advantages[i],
            settings,
            g.as_mut(),
        );
        Ok((t, g))
    };
    let parts: Vec<_> = (0..episodes.len())
        .map(per_episode)
        .collect::<Result<_, _>>()?;
    Ok(reduce(parts, settings, theta, want_grad))
}

/// Same as [`surrogate_objective`] but evaluates episodes with `exec`.
pub(crate) fn surrogate_objective_with(
    exec: crate::exec::Execution,
    episodes: &[&TokenEpisode],
    advantages: &[f64],
    theta: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    settings: &ObjectiveSettings,
) -> Result<(ObjectiveValue, Gradient), TrainerError> {
    for ep in episodes {
        ep.check_vocab(theta.vocab.len())?;
    }
    let parts = exec.map(episodes.len(), |i| {
        let mut g = Gradient::zeros_like(theta);
        let t = episode_terms(
            theta,
            old,
            reference,
            episodes[i],
            advantages[i],
            settings,
            Some(&mut g),
        );
        (t, Some(g))
    });
    let (value, grad) = reduce(parts, settings, theta, true);
    Ok((value, grad.expect("gradient requested")))
}

fn reduce(
    parts: Vec<(EpisodeTerms, Option<Gradient>)>,
    settings: &ObjectiveSettings,
    theta: &PolicyParams,
    want_grad: bool,
) -> (ObjectiveValue, Option<Gradient>) {
    let included: Vec<_> = parts.into_iter().filter(|(t, _)| t.tokens > 0).collect();
    let n = included.len();
    let mut grad = want_grad.then(|| Gradient::zeros_like(theta));
    if n == 0 {
        log::warn!("no episode in the group generated any tokens; objective is zero");
        let value = ObjectiveValue {
            objective: 0.0,
            kl: 0.0,
            episodes: 0,
            clipped_fraction: 0.0,
        };
        return (value, grad);
    }
    let inv = 1.0 / n as f64;
    let (mut clip_sum, mut kl_sum) = (0.0, 0.0);
    let (mut clipped, mut tokens) = (0usize, 0usize);
    for (t, g) in &included {
        clip_sum += t.clipped_mean;
        kl_sum += t.kl;
        clipped += t.clipped_tokens;
        tokens += t.tokens;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add_scaled(g, inv);
        }
    }
    let value = ObjectiveValue {
        objective: inv * clip_sum - settings.kl_weight * inv * kl_sum,
        kl: inv * kl_sum,
        episodes: n,
        clipped_fraction: clipped as f64 / tokens as f64,
    };
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Vocabulary;
    use crate::rng::Rng;
    use rand::SeedableRng;

    fn tiny(seed: u64) -> PolicyParams {
        let spec = FeatureSpec {
            hash_dim: 4,
            buckets: 2,
            max_tokens: 4,
            ngram_min: 1,
            ngram_max: 2,
            prompt_scale: 1.0,
            token_scale: 1.0,
        };
        PolicyParams::random(
            Vocabulary::new(["a", "b"]).unwrap(),
            spec,
            0.5,
            &mut Rng::seed_from_u64(seed),
        )
    }

    #[test]
    fn clip_examples() {
        assert!((clipped_token_objective(1.5, 1.0, 0.2, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_token_objective(0.5, -1.0, 0.2, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_token_objective(1.0, -3.5, 0.1, 0.4), -3.5);
    }

    #[test]
    fn kl_estimate_examples() {
        assert!((kl_estimate(2f64.ln()) - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((kl_estimate(2f64.ln()) - 0.3069).abs() < 1e-4);
        assert_eq!(kl_estimate(0.0), 0.0);
    }

    #[test]
    fn identical_params_give_unit_ratios_and_zero_kl() {
        let p = tiny(1);
        let ep = TokenEpisode::new(&p.spec, [("ab", vec![1, 2, 0]), ("ba", vec![2, 0])]);
        for row in importance_ratios(&p, &p, &ep).unwrap() {
            assert!(row.iter().all(|&w| w == 1.0));
        }
        assert_eq!(kl_penalty(&p, &p, &ep).unwrap(), 0.0);
    }

    #[test]
    fn out_of_vocab_token_is_rejected() {
        let p = tiny(1);
        let ep = TokenEpisode::new(&p.spec, [("ab", vec![7])]);
        assert!(matches!(
            importance_ratios(&p, &p, &ep),
            Err(TrainerError::TokenOutOfVocab { token: 7, .. })
        ));
    }

    #[test]
    fn ratio_one_collapse() {
        let p = tiny(2);
        let a = TokenEpisode::new(&p.spec, [("ab", vec![1, 0])]);
        let b = TokenEpisode::new(&p.spec, [("b", vec![2, 2, 0]), ("a", vec![0])]);
        let s = ObjectiveSettings {
            eps_low: 0.2,
            eps_high: 0.2,
            kl_weight: 0.0,
        };
        let (v, _) = surrogate_objective(&[&a, &b], &[0.7, -0.2], &p, &p, &p, &s, false).unwrap();
        assert!((v.objective - 0.25).abs() < 1e-15);
        let (z, _) = surrogate_objective(&[&a, &b], &[0.0, 0.0], &p, &p, &p, &s, false).unwrap();
        assert_eq!(z.objective, 0.0);
    }

    #[test]
    fn empty_episodes_are_skipped() {
        let p = tiny(2);
        let a = TokenEpisode::new(&p.spec, [("ab", vec![1, 0])]);
        let e = TokenEpisode { steps: vec![] };
        let s = ObjectiveSettings {
            eps_low: 0.2,
            eps_high: 0.2,
            kl_weight: 0.0,
        };
        let (v, _) = surrogate_objective(&[&a, &e], &[0.5, 3.0], &p, &p, &p, &s, false).unwrap();
        assert_eq!(v.episodes, 1);
        assert!((v.objective - 0.5).abs() < 1e-15);
    }
}
