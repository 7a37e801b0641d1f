//! A log-linear autoregressive token model.
//!
//! `logits = W · φ(prompt, prefix)` followed by a log-softmax, where `φ` is
//! described by [`FeatureSpec`]. Log-probabilities and their gradients are
//! exact, which keeps every trainer quantity checkable against finite
//! differences.

mod features;
mod vocab;

pub use features::{FeatureSpec, PromptFeatures, PROMPT_SCALE, TOKEN_SCALE};
pub use vocab::{TokenId, VocabError, Vocabulary, END};

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::lap::GenerationConfig;
use crate::rng::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error("weight matrix has {got} entries, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite weight at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// Format-prior logit margin used for fresh policies. Weaker priors start
/// with enough malformed completions that the invalid-action penalty
/// dominates early groups.
pub const DEFAULT_PRIOR_STRENGTH: f64 = 8.0;

/// Weights of the token model, `|V|` rows of `F` features, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub vocab: Vocabulary,
    pub spec: FeatureSpec,
    weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(vocab: Vocabulary, spec: FeatureSpec) -> Self {
        let n = vocab.len() * spec.dim(vocab.len());
        PolicyParams {
            vocab,
            spec,
            weights: vec![0.0; n],
        }
    }

    pub fn from_weights(
        vocab: Vocabulary,
        spec: FeatureSpec,
        weights: Vec<f64>,
    ) -> Result<Self, PolicyError> {
        let expected = vocab.len() * spec.dim(vocab.len());
        if weights.len() != expected {
            return Err(PolicyError::Shape {
                expected,
                got: weights.len(),
            });
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(PolicyError::NonFinite(i));
        }
        Ok(PolicyParams {
            vocab,
            spec,
            weights,
        })
    }

    /// Gaussian-free uniform init in `[-scale, scale]`, for tests.
    pub fn random(vocab: Vocabulary, spec: FeatureSpec, scale: f64, rng: &mut Rng) -> Self {
        let mut p = PolicyParams::zeros(vocab, spec);
        p.weights
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-scale..=scale));
        p
    }

    /// Initial weights that already follow the response format
    /// `<think>…</think><action>dir</action>` with probability well below one,
    /// while carrying no preference between directions. Only the
    /// previous-token block is set. Requires the agent vocabulary.
    pub fn format_prior(spec: FeatureSpec, strength: f64) -> Self {
        let vocab = Vocabulary::agent();
        let mut p = PolicyParams::zeros(vocab.clone(), spec);
        let id = |w: &str| vocab.id(w).expect("agent vocabulary token");
        let think = id("<think>");
        let think_end = id("</think>");
        let action = id("<action>");
        let action_end = id("</action>");
        let dirs = ["up", "down", "left", "right"].map(id);
        let fillers: Vec<TokenId> = (0..vocab.len() as TokenId)
            .filter(|&t| t > dirs[3])
            .collect();

        p.set_transition(END, think, strength);
        for &prev in std::iter::once(&think).chain(fillers.iter()) {
            p.set_transition(prev, think_end, strength - 1.5);
            for &f in &fillers {
                p.set_transition(prev, f, strength - 3.0);
            }
        }
        p.set_transition(think_end, action, strength);
        for d in dirs {
            p.set_transition(action, d, strength);
            p.set_transition(d, action_end, strength);
        }
        p.set_transition(action_end, END, strength);
        p
    }

    fn set_transition(&mut self, prev: TokenId, next: TokenId, logit: f64) {
        let (col, _) = self.spec.columns(self.vocab.len(), prev, 0);
        let f = self.feature_dim();
        self.weights[next as usize * f + col] = logit / self.spec.token_scale;
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.dim(self.vocab.len())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, token: TokenId) -> &[f64] {
        let f = self.feature_dim();
        &self.weights[token as usize * f..(token as usize + 1) * f]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// θ ← θ + step · g
    pub fn ascend(&mut self, grad: &Gradient, step: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.values) {
            *w += step * g;
        }
    }

    pub fn prompt_features(&self, prompt: &str) -> PromptFeatures {
        self.spec.prompt_features(prompt)
    }

    /// Prompt contribution to every token's logit.
    pub fn prompt_logits(&self, feats: &PromptFeatures) -> Vec<f64> {
        let h = self.spec.hash_dim;
        (0..self.vocab.len() as TokenId)
            .map(|t| {
                self.row(t)[..h]
                    .iter()
                    .zip(&feats.dense)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect()
    }

    /// Untempered logits at `position` given the previous token.
    pub fn logits_at(&self, prompt_logits: &[f64], prev: TokenId, position: usize) -> Vec<f64> {
        let (pc, bc) = self.spec.columns(self.vocab.len(), prev, position);
        let s = self.spec.token_scale;
        (0..self.vocab.len())
            .map(|t| {
                let row = self.row(t as TokenId);
                prompt_logits[t] + s * (row[pc] + row[bc])
            })
            .collect()
    }

    /// Log-probability vectors for every position of `tokens`, each
    /// conditioned on the prompt and the preceding tokens.
    pub fn sequence_logprobs(&self, feats: &PromptFeatures, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        let base = self.prompt_logits(feats);
        let mut prev = END;
        tokens
            .iter()
            .enumerate()
            .map(|(k, &y)| {
                let lp = log_softmax(&self.logits_at(&base, prev, k));
                prev = y;
                lp
            })
            .collect()
    }

    /// Log-probabilities of the realised tokens.
    pub fn token_path_logprobs(&self, feats: &PromptFeatures, tokens: &[TokenId]) -> Vec<f64> {
        self.sequence_logprobs(feats, tokens)
            .iter()
            .zip(tokens)
            .map(|(lp, &y)| lp[y as usize])
            .collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(Arc::new(self.clone()))
    }
}

/// An immutable copy of the parameters, shared cheaply between rollout workers.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot(Arc<PolicyParams>);

impl Snapshot {
    pub fn snapshot(&self) -> Snapshot {
        self.clone()
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

impl std::ops::Deref for Snapshot {
    type Target = PolicyParams;

    fn deref(&self) -> &PolicyParams {
        &self.0
    }
}

pub fn snapshot(params: &PolicyParams) -> Snapshot {
    params.snapshot()
}

/// Same shape as the weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Gradient {
            values: vec![0.0; params.weights.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Adds `coef · (onehot(y) − p) ⊗ φ` where `φ` is the feature vector at
    /// one position and `p = exp(logprobs)`.
    pub fn accumulate_token(
        &mut self,
        params: &PolicyParams,
        feats: &PromptFeatures,
        prev: TokenId,
        position: usize,
        logprobs: &[f64],
        token: TokenId,
        coef: f64,
    ) {
        if coef == 0.0 {
            return;
        }
        let f = params.feature_dim();
        let h = params.spec.hash_dim;
        let (pc, bc) = params.spec.columns(params.vocab.len(), prev, position);
        for (v, lp) in logprobs.iter().enumerate() {
            let indicator = if v == token as usize { 1.0 } else { 0.0 };
            let c = coef * (indicator - lp.exp());
            if c == 0.0 {
                continue;
            }
            let row = &mut self.values[v * f..(v + 1) * f];
            for (g, x) in row[..h].iter_mut().zip(&feats.dense) {
                *g += c * x;
            }
            row[pc] += c * params.spec.token_scale;
            row[bc] += c * params.spec.token_scale;
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Log-probabilities over the vocabulary for the next token after `prefix`.
pub fn token_logprobs(params: &PolicyParams, prompt: &str, prefix: &[TokenId]) -> Vec<f64> {
    let feats = params.prompt_features(prompt);
    let base = params.prompt_logits(&feats);
    let prev = prefix.last().copied().unwrap_or(END);
    log_softmax(&params.logits_at(&base, prev, prefix.len()))
}

/// Samples a completion: temperature scaling, then top-k truncation and
/// renormalisation. Stops after sampling `END` (which is kept) or after
/// `max_tokens` tokens.
pub fn sample_completion(
    params: &PolicyParams,
    gen: &GenerationConfig,
    prompt: &str,
    rng: &mut Rng,
) -> Vec<TokenId> {
    let feats = params.prompt_features(prompt);
    sample_with_features(params, gen, &feats, rng)
}

pub fn sample_with_features(
    params: &PolicyParams,
    gen: &GenerationConfig,
    feats: &PromptFeatures,
    rng: &mut Rng,
) -> Vec<TokenId> {
    let base = params.prompt_logits(feats);
    let v = params.vocab.len();
    let k = gen.top_k.unwrap_or(v).clamp(1, v);
    let mut out = Vec::new();
    let mut prev = END;
    let mut order: Vec<usize> = (0..v).collect();
    while out.len() < gen.max_tokens {
        let logits = params.logits_at(&base, prev, out.len());
        let scaled: Vec<f64> = logits.iter().map(|l| l / gen.temperature).collect();
        order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
        let kept = &order[..k];
        let max = scaled[kept[0]];
        let weights: Vec<f64> = kept.iter().map(|&t| (scaled[t] - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = kept[k - 1];
        for (&t, w) in kept.iter().zip(&weights) {
            if u < *w {
                pick = t;
                break;
            }
            u -= w;
        }
        let tok = pick as TokenId;
        out.push(tok);
        if tok == END {
            break;
        }
        prev = tok;
    }
    out
}

/// Gradient of `Σ_k log p(y_k | prompt, y_<k)` with respect to the weights.
pub fn grad_logprob(params: &PolicyParams, prompt: &str, completion: &[TokenId]) -> Gradient {
    let feats = params.prompt_features(prompt);
    let mut g = Gradient::zeros_like(params);
    let lps = params.sequence_logprobs(&feats, completion);
    let mut prev = END;
    for (k, (&y, lp)) in completion.iter().zip(&lps).enumerate() {
        g.accumulate_token(params, &feats, prev, k, lp, y, 1.0);
        prev = y;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn micro() -> PolicyParams {
        let spec = FeatureSpec {
            hash_dim: 8,
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
            1.0,
            &mut Rng::seed_from_u64(3),
        )
    }

    #[test]
    fn zero_weights_are_uniform() {
        let p = PolicyParams::zeros(Vocabulary::agent(), FeatureSpec::default());
        let lp = token_logprobs(&p, "prompt", &[]);
        for x in lp {
            assert!((x + (24f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn logprobs_normalise() {
        let p = micro();
        for prefix in [&[][..], &[1], &[1, 2, 2]] {
            let lp = token_logprobs(&p, "ab ba", prefix);
            let total: f64 = lp.iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn global_shift_leaves_probabilities_unchanged() {
        let p = micro();
        let mut shifted = p.clone();
        // The bucket column is always on, so adding c to it in every row
        // adds c to every logit.
        let (_, bc) = p.spec.columns(p.vocab.len(), END, 0);
        let f = p.feature_dim();
        for t in 0..p.vocab.len() {
            shifted.weights_mut()[t * f + bc] += 2.5 / p.spec.token_scale;
        }
        let a = token_logprobs(&p, "ab", &[]);
        let b = token_logprobs(&shifted, "ab", &[]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn three_token_reference_softmax() {
        let spec = FeatureSpec {
            hash_dim: 1,
            buckets: 1,
            max_tokens: 4,
            ngram_min: 1,
            ngram_max: 1,
            prompt_scale: 1.0,
            token_scale: 1.0,
        };
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        // φ = [1 (prompt), prev one-hot (3), bucket (1)] with prev = END.
        // Rows give logits 0.5, -1.0 and 2.0.
        let w = vec![
            0.5, 0.0, 0.0, 0.0, 0.0, //
            -1.0, 0.0, 0.0, 0.0, 0.0, //
            1.0, 1.0, 0.0, 0.0, 0.0,
        ];
        let p = PolicyParams::from_weights(vocab, spec, w).unwrap();
        let lp = token_logprobs(&p, "x", &[]);
        // exp(0.5), exp(-1), exp(2): 1.6487212707, 0.3678794412, 7.3890560989
        let z = 1.648_721_270_700_128_1 + 0.367_879_441_171_442_3 + 7.389_056_098_930_650;
        let expected = [
            1.648_721_270_700_128_1 / z,
            0.367_879_441_171_442_3 / z,
            7.389_056_098_930_650 / z,
        ];
        for (x, e) in lp.iter().zip(expected) {
            assert!((x.exp() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_and_truncation() {
        let p = micro();
        let greedy = GenerationConfig {
            temperature: 1.0,
            top_k: Some(1),
            max_tokens: 4,
        };
        let a = sample_completion(&p, &greedy, "ab", &mut Rng::seed_from_u64(1));
        let b = sample_completion(&p, &greedy, "ab", &mut Rng::seed_from_u64(2));
        assert_eq!(a, b);

        let mut no_end = PolicyParams::zeros(Vocabulary::agent(), FeatureSpec::default());
        let (_, bc) = no_end.spec.columns(24, END, 0);
        for b in 0..8 {
            no_end.weights_mut()[bc + b] = -1e3 / no_end.spec.token_scale;
        }
        let cfg = GenerationConfig {
            temperature: 1.0,
            top_k: None,
            max_tokens: 3,
        };
        let out = sample_completion(&no_end, &cfg, "x", &mut Rng::seed_from_u64(4));
        assert_eq!(out.len(), 3);
        assert!(!out.contains(&END));
    }

    #[test]
    fn empty_completion_has_zero_gradient() {
        let p = micro();
        let g = grad_logprob(&p, "ab", &[]);
        assert!(g.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn uniform_single_token_gradient_closed_form() {
        let p = PolicyParams::zeros(Vocabulary::agent(), FeatureSpec::default());
        let y = 5;
        let g = grad_logprob(&p, "some prompt", &[y]);
        let feats = p.prompt_features("some prompt");
        let phi = p.spec.full_vector(24, &feats, END, 0);
        let f = p.feature_dim();
        for (j, x) in phi.iter().enumerate() {
            let row_y = g.values[y as usize * f + j];
            assert!((row_y - (1.0 - 1.0 / 24.0) * x).abs() < 1e-12);
            let row_other = g.values[f + j];
            assert!((row_other + x / 24.0).abs() < 1e-12);
        }
    }

    #[test]
    fn snapshot_is_isolated_and_idempotent() {
        let mut p = micro();
        let snap = p.snapshot();
        let before = token_logprobs(&snap, "ab", &[1]);
        let mut g = Gradient::zeros_like(&p);
        g.values.iter_mut().for_each(|x| *x = 1.0);
        p.ascend(&g, 0.3);
        assert_eq!(token_logprobs(&snap, "ab", &[1]), before);
        assert_ne!(token_logprobs(&p, "ab", &[1]), before);
        assert_eq!(snap.snapshot(), snap);
        assert_eq!(*snap.snapshot().params(), *snap.params());
    }

    #[test]
    fn format_prior_has_no_direction_preference() {
        let p = PolicyParams::format_prior(FeatureSpec::default(), 6.0);
        let v = &p.vocab;
        let action = v.id("<action>").unwrap();
        let lp = token_logprobs(&p, "obs", &[v.id("<think>").unwrap(), action]);
        let dirs: Vec<f64> = ["up", "down", "left", "right"]
            .iter()
            .map(|d| lp[v.id(d).unwrap() as usize])
            .collect();
        assert!(dirs.iter().all(|x| (x - dirs[0]).abs() < 1e-12));
        assert!(dirs[0].exp() * 4.0 > 0.9);
    }

    #[test]
    fn from_weights_validates() {
        let v = Vocabulary::new(["a"]).unwrap();
        let spec = FeatureSpec::default();
        assert!(matches!(
            PolicyParams::from_weights(v.clone(), spec.clone(), vec![0.0; 3]),
            Err(PolicyError::Shape { .. })
        ));
        let n = 2 * spec.dim(2);
        let mut w = vec![0.0; n];
        w[4] = f64::NAN;
        assert_eq!(
            PolicyParams::from_weights(v, spec, w),
            Err(PolicyError::NonFinite(4))
        );
    }
}
