use serde::{Deserialize, Serialize};

use super::vocab::TokenId;

/// Feature map of the token model.
///
/// The feature vector for predicting token `k` concatenates
/// 1. hashed character n-gram presence of the prompt, averaged within each
///    line, summed over lines and scaled to L2 norm `prompt_scale`,
/// 2. a one-hot of the previous token (`END` stands in before the first token),
/// 3. a one-hot position bucket over `[0, max_tokens)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub hash_dim: usize,
    pub buckets: usize,
    pub max_tokens: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// L2 norm of the prompt block.
    pub prompt_scale: f64,
    /// Value of the active entry in each one-hot block.
    pub token_scale: f64,
}

/// Chosen so that the default trainer settings learn a fixed 4x4 lake in a
/// few hundred iterations without oscillating.
pub const PROMPT_SCALE: f64 = 25.0;
pub const TOKEN_SCALE: f64 = 2.0;

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            hash_dim: 256,
            buckets: 8,
            max_tokens: 200,
            ngram_min: 3,
            ngram_max: 5,
            prompt_scale: PROMPT_SCALE,
            token_scale: TOKEN_SCALE,
        }
    }
}

impl FeatureSpec {
    /// Stable identifier written into checkpoints.
    pub fn id(&self) -> String {
        format!(
            "linemean-ngram{}-{}:h{}:b{}:t{}:s{}/{}",
            self.ngram_min,
            self.ngram_max,
            self.hash_dim,
            self.buckets,
            self.max_tokens,
            self.prompt_scale,
            self.token_scale
        )
    }

    pub fn dim(&self, vocab_len: usize) -> usize {
        self.hash_dim + vocab_len + self.buckets
    }

    pub fn bucket(&self, position: usize) -> usize {
        (position * self.buckets / self.max_tokens.max(1)).min(self.buckets - 1)
    }

    /// Hashed n-gram block for a prompt.
    ///
    /// Each line contributes the mean of its n-gram one-hots (unit L1 mass),
    /// and the block is the sum over lines rescaled to `prompt_scale`. Long
    /// instruction lines thus spread their mass thinly while short lines such
    /// as grid rows and coordinates stay prominent. Hashing the whole prompt
    /// at once fills almost every bucket and makes different game states
    /// nearly indistinguishable.
    pub fn prompt_features(&self, prompt: &str) -> PromptFeatures {
        let mut dense = vec![0.0; self.hash_dim];
        let mut line_vec = vec![0.0; self.hash_dim];
        let mut buf = [0u8; 4];
        for line in prompt.split('\n') {
            let chars: Vec<char> = line.chars().collect();
            line_vec.iter_mut().for_each(|x| *x = 0.0);
            for n in self.ngram_min..=self.ngram_max {
                for window in chars.windows(n) {
                    let mut h = FNV_OFFSET ^ n as u64;
                    for c in window {
                        for &b in c.encode_utf8(&mut buf).as_bytes() {
                            h ^= b as u64;
                            h = h.wrapping_mul(FNV_PRIME);
                        }
                    }
                    line_vec[(h % self.hash_dim as u64) as usize] = 1.0;
                }
            }
            let mass: f64 = line_vec.iter().sum();
            if mass > 0.0 {
                dense
                    .iter_mut()
                    .zip(&line_vec)
                    .for_each(|(d, x)| *d += x / mass);
            }
        }
        let norm = l2(&dense);
        if norm > 0.0 {
            dense
                .iter_mut()
                .for_each(|x| *x *= self.prompt_scale / norm);
        }
        PromptFeatures { dense }
    }

    /// Column indices of the previous-token and position one-hots.
    pub fn columns(&self, vocab_len: usize, prev: TokenId, position: usize) -> (usize, usize) {
        (
            self.hash_dim + prev as usize,
            self.hash_dim + vocab_len + self.bucket(position),
        )
    }

    /// Dense feature vector, for tests and finite-difference checks.
    pub fn full_vector(
        &self,
        vocab_len: usize,
        prompt: &PromptFeatures,
        prev: TokenId,
        position: usize,
    ) -> Vec<f64> {
        let mut v = vec![0.0; self.dim(vocab_len)];
        v[..self.hash_dim].copy_from_slice(&prompt.dense);
        let (p, b) = self.columns(vocab_len, prev, position);
        v[p] = self.token_scale;
        v[b] = self.token_scale;
        v
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Debug, PartialEq)]
pub struct PromptFeatures {
    pub dense: Vec<f64>,
}
