//! Group-relative advantages and advantage-weighted episode selection.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::rng::Rng;

/// Groups whose population standard deviation falls below this are degenerate.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub composite_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Zero-variance group; all advantages are then exactly zero.
    pub degenerate: bool,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `A_j = (C_j − mean C) / pop_std C`, or all zeros for a degenerate group.
pub fn compute_advantages(composite: &[f64]) -> Result<AdvantageGroup, TrainerError> {
    if composite.len() < 2 {
        return Err(TrainerError::GroupTooSmall(composite.len()));
    }
    if let Some(i) = composite.iter().position(|c| !c.is_finite()) {
        return Err(TrainerError::NonFiniteReward(i));
    }
    let m = mean(composite);
    let s = pop_std(composite);
    let degenerate = s < DEGENERATE_STD;
    let advantages = if degenerate {
        vec![0.0; composite.len()]
    } else {
        composite.iter().map(|c| (c - m) / s).collect()
    };
    Ok(AdvantageGroup {
        composite_rewards: composite.to_vec(),
        advantages,
        degenerate,
    })
}

/// Advantages over the chosen subset only.
pub fn recompute_sampled_advantages(
    composite: &[f64],
    indices: &[usize],
) -> Result<AdvantageGroup, TrainerError> {
    if let Some(&i) = indices.iter().find(|&&i| i >= composite.len()) {
        return Err(TrainerError::IndexOutOfRange {
            index: i,
            len: composite.len(),
        });
    }
    let subset: Vec<f64> = indices.iter().map(|&i| composite[i]).collect();
    compute_advantages(&subset)
}

fn scaled_weights(advantages: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = advantages.iter().map(|a| a.abs() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scaled.iter().map(|s| (s - max).exp()).collect()
}

/// Softmax of `|A_j| / T` with max-subtraction.
pub fn aaw_probabilities(advantages: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "selection temperature must be positive");
    let w = scaled_weights(advantages, temperature);
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Draws `k` distinct indices one at a time, each with probability
/// proportional to its softmax weight among the indices not yet drawn.
/// Indices are returned in draw order.
pub fn aaw_sample(
    advantages: &[f64],
    temperature: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>, TrainerError> {
    if k > advantages.len() {
        return Err(TrainerError::SampleTooLarge {
            requested: k,
            available: advantages.len(),
        });
    }
    if !(temperature > 0.0) {
        return Err(TrainerError::Config(format!(
            "selection temperature must be positive, got {temperature}"
        )));
    }
    let mut weights = scaled_weights(advantages, temperature);
    let mut taken = vec![false; advantages.len()];
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        // Weights that underflowed to zero are drawn in index order once
        // everything else is gone.
        let mut pick = taken.iter().position(|t| !t).expect("k <= len");
        if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            for (i, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                pick = i;
                if u < w {
                    break;
                }
                u -= w;
            }
        }
        chosen.push(pick);
        taken[pick] = true;
        weights[pick] = 0.0;
    }
    Ok(chosen)
}
