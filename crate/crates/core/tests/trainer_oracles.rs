//! Trainer quantities against finite differences, exact expectations and
//! from-scratch recomputation.

use msgrpo::env::{EnvConfig, LakeMap, Variant};
use msgrpo::lap::{GenerationConfig, PromptTemplate};
use msgrpo::policy::{grad_logprob, FeatureSpec, PolicyParams, TokenId, Vocabulary, END};
use msgrpo::rng::Rng;
use msgrpo::trainer::{
    aaw_probabilities, aaw_sample, clip, clipped_token_objective, compute_advantages,
    importance_ratios, kl_estimate, mean, pop_std, surrogate_objective, ObjectiveSettings,
    TokenEpisode, Trainer, TrainerConfig,
};
use rand::{Rng as _, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn micro_spec() -> FeatureSpec {
    FeatureSpec {
        hash_dim: 4,
        buckets: 2,
        max_tokens: 4,
        ngram_min: 1,
        ngram_max: 2,
        prompt_scale: 1.5,
        token_scale: 1.0,
    }
}

fn micro_vocab() -> Vocabulary {
    Vocabulary::new(["a", "b"]).unwrap()
}

fn perturbed(p: &PolicyParams, scale: f64, rng: &mut Rng) -> PolicyParams {
    let mut q = p.clone();
    for w in q.weights_mut() {
        *w += rng.random_range(-scale..=scale);
    }
    q
}

fn random_prompt(rng: &mut Rng) -> String {
    (0..rng.random_range(3..10))
        .map(|_| ['a', 'b', 'c', ' ', '\n'][rng.random_range(0..5)])
        .collect()
}

fn random_tokens(rng: &mut Rng, max: usize) -> Vec<TokenId> {
    (0..rng.random_range(1..=max))
        .map(|_| rng.random_range(0..3))
        .collect()
}

fn random_episode(spec: &FeatureSpec, rng: &mut Rng, steps: usize) -> TokenEpisode {
    let steps: Vec<(String, Vec<TokenId>)> = (0..steps)
        .map(|_| (random_prompt(rng), random_tokens(rng, 3)))
        .collect();
    TokenEpisode::new(spec, steps)
}

// ---- independent log-linear model ----

fn ref_logprobs(p: &PolicyParams, phi: &[f64]) -> Vec<f64> {
    let f = p.feature_dim();
    let logits: Vec<f64> = (0..p.vocab.len())
        .map(|v| {
            p.weights()[v * f..(v + 1) * f]
                .iter()
                .zip(phi)
                .map(|(w, x)| w * x)
                .sum()
        })
        .collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().map(|l| (l.exp() / z).ln()).collect()
}

fn ref_token_logprobs(p: &PolicyParams, ep: &TokenEpisode) -> Vec<Vec<f64>> {
    ep.steps
        .iter()
        .map(|s| {
            let mut prev = END;
            s.tokens
                .iter()
                .enumerate()
                .map(|(k, &y)| {
                    let phi = p.spec.full_vector(p.vocab.len(), &s.features, prev, k);
                    prev = y;
                    ref_logprobs(p, &phi)[y as usize]
                })
                .collect()
        })
        .collect()
}

fn ref_objective(
    episodes: &[&TokenEpisode],
    adv: &[f64],
    theta: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    s: &ObjectiveSettings,
) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (ep, &a) in episodes.iter().zip(adv) {
        let t = ref_token_logprobs(theta, ep);
        let o = ref_token_logprobs(old, ep);
        let r = ref_token_logprobs(reference, ep);
        let (mut surrogate, mut kl, mut count) = (0.0, 0.0, 0.0);
        for ((ts, os), rs) in t.iter().zip(&o).zip(&r) {
            for ((lt, lo), lr) in ts.iter().zip(os).zip(rs) {
                let w = (lt - lo).exp();
                let wc = w.clamp(1.0 - s.eps_low, 1.0 + s.eps_high);
                surrogate += (w * a).min(wc * a);
                let ratio = (lr - lt).exp();
                kl += ratio - (lr - lt) - 1.0;
                count += 1.0;
            }
        }
        if count > 0.0 {
            total += surrogate / count - s.kl_weight * kl / count;
            n += 1;
        }
    }
    total / n as f64
}

fn near_clip_boundary(
    episodes: &[&TokenEpisode],
    theta: &PolicyParams,
    old: &PolicyParams,
    s: &ObjectiveSettings,
) -> bool {
    episodes.iter().any(|ep| {
        importance_ratios(theta, old, ep)
            .unwrap()
            .iter()
            .flatten()
            .any(|&w| (w - (1.0 - s.eps_low)).abs() < 1e-3 || (w - (1.0 + s.eps_high)).abs() < 1e-3)
    })
}

#[test]
fn gradient_matches_finite_differences() {
    let start = std::time::Instant::now();
    let mut rng = Rng::seed_from_u64(2024);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 100 {
        let theta = PolicyParams::random(micro_vocab(), micro_spec(), 1.0, &mut rng);
        let old = perturbed(&theta, 0.3, &mut rng);
        let reference = perturbed(&theta, 0.5, &mut rng);
        let eps: Vec<TokenEpisode> = (0..2)
            .map(|_| random_episode(&theta.spec, &mut rng, 2))
            .collect();
        let refs: Vec<&TokenEpisode> = eps.iter().collect();
        let adv = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let s = ObjectiveSettings {
            eps_low: 0.2,
            eps_high: 0.28,
            kl_weight: rng.random_range(0.0..0.5),
        };
        if near_clip_boundary(&refs, &theta, &old, &s) {
            continue;
        }
        instances += 1;

        let (value, grad) =
            surrogate_objective(&refs, &adv, &theta, &old, &reference, &s, true).unwrap();
        let grad = grad.unwrap();
        let direct = ref_objective(&refs, &adv, &theta, &old, &reference, &s);
        assert!(
            (value.objective - direct).abs() < 1e-12,
            "{} vs {direct}",
            value.objective
        );

        let f = |p: &PolicyParams| {
            surrogate_objective(&refs, &adv, p, &old, &reference, &s, false)
                .unwrap()
                .0
                .objective
        };
        for i in 0..theta.weights().len() {
            let mut plus = theta.clone();
            plus.weights_mut()[i] += h;
            let mut minus = theta.clone();
            minus.weights_mut()[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let g = grad.values[i];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn ratios_agree_with_probability_division() {
    let mut rng = Rng::seed_from_u64(5);
    for _ in 0..50 {
        let theta = PolicyParams::random(micro_vocab(), micro_spec(), 1.0, &mut rng);
        let old = perturbed(&theta, 0.4, &mut rng);
        let ep = random_episode(&theta.spec, &mut rng, 3);
        let w = importance_ratios(&theta, &old, &ep).unwrap();
        let a = ref_token_logprobs(&theta, &ep);
        let b = ref_token_logprobs(&old, &ep);
        for ((ws, xs), ys) in w.iter().zip(&a).zip(&b) {
            for ((w, x), y) in ws.iter().zip(xs).zip(ys) {
                assert!((w - x.exp() / y.exp()).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn gradient_at_rollout_params_is_weighted_score() {
    let mut rng = Rng::seed_from_u64(8);
    for _ in 0..20 {
        let theta = PolicyParams::random(micro_vocab(), micro_spec(), 1.0, &mut rng);
        let prompts: Vec<Vec<(String, Vec<TokenId>)>> = (0..3)
            .map(|_| {
                (0..2)
                    .map(|_| (random_prompt(&mut rng), random_tokens(&mut rng, 3)))
                    .collect()
            })
            .collect();
        let eps: Vec<TokenEpisode> = prompts
            .iter()
            .map(|p| TokenEpisode::new(&theta.spec, p.iter().map(|(a, b)| (a.as_str(), b.clone()))))
            .collect();
        let refs: Vec<&TokenEpisode> = eps.iter().collect();
        let adv = [1.3, -0.4, -0.9];
        let s = ObjectiveSettings {
            eps_low: 0.2,
            eps_high: 0.2,
            kl_weight: 0.0,
        };
        let (_, g) = surrogate_objective(&refs, &adv, &theta, &theta, &theta, &s, true).unwrap();
        let g = g.unwrap();

        let mut expected = vec![0.0; theta.weights().len()];
        for (ep, a) in prompts.iter().zip(adv) {
            let len: usize = ep.iter().map(|(_, t)| t.len()).sum();
            for (prompt, tokens) in ep {
                let score = grad_logprob(&theta, prompt, tokens);
                for (e, x) in expected.iter_mut().zip(&score.values) {
                    *e += a / len as f64 / 3.0 * x;
                }
            }
        }
        for (x, y) in g.values.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn kl_estimator_is_unbiased_on_three_tokens() {
    let mut rng = Rng::seed_from_u64(3);
    for _ in 0..200 {
        let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nearby: Vec<f64> = logits
            .iter()
            .map(|l| l + rng.random_range(-0.3..0.3))
            .collect();
        let softmax = |l: &[f64]| {
            let z: f64 = l.iter().map(|x| x.exp()).sum();
            l.iter().map(|x| x.exp() / z).collect::<Vec<f64>>()
        };
        let p = softmax(&logits);
        let q = softmax(&nearby);
        let exact: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        let estimate: f64 = p
            .iter()
            .zip(&q)
            .map(|(a, b)| a * kl_estimate((b / a).ln()))
            .sum();
        assert!(
            (estimate - exact).abs() <= 0.05 * exact + 1e-15,
            "{estimate} vs {exact}"
        );
        for (a, b) in p.iter().zip(&q) {
            assert!(kl_estimate((b / a).ln()) >= 0.0);
        }
    }
}

#[test]
fn advantages_are_standardised() {
    let mut rng = Rng::seed_from_u64(10);
    for _ in 0..1_000 {
        let g = rng.random_range(2..=32);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let c: Vec<f64> = (0..g)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect();
        let a = compute_advantages(&c).unwrap();
        if a.degenerate {
            continue;
        }
        assert!(mean(&a.advantages).abs() < 1e-9);
        assert!((pop_std(&a.advantages) - 1.0).abs() < 1e-9);
    }
    for g in 2..=32 {
        let flat = compute_advantages(&vec![0.37; g]).unwrap();
        assert!(flat.degenerate);
        assert!(flat.advantages.iter().all(|&x| x == 0.0));
        let nearly: Vec<f64> = (0..g).map(|i| 5.0 + 1e-12 * i as f64).collect();
        let a = compute_advantages(&nearly).unwrap();
        assert!(a.degenerate && a.advantages.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn clipping_grid() {
    assert!((clipped_token_objective(1.5, 1.0, 0.2, 0.2) - 1.2).abs() < 1e-15);
    assert!((clipped_token_objective(0.5, -1.0, 0.2, 0.2) + 0.8).abs() < 1e-15);
    for (el, eh) in [(0.2, 0.2), (0.1, 0.3), (0.25, 0.05)] {
        for wi in 0..=60 {
            let w = wi as f64 * 0.05;
            for a in [-2.0, -1.0, -0.3, 0.0, 0.5, 1.0, 3.0] {
                let v = clipped_token_objective(w, a, el, eh);
                let expected = if (1.0 - el..=1.0 + eh).contains(&w) {
                    w * a
                } else if a >= 0.0 {
                    if w > 1.0 + eh {
                        (1.0 + eh) * a
                    } else {
                        w * a
                    }
                } else if w < 1.0 - el {
                    (1.0 - el) * a
                } else {
                    w * a
                };
                assert!((v - expected).abs() < 1e-12, "w {w} a {a} eps ({el}, {eh})");
                assert_eq!(v, (w * a).min(clip(w, el, eh) * a));
            }
        }
    }
}

#[test]
fn first_draw_frequencies_follow_softmax() {
    let adv = [2.0, -1.0, 1.0, 0.0, -0.5, 0.2];
    let p = aaw_probabilities(&adv, 1.0);
    let trials = 100_000;
    let mut counts = [0usize; 6];
    let mut rng = Rng::seed_from_u64(77);
    for _ in 0..trials {
        counts[aaw_sample(&adv, 1.0, 3, &mut rng).unwrap()[0]] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&o, &q)| {
            let e = q * trials as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(5.0).unwrap().cdf(stat);
    assert!(p_value > 0.01, "chi-square {stat}, p = {p_value}");

    let hot = aaw_probabilities(&adv, 1000.0);
    for q in hot {
        assert!((q - 1.0 / 6.0).abs() < 0.001);
    }
}

#[test]
fn full_selection_matches_no_selection() {
    let map = LakeMap::from_text("SFFF/FHFH/FFFH/HFFG").unwrap();
    let env = EnvConfig::new(Variant::FrozenlakeNotSlippery).with_fixed_map(map);
    let params = PolicyParams::format_prior(FeatureSpec::default(), 8.0);
    let run = |episode_temperature: f64| {
        let config = TrainerConfig {
            group_size: 6,
            sampled_size: 6,
            episode_temperature,
            iterations: 8,
            seed: 3,
            ..TrainerConfig::default()
        };
        Trainer::new(
            config,
            env.clone(),
            PromptTemplate::agent(),
            GenerationConfig::default(),
            &params,
        )
        .unwrap()
        .train(params.clone())
        .unwrap()
    };
    let on = run(1.0);
    let off = run(0.0);
    assert_eq!(on.params, off.params);
    assert_eq!(on.history, off.history);
}
