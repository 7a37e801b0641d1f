//! Token sampling statistics and log-probability consistency.

use msgrpo::lap::{act, parse_action, GenerationConfig, PromptTemplate};
use msgrpo::policy::{
    sample_completion, token_logprobs, FeatureSpec, PolicyParams, TokenId, Vocabulary, END,
};
use msgrpo::rng::Rng;
use msgrpo::tmsg::{Direction, Observation};
use rand::{Rng as _, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn category(d: Option<Direction>) -> usize {
    match d {
        None => 0,
        Some(d) => 1 + Direction::ALL.iter().position(|&x| x == d).unwrap(),
    }
}

/// Two-sample chi-square homogeneity p-value, skipping empty categories.
fn homogeneity_p(a: &[u64], b: &[u64]) -> f64 {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut dof = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let total = (x + y) as f64;
        if total == 0.0 {
            continue;
        }
        let ea = total * na / (na + nb);
        let eb = total * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
        dof += 1.0;
    }
    1.0 - ChiSquared::new(dof - 1.0).unwrap().cdf(stat)
}

#[test]
fn zero_policy_parses_like_uniform_tokens() {
    let vocab = Vocabulary::agent();
    let params = PolicyParams::zeros(vocab.clone(), FeatureSpec::default());
    let gen = GenerationConfig::default();
    let obs = Observation::new("agent: (0,0)");
    let template = PromptTemplate::agent();
    let n = 100_000;

    let mut model = [0u64; 5];
    let mut rng = Rng::seed_from_u64(1);
    for _ in 0..n {
        let (_, _, _, parsed) = act(&params, &gen, &template, &obs, &mut rng);
        model[category(parsed.value)] += 1;
    }

    // Independent simulation: i.i.d. uniform tokens until END or the cap.
    let mut oracle = [0u64; 5];
    let mut rng = Rng::seed_from_u64(2);
    for _ in 0..n {
        let mut ids = Vec::new();
        while ids.len() < gen.max_tokens {
            let t = rng.random_range(0..vocab.len()) as TokenId;
            ids.push(t);
            if t == END {
                break;
            }
        }
        oracle[category(parse_action(&vocab.decode(&ids)).value)] += 1;
    }
    let p = homogeneity_p(&model, &oracle);
    assert!(p > 0.01, "model {model:?} oracle {oracle:?} p = {p}");
}

fn softmax_t(lp: &[f64], t: f64, k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..lp.len()).collect();
    order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]));
    let kept = &order[..k];
    let z: f64 = kept.iter().map(|&i| (lp[i] / t).exp()).sum();
    (0..lp.len())
        .map(|i| {
            if kept.contains(&i) {
                (lp[i] / t).exp() / z
            } else {
                0.0
            }
        })
        .collect()
}

#[test]
fn first_token_follows_tempered_truncated_softmax() {
    let vocab = Vocabulary::new(["a", "b", "c", "d", "e"]).unwrap();
    let mut rng = Rng::seed_from_u64(9);
    let params = PolicyParams::random(vocab, FeatureSpec::default(), 0.2, &mut rng);
    let prompt = "hello there";
    let lp = token_logprobs(&params, prompt, &[]);
    for (temperature, top_k) in [(1.0, None), (0.5, None), (1.7, Some(3)), (1.0, Some(1))] {
        let gen = GenerationConfig {
            temperature,
            top_k,
            max_tokens: 1,
        };
        let expected = softmax_t(&lp, temperature, top_k.unwrap_or(6));
        let n = 60_000;
        let mut counts = [0u64; 6];
        for _ in 0..n {
            counts[sample_completion(&params, &gen, prompt, &mut rng)[0] as usize] += 1;
        }
        let mut stat = 0.0;
        let mut cells = 0.0;
        for (o, e) in counts.iter().zip(&expected) {
            if *e == 0.0 {
                assert_eq!(*o, 0, "truncated token was sampled");
                continue;
            }
            let e = e * n as f64;
            stat += (*o as f64 - e).powi(2) / e;
            cells += 1.0;
        }
        if cells > 1.0 {
            let p = 1.0 - ChiSquared::new(cells - 1.0).unwrap().cdf(stat);
            assert!(p > 0.01, "T {temperature} k {top_k:?}: p = {p}");
        }
    }
}

#[test]
fn path_logprob_is_sum_of_step_logprobs() {
    let mut rng = Rng::seed_from_u64(4);
    let params = PolicyParams::random(Vocabulary::agent(), FeatureSpec::default(), 0.1, &mut rng);
    let gen = GenerationConfig {
        max_tokens: 12,
        ..GenerationConfig::default()
    };
    for i in 0..50 {
        let prompt = format!("state {i}\nrow {}", i * 7);
        let tokens = sample_completion(&params, &gen, &prompt, &mut rng);
        assert!(!tokens.is_empty() && tokens.len() <= 12);
        let feats = params.prompt_features(&prompt);
        let path = params.token_path_logprobs(&feats, &tokens);
        for (k, &y) in tokens.iter().enumerate() {
            let step = token_logprobs(&params, &prompt, &tokens[..k]);
            assert!((step[y as usize] - path[k]).abs() < 1e-12);
            let total: f64 = step.iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
