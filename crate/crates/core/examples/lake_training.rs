//! Trains the token model on a fixed deterministic Frozen Lake map and
//! reports evaluation reward before and after.
//!
//! cargo run --release --example lake_training -- [seed] [prior] [iterations]

use std::time::Instant;

use msgrpo::env::{EnvConfig, LakeMap, Variant};
use msgrpo::eval::{evaluate, EvalSuite};
use msgrpo::lap::{GenerationConfig, Lap, PromptTemplate};
use msgrpo::policy::{FeatureSpec, PolicyParams};
use msgrpo::trainer::{Trainer, TrainerConfig};
use msgrpo::Execution;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().unwrap());
    let prior: f64 = args
        .get(2)
        .map_or(msgrpo::policy::DEFAULT_PRIOR_STRENGTH, |s| {
            s.parse().unwrap()
        });
    let iterations: usize = args.get(3).map_or(300, |s| s.parse().unwrap());
    let prompt_scale: f64 = args
        .get(4)
        .map_or(msgrpo::policy::PROMPT_SCALE, |s| s.parse().unwrap());
    let token_scale: f64 = args
        .get(5)
        .map_or(msgrpo::policy::TOKEN_SCALE, |s| s.parse().unwrap());

    let map = LakeMap::from_text("SFFF/FHFH/FFFH/HFFG").unwrap();
    let env = EnvConfig::new(Variant::FrozenlakeNotSlippery).with_fixed_map(map);
    let suite = EvalSuite::with_env("fixed-lake", env.clone(), 50);
    let params = PolicyParams::format_prior(
        FeatureSpec {
            prompt_scale,
            token_scale,
            ..FeatureSpec::default()
        },
        prior,
    );
    let template = PromptTemplate::agent();
    let generation = GenerationConfig::default();
    let config = TrainerConfig {
        iterations,
        seed,
        ..TrainerConfig::default()
    };
    let trainer = Trainer::new(config, env, template.clone(), generation.clone(), &params).unwrap();

    let eval = |p: &PolicyParams| {
        let lap = Lap {
            params: p,
            generation: generation.clone(),
            template: template.clone(),
        };
        evaluate(&lap, &suite, Execution::default()).unwrap().report
    };
    let before = eval(&params);
    let start = Instant::now();
    let out = trainer
        .train_from(params, 0, |m, _| {
            if m.iteration % 25 == 0 || m.iteration + 10 >= iterations {
                println!(
                    "it {:>4} C {:>7.3} env {:>7.3} |A| {:.3} kl {:.4} g {:.4} tok/step {:.1} invalid {:.3}",
                    m.iteration, m.mean_composite, m.mean_env_reward, m.mean_abs_advantage, m.kl,
                    m.grad_norm, m.mean_tokens_per_step, m.invalid_rate
                );
            }
            Ok(())
        })
        .unwrap();
    let after = eval(&out.params);
    println!(
        "seed {seed}: before {:.3} (success {:.2}, invalid {:.3}) after {:.3} (success {:.2}, invalid {:.3}) in {:.1}s",
        before.mean_reward,
        before.success_rate,
        before.invalid_rate,
        after.mean_reward,
        after.success_rate,
        after.invalid_rate,
        start.elapsed().as_secs_f64()
    );
}
