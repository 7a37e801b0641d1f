use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use msgrpo::env::{EnvConfig, Variant};
use msgrpo::eval::{evaluate, EvalSuite};
use msgrpo::lap::{GenerationConfig, Lap, PromptTemplate};
use msgrpo::policy::{FeatureSpec, PolicyParams, DEFAULT_PRIOR_STRENGTH};
use msgrpo::trainer::{Trainer, TrainerConfig};
use msgrpo::Execution;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn trainer(variant: Variant, exec: Execution) -> (Trainer, PolicyParams) {
    let params = PolicyParams::format_prior(FeatureSpec::default(), DEFAULT_PRIOR_STRENGTH);
    let t = Trainer::new(
        TrainerConfig::default(),
        EnvConfig::new(variant),
        PromptTemplate::agent(),
        GenerationConfig::default(),
        &params,
    )
    .unwrap()
    .with_execution(exec);
    (t, params)
}

fn group_rollout(c: &mut Criterion) {
    let mut group = c.benchmark_group("rollout_group");
    for variant in [Variant::FrozenlakeSlippery, Variant::SnakeStandard] {
        for (name, exec) in MODES {
            let (t, params) = trainer(variant, exec);
            group.bench_function(BenchmarkId::new(name, variant.id()), |b| {
                b.iter(|| black_box(t.rollout_group(&params, 0).unwrap()))
            });
        }
    }
    group.finish();
}

fn training_iteration(c: &mut Criterion) {
    let mut group = c.benchmark_group("iteration");
    group.sample_size(20);
    for (name, exec) in MODES {
        let (t, params) = trainer(Variant::SnakeStandard, exec);
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut p = params.clone();
                black_box(t.iterate(&mut p, 0).unwrap())
            })
        });
    }
    group.finish();
}

fn eval_suite(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    let params = PolicyParams::format_prior(FeatureSpec::default(), DEFAULT_PRIOR_STRENGTH);
    let lap = Lap {
        params: &params,
        generation: GenerationConfig::default(),
        template: PromptTemplate::agent(),
    };
    let suite = EvalSuite::standard(Variant::SnakePoison, 50);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| black_box(evaluate(&lap, &suite, exec).unwrap().report))
        });
    }
    group.finish();
}

criterion_group!(benches, group_rollout, training_iteration, eval_suite);
criterion_main!(benches);
