//! Observation and prompt snapshots. Set `UPDATE_GOLDEN=1` to rewrite them
//! after an intentional rendering change (and bump the render version).

use std::path::PathBuf;

use msgrpo::env::{EnvConfig, LakeMap, Variant, RENDER_VERSION};
use msgrpo::lap::{build_prompt, PromptTemplate};
use msgrpo::tmsg::PlayerId;

fn check(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} changed");
}

#[test]
fn render_version_is_pinned() {
    assert_eq!(RENDER_VERSION, "obs-v1");
}

#[test]
fn lake_observation() {
    let map = LakeMap::from_text("SFFF/FHFH/FFFH/HFFG").unwrap();
    for variant in [Variant::FrozenlakeNotSlippery, Variant::FrozenlakeSlippery] {
        let env = EnvConfig::new(variant)
            .with_fixed_map(map.clone())
            .build(0, 0);
        let obs = env.observe(PlayerId::LEARNER);
        check(&format!("{}.txt", variant.id()), &obs.text);
    }
}

#[test]
fn snake_observation() {
    for variant in [Variant::SnakeStandard, Variant::SnakePoison] {
        let env = EnvConfig::new(variant).build(3, 3);
        check(
            &format!("{}.txt", variant.id()),
            &env.observe(PlayerId::LEARNER).text,
        );
    }
}

#[test]
fn agent_prompt() {
    let map = LakeMap::from_text("SFFF/FHFH/FFFH/HFFG").unwrap();
    let env = EnvConfig::new(Variant::FrozenlakeNotSlippery)
        .with_fixed_map(map)
        .build(0, 0);
    let obs = env.observe(PlayerId::LEARNER);
    check(
        "agent-prompt-lake.txt",
        &build_prompt(&PromptTemplate::agent(), &obs),
    );
}

#[test]
fn standard_and_poison_differ_only_in_preamble() {
    let a = EnvConfig::new(Variant::SnakeStandard)
        .build(5, 5)
        .observe(PlayerId::LEARNER)
        .text;
    let b = EnvConfig::new(Variant::SnakePoison)
        .build(5, 5)
        .observe(PlayerId::LEARNER)
        .text;
    let diff: Vec<_> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
    assert_eq!(diff.len(), 1, "{diff:?}");
    assert_eq!(a.lines().count(), b.lines().count());
}
