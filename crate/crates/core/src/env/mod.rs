//! Frozen Lake and two-player Snake, with their text observation renderer.

mod frozen_lake;
mod render;
mod snake;

pub use frozen_lake::{
    frozenlake_generate, frozenlake_step, has_safe_path, sample_raw_tiles, slip_outcomes, Cell,
    FrozenLake, LakeMap, LakeState, MapParseError,
};
pub use render::{render_observation, RENDER_VERSION};
pub use snake::{
    opponent_legal_moves, opponent_policy, snake_step, SnakeGame, SnakeOutcome, SnakeState,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::rng::{self, tag};
use crate::tmsg::{Environment, OpponentPolicy, RandomLegalOpponent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub row: i32,
    pub col: i32,
}

impl GridPos {
    pub const fn new(row: i32, col: i32) -> Self {
        GridPos { row, col }
    }

    pub fn offset(self, d: crate::tmsg::Direction) -> GridPos {
        let (dr, dc) = d.delta();
        GridPos::new(self.row + dr, self.col + dc)
    }

    pub fn in_bounds(self, size: usize) -> bool {
        let n = size as i32;
        (0..n).contains(&self.row) && (0..n).contains(&self.col)
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    FrozenlakeNotSlippery,
    FrozenlakeSlippery,
    SnakeStandard,
    SnakePoison,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SnakeStandard,
        Variant::SnakePoison,
        Variant::FrozenlakeSlippery,
        Variant::FrozenlakeNotSlippery,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::FrozenlakeNotSlippery => "frozenlake-not-slippery",
            Variant::FrozenlakeSlippery => "frozenlake-slippery",
            Variant::SnakeStandard => "snake-standard",
            Variant::SnakePoison => "snake-poison",
        }
    }

    pub fn is_lake(self) -> bool {
        matches!(
            self,
            Variant::FrozenlakeNotSlippery | Variant::FrozenlakeSlippery
        )
    }

    pub fn is_snake(self) -> bool {
        !self.is_lake()
    }

    pub fn default_step_cap(self) -> usize {
        if self.is_lake() {
            20
        } else {
            100
        }
    }

    pub fn rewards(self) -> RewardConstants {
        RewardConstants {
            apple: if self == Variant::SnakePoison {
                -1.0
            } else {
                1.0
            },
            collision: -3.0,
            goal: 1.0,
            hole: 0.0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| {
                format!(
                    "unknown environment variant `{s}` (expected one of: {})",
                    Variant::ALL.map(Variant::id).join(", ")
                )
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConstants {
    pub apple: f64,
    pub collision: f64,
    pub goal: f64,
    pub hole: f64,
}

pub const DEFAULT_HOLE_PROB: f64 = 0.2;
pub const LAKE_SIZE: usize = 4;
pub const SNAKE_BOARD: usize = 10;
pub const SNAKE_APPLES: usize = 5;

/// Environment selection plus generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub variant: Variant,
    #[serde(default = "default_hole_prob")]
    pub hole_prob: f64,
    /// When set, every Frozen Lake episode uses this map instead of a generated one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_map: Option<LakeMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_cap: Option<usize>,
}

fn default_hole_prob() -> f64 {
    DEFAULT_HOLE_PROB
}

impl EnvConfig {
    pub fn new(variant: Variant) -> Self {
        EnvConfig {
            variant,
            hole_prob: DEFAULT_HOLE_PROB,
            fixed_map: None,
            step_cap: None,
        }
    }

    pub fn with_fixed_map(mut self, map: LakeMap) -> Self {
        self.fixed_map = Some(map);
        self
    }

    pub fn step_cap(&self) -> usize {
        self.step_cap.unwrap_or(self.variant.default_step_cap())
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.hole_prob) {
            return Err(format!(
                "hole_prob must be in [0, 1), got {}",
                self.hole_prob
            ));
        }
        if self.step_cap == Some(0) {
            return Err("step_cap must be positive".into());
        }
        if let Some(map) = &self.fixed_map {
            if !self.variant.is_lake() {
                return Err("fixed_map is only valid for Frozen Lake variants".into());
            }
            if !has_safe_path(map) {
                return Err("fixed_map has no safe path from start to goal".into());
            }
        }
        Ok(())
    }

    /// The Frozen Lake map an initial-state seed selects.
    pub fn lake_map(&self, initial_seed: u64) -> LakeMap {
        match &self.fixed_map {
            Some(map) => map.clone(),
            None => frozenlake_generate(initial_seed, LAKE_SIZE, self.hole_prob),
        }
    }

    /// Builds a freshly reset environment. `initial_seed` picks the initial
    /// state (map or apple layout); `dynamics_seed` drives its transitions.
    pub fn build(&self, initial_seed: u64, dynamics_seed: u64) -> Box<dyn Environment> {
        let dynamics = rng::stream(dynamics_seed, &[tag::DYNAMICS]);
        match self.variant {
            Variant::FrozenlakeNotSlippery | Variant::FrozenlakeSlippery => {
                Box::new(FrozenLake::new(
                    self.lake_map(initial_seed),
                    self.variant == Variant::FrozenlakeSlippery,
                    dynamics,
                ))
            }
            Variant::SnakeStandard | Variant::SnakePoison => Box::new(SnakeGame::new(
                SnakeState::initial(
                    SNAKE_BOARD,
                    SNAKE_APPLES,
                    self.variant == Variant::SnakePoison,
                    initial_seed,
                ),
                self.variant.rewards(),
                dynamics,
            )),
        }
    }

    /// Scripted policies for the non-learning players of this environment.
    pub fn opponents(&self) -> Vec<&'static dyn OpponentPolicy> {
        static RANDOM: RandomLegalOpponent = RandomLegalOpponent;
        if self.variant.is_snake() {
            vec![&RANDOM]
        } else {
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_constants_follow_variant() {
        assert_eq!(Variant::SnakeStandard.rewards().apple, 1.0);
        assert_eq!(Variant::SnakePoison.rewards().apple, -1.0);
        assert_eq!(Variant::SnakePoison.rewards().collision, -3.0);
        assert_eq!(Variant::FrozenlakeSlippery.rewards().goal, 1.0);
    }

    #[test]
    fn variant_ids_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.id().parse::<Variant>().unwrap(), v);
        }
        assert!("chess".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = EnvConfig::new(Variant::SnakeStandard);
        assert!(cfg.validate().is_ok());
        cfg.hole_prob = 1.0;
        assert!(cfg.validate().is_err());
        let cfg =
            EnvConfig::new(Variant::SnakeStandard).with_fixed_map(frozenlake_generate(0, 4, 0.2));
        assert!(cfg.validate().is_err());
    }
}
