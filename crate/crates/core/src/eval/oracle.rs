//! Exact Frozen Lake solutions and scripted reference policies.

use std::collections::HashMap;
use std::sync::RwLock;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{slip_outcomes, Cell, GridPos, LakeMap};
use crate::lap::ParsedAction;
use crate::rng::Rng;
use crate::tmsg::{AgentPolicy, Decision, Direction, StatePayload, StepContext};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
const TIE_TOLERANCE: f64 = 1e-9;
const MAX_SWEEPS: usize = 1_000_000;

/// Optimal success probabilities (no discounting) and a greedy policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub size: usize,
    /// Row-major; 1 on the goal, 0 on holes.
    pub values: Vec<f64>,
    /// Row-major; `None` on terminal cells.
    pub greedy_policy: Vec<Option<Direction>>,
    /// Max-norm Bellman residual after each sweep.
    pub residuals: Vec<f64>,
}

impl ValueTable {
    pub fn value(&self, pos: GridPos) -> f64 {
        self.values[pos.row as usize * self.size + pos.col as usize]
    }

    pub fn action(&self, pos: GridPos) -> Option<Direction> {
        self.greedy_policy[pos.row as usize * self.size + pos.col as usize]
    }

    /// Values as a grid of fixed-width numbers, one row per line.
    pub fn values_text(&self) -> String {
        self.values
            .chunks(self.size)
            .map(|row| {
                row.iter()
                    .map(|v| format!("{v:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }

    /// Greedy actions as arrows; terminal cells show their map character.
    pub fn arrows_text(&self, map: &LakeMap) -> String {
        let mut out = String::new();
        for pos in map.positions() {
            out.push(match self.action(pos) {
                Some(d) => d.arrow(),
                None => map.cell(pos).map_char(),
            });
            if pos.col as usize == self.size - 1 {
                out.push('\n');
            }
        }
        out
    }
}

/// `(successor, probability)` pairs for a move under either dynamics.
pub fn transitions(
    map: &LakeMap,
    pos: GridPos,
    d: Direction,
    slippery: bool,
) -> Vec<(GridPos, f64)> {
    if slippery {
        slip_outcomes(map, pos, d).to_vec()
    } else {
        vec![(map.moved(pos, d), 1.0)]
    }
}

fn q_value(map: &LakeMap, values: &[f64], pos: GridPos, d: Direction, slippery: bool) -> f64 {
    transitions(map, pos, d, slippery)
        .into_iter()
        .map(|(next, p)| {
            // Terminal values already hold the reward collected on arrival.
            p * values[map.index(next)]
        })
        .sum()
}

/// Solves the Bellman optimality equations by synchronous sweeps until the
/// max residual falls below `tol`.
///
/// Greedy actions are chosen among those within 1e-9 of the best Q-value.
/// Ties are broken first by the fewest expected steps to a terminal cell
/// (which rules out bumping into a wall when that costs nothing) and then in
/// the order up, down, left, right.
pub fn value_iteration(map: &LakeMap, slippery: bool, tol: f64) -> ValueTable {
    let n = map.size() * map.size();
    let positions: Vec<GridPos> = map.positions().collect();
    let mut values: Vec<f64> = positions
        .iter()
        .map(|&p| if map.cell(p) == Cell::Goal { 1.0 } else { 0.0 })
        .collect();
    let mut residuals = Vec::new();
    for _ in 0..MAX_SWEEPS {
        let next: Vec<f64> = positions
            .iter()
            .map(|&p| {
                if map.is_terminal_cell(p) {
                    values[map.index(p)]
                } else {
                    Direction::ALL
                        .iter()
                        .map(|&d| q_value(map, &values, p, d, slippery))
                        .fold(0.0, f64::max)
                }
            })
            .collect();
        let residual = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        residuals.push(residual);
        if residual < tol {
            break;
        }
    }

    let optimal: Vec<Vec<Direction>> = positions
        .iter()
        .map(|&p| {
            if map.is_terminal_cell(p) {
                return Vec::new();
            }
            let qs = Direction::ALL.map(|d| q_value(map, &values, p, d, slippery));
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Direction::ALL
                .into_iter()
                .zip(qs)
                .filter(|&(_, q)| q >= best - TIE_TOLERANCE)
                .map(|(d, _)| d)
                .collect()
        })
        .collect();
    let steps = expected_steps(map, &positions, &optimal, slippery);
    let greedy_policy = positions
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let cost = |d: Direction| -> f64 {
                transitions(map, p, d, slippery)
                    .into_iter()
                    .map(|(s, pr)| pr * steps[map.index(s)])
                    .sum()
            };
            let best = optimal[i]
                .iter()
                .map(|&d| cost(d))
                .fold(f64::INFINITY, f64::min);
            optimal[i]
                .iter()
                .copied()
                .find(|&d| cost(d) <= best + TIE_TOLERANCE * best.max(1.0))
        })
        .collect();
    debug_assert_eq!(values.len(), n);
    ValueTable {
        size: map.size(),
        values,
        greedy_policy,
        residuals,
    }
}

/// Minimum expected number of steps to reach a terminal cell using only the
/// given actions; large for cells that cannot terminate.
fn expected_steps(
    map: &LakeMap,
    positions: &[GridPos],
    allowed: &[Vec<Direction>],
    slippery: bool,
) -> Vec<f64> {
    const CAP: f64 = 1e6;
    let mut steps = vec![0.0; positions.len()];
    for _ in 0..100_000 {
        let next: Vec<f64> = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if map.is_terminal_cell(p) {
                    return 0.0;
                }
                let best = allowed[i]
                    .iter()
                    .map(|&d| {
                        transitions(map, p, d, slippery)
                            .into_iter()
                            .map(|(s, pr)| pr * steps[map.index(s)])
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min);
                (1.0 + best).min(CAP)
            })
            .collect();
        let change = next
            .iter()
            .zip(&steps)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        steps = next;
        if change < 1e-9 {
            break;
        }
    }
    steps
}

fn scripted_decision(direction: Direction) -> Decision {
    let text = format!("<think></think><action>{}</action>", direction.word());
    Decision {
        prompt: String::new(),
        completion_tokens: Vec::new(),
        completion_text: text,
        token_count: 0,
        parsed: ParsedAction {
            value: Some(direction),
            raw_span: direction.word().to_string(),
        },
        error: None,
    }
}

/// Follows the value-iteration greedy policy of whatever lake it is shown.
/// Tables are cached per map. On non-lake states it plays `Up`.
#[derive(Debug, Default)]
pub struct GreedyOraclePolicy {
    tolerance: f64,
    cache: RwLock<HashMap<(LakeMap, bool), Vec<Option<Direction>>>>,
}

impl GreedyOraclePolicy {
    pub fn new() -> Self {
        GreedyOraclePolicy {
            tolerance: DEFAULT_TOLERANCE,
            cache: RwLock::default(),
        }
    }
}

impl AgentPolicy for GreedyOraclePolicy {
    fn act(&self, ctx: &StepContext<'_>, _rng: &mut Rng) -> Decision {
        let StatePayload::Lake(lake) = &ctx.state.payload else {
            return scripted_decision(Direction::Up);
        };
        let key = (lake.map.clone(), lake.slippery);
        let idx = lake.map.index(lake.agent);
        if let Some(p) = self.cache.read().expect("cache lock").get(&key) {
            return scripted_decision(p[idx].unwrap_or(Direction::Up));
        }
        let table = value_iteration(&lake.map, lake.slippery, self.tolerance);
        let action = table.greedy_policy[idx].unwrap_or(Direction::Up);
        self.cache
            .write()
            .expect("cache lock")
            .insert(key, table.greedy_policy);
        scripted_decision(action)
    }
}

/// Picks one of the four directions uniformly at random every step.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomDirectionPolicy;

impl AgentPolicy for RandomDirectionPolicy {
    fn act(&self, _ctx: &StepContext<'_>, rng: &mut Rng) -> Decision {
        scripted_decision(Direction::ALL[rng.random_range(0..4)])
    }
}
