//! Text observations: a static rules preamble, an entity coordinate list and
//! a character grid with legend.

use std::fmt::Write as _;

use super::{Cell, GridPos, LakeState, SnakeState};
use crate::tmsg::{GameState, Observation, StatePayload};

/// Bumped whenever any rendered byte changes.
pub const RENDER_VERSION: &str = "obs-v1";

const LAKE_RULES: &str = "You are playing Frozen Lake. Move the agent across the frozen lake to the goal without falling into a hole. Reaching the goal gives +1 reward and ends the game. Falling into a hole ends the game. Moving into a wall has no effect.";
const LAKE_NOT_SLIPPERY: &str =
    "The ice is not slippery: the agent always moves in the chosen direction.";
const LAKE_SLIPPERY: &str = "The ice is slippery: the agent moves in the chosen direction with probability 1/3 and in each perpendicular direction with probability 1/3.";
const LAKE_LEGEND: &str = "Legend: A agent, H hole, G goal, . ice";

const SNAKE_RULES: &str = "You are playing Snake. You control snake S. Another snake E moves randomly. Colliding with a wall, your own body or the other snake gives -3 reward and ends the game.";
const SNAKE_APPLES: &str =
    "Eating an apple gives +1 reward and makes your snake grow by one segment.";
const SNAKE_POISON: &str = "The apples are poisoned: eating an apple gives -1 reward and makes your snake grow by one segment.";
const SNAKE_LEGEND: &str =
    "Legend: S your head, s your body, E other head, e other body, * apple, . empty";

const COORDS: &str =
    "Coordinates are (row,col); row 0 is the top row and column 0 is the left column. Actions: up, down, left, right.";

fn coord_list(cells: &[GridPos]) -> String {
    if cells.is_empty() {
        return "none".to_string();
    }
    cells
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

fn render_lake(s: &LakeState) -> String {
    let n = s.map.size();
    let mut out = String::new();
    out.push_str(LAKE_RULES);
    out.push(' ');
    out.push_str(if s.slippery {
        LAKE_SLIPPERY
    } else {
        LAKE_NOT_SLIPPERY
    });
    out.push('\n');
    out.push_str(COORDS);
    out.push_str("\n\nEntities:\n");
    let _ = writeln!(out, "agent: {}", s.agent);
    let _ = writeln!(out, "goal: {}", s.map.goal());
    let _ = writeln!(out, "holes: {}", coord_list(&s.map.holes()));
    let _ = write!(out, "\nGrid ({n}x{n}):\n");
    for r in 0..n as i32 {
        for c in 0..n as i32 {
            let p = GridPos::new(r, c);
            let ch = if p == s.agent {
                'A'
            } else {
                match s.map.cell(p) {
                    Cell::Hole => 'H',
                    Cell::Goal => 'G',
                    Cell::Ice | Cell::Start => '.',
                }
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out.push('\n');
    out.push_str(LAKE_LEGEND);
    out.push('\n');
    out
}

fn render_snake(s: &SnakeState) -> String {
    let n = s.board_size;
    let mut out = String::new();
    out.push_str(SNAKE_RULES);
    out.push(' ');
    out.push_str(if s.poison { SNAKE_POISON } else { SNAKE_APPLES });
    out.push('\n');
    out.push_str(COORDS);
    out.push_str("\n\nEntities:\n");
    let _ = writeln!(out, "your head: {}", coord_list(&s.learner[..1]));
    let _ = writeln!(out, "your body: {}", coord_list(&s.learner[1..]));
    let (ohead, obody) = match s.opponent.split_first() {
        Some((h, rest)) => (vec![*h], rest.to_vec()),
        None => (Vec::new(), Vec::new()),
    };
    let _ = writeln!(out, "other head: {}", coord_list(&ohead));
    let _ = writeln!(out, "other body: {}", coord_list(&obody));
    let apples: Vec<GridPos> = s.apples.iter().copied().collect();
    let _ = writeln!(out, "apples: {}", coord_list(&apples));
    let _ = write!(out, "\nGrid ({n}x{n}):\n");
    for r in 0..n as i32 {
        for c in 0..n as i32 {
            let p = GridPos::new(r, c);
            let ch = if s.learner.first() == Some(&p) {
                'S'
            } else if s.learner.contains(&p) {
                's'
            } else if s.opponent.first() == Some(&p) {
                'E'
            } else if s.opponent.contains(&p) {
                'e'
            } else if s.apples.contains(&p) {
                '*'
            } else {
                '.'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out.push('\n');
    out.push_str(SNAKE_LEGEND);
    out.push('\n');
    out
}

/// Renders the learner's observation of any state, terminal ones included.
pub fn render_observation(state: &GameState) -> Observation {
    Observation::new(match &state.payload {
        StatePayload::Lake(s) => render_lake(s),
        StatePayload::Snake(s) => render_snake(s),
    })
}
