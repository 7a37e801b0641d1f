use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::GridPos;
use crate::rng::{self, tag, Rng};
use crate::tmsg::{
    Action, Direction, Environment, GameState, JointAction, Observation, PlayerId, RewardVector,
    StatePayload, TerminalReason, TmsgError, Transition,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Ice,
    Hole,
    Start,
    Goal,
}

impl Cell {
    pub fn map_char(self) -> char {
        match self {
            Cell::Ice => 'F',
            Cell::Hole => 'H',
            Cell::Start => 'S',
            Cell::Goal => 'G',
        }
    }

    fn from_map_char(c: char) -> Option<Cell> {
        match c {
            'F' => Some(Cell::Ice),
            'H' => Some(Cell::Hole),
            'S' => Some(Cell::Start),
            'G' => Some(Cell::Goal),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MapParseError {
    #[error("map is empty")]
    Empty,
    #[error("row {row} has {len} cells, expected {expected}")]
    Ragged {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("map must be square, got {rows} rows of {cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid cell `{ch}` at row {row}, column {col}")]
    BadCell { ch: char, row: usize, col: usize },
    #[error("map needs exactly one S and one G")]
    Endpoints,
}

/// A square Frozen Lake grid. Serialized as rows of `S`, `F`, `H`, `G`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LakeMap {
    size: usize,
    cells: Vec<Cell>,
}

impl LakeMap {
    /// All-ice map with start at (0,0) and goal at the opposite corner.
    pub fn open(size: usize) -> Self {
        let mut cells = vec![Cell::Ice; size * size];
        cells[0] = Cell::Start;
        cells[size * size - 1] = Cell::Goal;
        LakeMap { size, cells }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cell(&self, pos: GridPos) -> Cell {
        self.cells[pos.row as usize * self.size + pos.col as usize]
    }

    pub fn set_cell(&mut self, pos: GridPos, cell: Cell) {
        self.cells[pos.row as usize * self.size + pos.col as usize] = cell;
    }

    pub fn start(&self) -> GridPos {
        self.find(Cell::Start)
    }

    pub fn goal(&self) -> GridPos {
        self.find(Cell::Goal)
    }

    fn find(&self, kind: Cell) -> GridPos {
        let idx = self.cells.iter().position(|&c| c == kind).unwrap_or(0);
        GridPos::new((idx / self.size) as i32, (idx % self.size) as i32)
    }

    pub fn positions(&self) -> impl Iterator<Item = GridPos> + '_ {
        (0..self.size * self.size)
            .map(move |i| GridPos::new((i / self.size) as i32, (i % self.size) as i32))
    }

    pub fn holes(&self) -> Vec<GridPos> {
        self.positions()
            .filter(|&p| self.cell(p) == Cell::Hole)
            .collect()
    }

    pub fn is_terminal_cell(&self, pos: GridPos) -> bool {
        matches!(self.cell(pos), Cell::Hole | Cell::Goal)
    }

    /// Position after moving; off-grid moves stay in place.
    pub fn moved(&self, pos: GridPos, d: Direction) -> GridPos {
        let next = pos.offset(d);
        if next.in_bounds(self.size) {
            next
        } else {
            pos
        }
    }

    pub fn index(&self, pos: GridPos) -> usize {
        pos.row as usize * self.size + pos.col as usize
    }

    /// One row per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.size * (self.size + 1));
        for row in self.cells.chunks(self.size) {
            out.extend(row.iter().map(|c| c.map_char()));
            out.push('\n');
        }
        out
    }

    /// Parses rows separated by newlines or `/`. Blank lines are ignored.
    pub fn from_text(text: &str) -> Result<Self, MapParseError> {
        let rows: Vec<&str> = text
            .split(['\n', '/'])
            .map(str::trim)
            .filter(|r| !r.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(MapParseError::Empty);
        }
        let width = rows[0].chars().count();
        let mut cells = Vec::with_capacity(width * rows.len());
        for (r, line) in rows.iter().enumerate() {
            let len = line.chars().count();
            if len != width {
                return Err(MapParseError::Ragged {
                    row: r,
                    len,
                    expected: width,
                });
            }
            for (c, ch) in line.chars().enumerate() {
                cells.push(Cell::from_map_char(ch).ok_or(MapParseError::BadCell {
                    ch,
                    row: r,
                    col: c,
                })?);
            }
        }
        if rows.len() != width {
            return Err(MapParseError::NotSquare {
                rows: rows.len(),
                cols: width,
            });
        }
        let count = |k| cells.iter().filter(|&&c| c == k).count();
        if count(Cell::Start) != 1 || count(Cell::Goal) != 1 {
            return Err(MapParseError::Endpoints);
        }
        Ok(LakeMap { size: width, cells })
    }
}

impl fmt::Display for LakeMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for LakeMap {
    type Err = MapParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LakeMap::from_text(s)
    }
}

impl Serialize for LakeMap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<String> = self
            .cells
            .chunks(self.size)
            .map(|r| r.iter().map(|c| c.map_char()).collect())
            .collect();
        s.serialize_str(&rows.join("/"))
    }
}

impl<'de> Deserialize<'de> for LakeMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        LakeMap::from_text(&text).map_err(serde::de::Error::custom)
    }
}

/// Breadth-first search over non-hole cells from start to goal.
pub fn has_safe_path(map: &LakeMap) -> bool {
    let n = map.size();
    let mut seen = vec![false; n * n];
    let start = map.start();
    let mut queue = VecDeque::from([start]);
    seen[map.index(start)] = true;
    while let Some(p) = queue.pop_front() {
        if map.cell(p) == Cell::Goal {
            return true;
        }
        for d in Direction::ALL {
            let q = p.offset(d);
            if q.in_bounds(n) && !seen[map.index(q)] && map.cell(q) != Cell::Hole {
                seen[map.index(q)] = true;
                queue.push_back(q);
            }
        }
    }
    false
}

/// One pre-rejection draw: a hole flag for every cell except start and goal,
/// in row-major order.
pub fn sample_raw_tiles(rng: &mut Rng, size: usize, hole_prob: f64) -> Vec<bool> {
    (0..size * size - 2)
        .map(|_| rng.random::<f64>() < hole_prob)
        .collect()
}

/// Generates a map with a guaranteed safe path. Start is (0,0), goal is the
/// opposite corner; rejected draws are replaced by the next draw from the
/// same stream.
pub fn frozenlake_generate(seed: u64, size: usize, hole_prob: f64) -> LakeMap {
    assert!(size >= 2, "lake must be at least 2x2");
    assert!(
        (0.0..1.0).contains(&hole_prob),
        "hole probability must be in [0, 1)"
    );
    let mut rng = rng::stream(seed, &[tag::INITIAL_STATE]);
    loop {
        let tiles = sample_raw_tiles(&mut rng, size, hole_prob);
        let mut map = LakeMap::open(size);
        for (i, hole) in tiles.into_iter().enumerate() {
            if hole {
                let idx = i + 1;
                map.cells[idx] = Cell::Hole;
            }
        }
        if has_safe_path(&map) {
            return map;
        }
    }
}

/// Frozen Lake state: the grid, the agent and the dynamics variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LakeState {
    pub map: LakeMap,
    pub agent: GridPos,
    pub slippery: bool,
}

impl LakeState {
    pub fn new(map: LakeMap, slippery: bool) -> Self {
        let agent = map.start();
        LakeState {
            map,
            agent,
            slippery,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.map.is_terminal_cell(self.agent)
    }
}

/// The three equally likely outcomes of a slippery move: intended direction,
/// then both perpendiculars.
pub fn slip_outcomes(map: &LakeMap, pos: GridPos, d: Direction) -> [(GridPos, f64); 3] {
    let [a, b] = d.perpendicular();
    let p = 1.0 / 3.0;
    [
        (map.moved(pos, d), p),
        (map.moved(pos, a), p),
        (map.moved(pos, b), p),
    ]
}

/// Applies one action. Returns the successor state, the reward and whether
/// the successor is terminal.
pub fn frozenlake_step(
    state: &LakeState,
    action: Action,
    rng: &mut Rng,
) -> Result<(LakeState, f64, bool), TmsgError> {
    if state.is_terminal() {
        return Err(TmsgError::TerminalState { step: 0 });
    }
    let mut next = state.clone();
    if let Action::Move(d) = action {
        let moved = if state.slippery {
            let outcomes = slip_outcomes(&state.map, state.agent, d);
            outcomes[rng.random_range(0..3)].0
        } else {
            state.map.moved(state.agent, d)
        };
        next.agent = moved;
    }
    let reward = match next.map.cell(next.agent) {
        Cell::Goal => 1.0,
        _ => 0.0,
    };
    let terminal = next.is_terminal();
    Ok((next, reward, terminal))
}

/// Single-player Frozen Lake environment.
pub struct FrozenLake {
    state: GameState,
    rng: Rng,
}

impl FrozenLake {
    pub fn new(map: LakeMap, slippery: bool, rng: Rng) -> Self {
        FrozenLake {
            state: GameState {
                payload: StatePayload::Lake(LakeState::new(map, slippery)),
                is_terminal: false,
                step_index: 0,
            },
            rng,
        }
    }

    pub fn lake(&self) -> &LakeState {
        match &self.state.payload {
            StatePayload::Lake(s) => s,
            StatePayload::Snake(_) => unreachable!("frozen lake holds a lake state"),
        }
    }
}

impl Environment for FrozenLake {
    fn num_players(&self) -> usize {
        1
    }

    fn state(&self) -> &GameState {
        &self.state
    }

    fn legal_actions(&self) -> Result<Vec<Vec<Action>>, TmsgError> {
        if self.state.is_terminal {
            return Err(TmsgError::TerminalState {
                step: self.state.step_index,
            });
        }
        Ok(vec![Direction::ALL.map(Action::Move).to_vec()])
    }

    fn step(&mut self, joint: &JointAction) -> Result<Transition, TmsgError> {
        if self.state.is_terminal {
            return Err(TmsgError::TerminalState {
                step: self.state.step_index,
            });
        }
        if joint.actions.len() != 1 {
            return Err(TmsgError::JointArity {
                expected: 1,
                got: joint.actions.len(),
            });
        }
        let StatePayload::Lake(current) = &self.state.payload else {
            unreachable!("frozen lake holds a lake state")
        };
        let (next, reward, terminal) = frozenlake_step(current, joint.actions[0], &mut self.rng)
            .map_err(|_| TmsgError::TerminalState {
                step: self.state.step_index,
            })?;
        let reason = terminal.then(|| match next.map.cell(next.agent) {
            Cell::Goal => TerminalReason::Goal,
            _ => TerminalReason::Hole,
        });
        self.state = GameState {
            payload: StatePayload::Lake(next),
            is_terminal: terminal,
            step_index: self.state.step_index + 1,
        };
        Ok(Transition {
            rewards: RewardVector {
                values: vec![reward],
            },
            terminal,
            reason,
        })
    }

    fn observe(&self, _player: PlayerId) -> Observation {
        super::render_observation(&self.state)
    }
}
