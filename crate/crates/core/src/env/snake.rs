use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{GridPos, RewardConstants};
use crate::rng::{self, tag, Rng};
use crate::tmsg::{
    Action, Direction, Environment, GameState, JointAction, Observation, PlayerId, RewardVector,
    StatePayload, TerminalReason, TmsgError, Transition,
};

/// Two snakes and a fixed number of apples on a square board.
///
/// Bodies are listed head first. A dead opponent has an empty body.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnakeState {
    pub board_size: usize,
    pub learner: Vec<GridPos>,
    pub opponent: Vec<GridPos>,
    pub apples: BTreeSet<GridPos>,
    pub poison: bool,
    pub learner_alive: bool,
    pub apples_eaten: u32,
}

impl SnakeState {
    /// Learner of length 3 on row `n/5` facing right, opponent of length 3 on
    /// row `n-1-n/5` facing left, apples placed uniformly on empty cells.
    pub fn initial(board_size: usize, apples: usize, poison: bool, seed: u64) -> Self {
        assert!(board_size >= 6, "snake board must be at least 6x6");
        let n = board_size as i32;
        let lrow = n / 5;
        let orow = n - 1 - n / 5;
        let head = n / 2 - 2;
        let learner = (0..3).map(|i| GridPos::new(lrow, head - i)).collect();
        let opponent = (0..3)
            .map(|i| GridPos::new(orow, n - 1 - head + i))
            .collect();
        let mut state = SnakeState {
            board_size,
            learner,
            opponent,
            apples: BTreeSet::new(),
            poison,
            learner_alive: true,
            apples_eaten: 0,
        };
        let mut rng = rng::stream(seed, &[tag::INITIAL_STATE]);
        for _ in 0..apples {
            state.spawn_apple(&mut rng);
        }
        state
    }

    pub fn opponent_alive(&self) -> bool {
        !self.opponent.is_empty()
    }

    pub fn is_terminal(&self) -> bool {
        !self.learner_alive
    }

    /// Current heading inferred from head and neck; `Right` for a lone head.
    pub fn heading(body: &[GridPos]) -> Direction {
        match body {
            [head, neck, ..] => {
                let d = (head.row - neck.row, head.col - neck.col);
                Direction::ALL
                    .into_iter()
                    .find(|x| x.delta() == d)
                    .unwrap_or(Direction::Right)
            }
            _ => Direction::Right,
        }
    }

    pub fn occupied(&self, p: GridPos) -> bool {
        self.learner.contains(&p) || self.opponent.contains(&p) || self.apples.contains(&p)
    }

    /// Empty cells in row-major order.
    pub fn empty_cells(&self) -> Vec<GridPos> {
        let n = self.board_size as i32;
        (0..n)
            .flat_map(|r| (0..n).map(move |c| GridPos::new(r, c)))
            .filter(|&p| !self.occupied(p))
            .collect()
    }

    /// Places an apple on a uniformly chosen empty cell. Returns false when
    /// the board is full.
    pub fn spawn_apple(&mut self, rng: &mut Rng) -> bool {
        let empty = self.empty_cells();
        if empty.is_empty() {
            return false;
        }
        let p = empty[rng.random_range(0..empty.len())];
        self.apples.insert(p);
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnakeOutcome {
    pub state: SnakeState,
    /// `[learner, opponent]`.
    pub rewards: RewardVector,
    pub terminal: bool,
}

/// Moves the opponent may take without entering a wall or its own body.
/// The tail cell counts as free because the tail moves away this turn.
pub fn opponent_legal_moves(state: &SnakeState) -> Vec<Direction> {
    let body = &state.opponent;
    let Some(&head) = body.first() else {
        return Vec::new();
    };
    let blocked = &body[..body.len() - 1];
    Direction::ALL
        .into_iter()
        .filter(|&d| {
            let p = head.offset(d);
            p.in_bounds(state.board_size) && !blocked.contains(&p)
        })
        .collect()
}

/// The scripted opponent: uniform over non-fatal moves, `Up` when trapped.
pub fn opponent_policy(state: &SnakeState, rng: &mut Rng) -> Direction {
    let moves = opponent_legal_moves(state);
    if moves.is_empty() {
        Direction::Up
    } else {
        moves[rng.random_range(0..moves.len())]
    }
}

fn advance(body: &[GridPos], new_head: GridPos, grow: bool) -> Vec<GridPos> {
    let keep = if grow { body.len() } else { body.len() - 1 };
    std::iter::once(new_head)
        .chain(body[..keep].iter().copied())
        .collect()
}

/// One simultaneous move of both snakes.
///
/// `NoAction` keeps the current heading. Collision rules, checked against the
/// post-move bodies: leaving the board, entering any segment of either snake
/// (which covers head-on meetings and head swaps). A learner collision ends
/// the episode with the collision reward and no apple credit. A colliding
/// opponent is removed and play continues. Eaten apples respawn on uniformly
/// random empty cells, learner's first.
pub fn snake_step(
    state: &SnakeState,
    learner_action: Action,
    opponent_action: Action,
    rewards: &RewardConstants,
    rng: &mut Rng,
) -> Result<SnakeOutcome, TmsgError> {
    if state.is_terminal() {
        return Err(TmsgError::TerminalState { step: 0 });
    }
    let n = state.board_size;
    let l_dir = learner_action
        .direction()
        .unwrap_or_else(|| SnakeState::heading(&state.learner));
    let l_head = state.learner[0].offset(l_dir);
    let l_eats = state.apples.contains(&l_head);
    let new_learner = advance(&state.learner, l_head, l_eats);

    let (new_opponent, o_eats) = if state.opponent_alive() {
        let o_dir = opponent_action
            .direction()
            .unwrap_or_else(|| SnakeState::heading(&state.opponent));
        let o_head = state.opponent[0].offset(o_dir);
        let eats = state.apples.contains(&o_head);
        (advance(&state.opponent, o_head, eats), eats)
    } else {
        (Vec::new(), false)
    };

    let swapped = state.opponent_alive()
        && l_head == state.opponent[0]
        && new_opponent[0] == state.learner[0];
    let learner_dead = !l_head.in_bounds(n)
        || new_learner[1..].contains(&l_head)
        || new_opponent.contains(&l_head)
        || swapped;

    let mut reward = RewardVector::zeros(2);
    if learner_dead {
        reward.values[0] = rewards.collision;
        let mut next = state.clone();
        next.learner_alive = false;
        return Ok(SnakeOutcome {
            state: next,
            rewards: reward,
            terminal: true,
        });
    }

    let opponent_dead = state.opponent_alive() && {
        let o_head = new_opponent[0];
        !o_head.in_bounds(n) || new_opponent[1..].contains(&o_head) || new_learner.contains(&o_head)
    };

    let mut next = SnakeState {
        board_size: n,
        learner: new_learner,
        opponent: if opponent_dead {
            Vec::new()
        } else {
            new_opponent
        },
        apples: state.apples.clone(),
        poison: state.poison,
        learner_alive: true,
        apples_eaten: state.apples_eaten,
    };
    let mut eaten = 0;
    if l_eats {
        next.apples.remove(&l_head);
        next.apples_eaten += 1;
        reward.values[0] = rewards.apple;
        eaten += 1;
    }
    if opponent_dead {
        reward.values[1] = rewards.collision;
    } else if o_eats {
        next.apples.remove(&next.opponent[0]);
        reward.values[1] = rewards.apple;
        eaten += 1;
    }
    for _ in 0..eaten {
        next.spawn_apple(rng);
    }
    Ok(SnakeOutcome {
        state: next,
        rewards: reward,
        terminal: false,
    })
}

/// Two-player Snake environment; player 1 is the scripted opponent.
pub struct SnakeGame {
    state: GameState,
    rewards: RewardConstants,
    rng: Rng,
}

impl SnakeGame {
    pub fn new(initial: SnakeState, rewards: RewardConstants, rng: Rng) -> Self {
        SnakeGame {
            state: GameState {
                is_terminal: initial.is_terminal(),
                payload: StatePayload::Snake(initial),
                step_index: 0,
            },
            rewards,
            rng,
        }
    }

    pub fn snake(&self) -> &SnakeState {
        match &self.state.payload {
            StatePayload::Snake(s) => s,
            StatePayload::Lake(_) => unreachable!("snake game holds a snake state"),
        }
    }
}

impl Environment for SnakeGame {
    fn num_players(&self) -> usize {
        2
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
        let snake = self.snake();
        let learner = Direction::ALL.map(Action::Move).to_vec();
        let opponent = if snake.opponent_alive() {
            let moves = opponent_legal_moves(snake);
            if moves.is_empty() {
                vec![Action::Move(Direction::Up)]
            } else {
                moves.into_iter().map(Action::Move).collect()
            }
        } else {
            vec![Action::NoAction]
        };
        Ok(vec![learner, opponent])
    }

    fn step(&mut self, joint: &JointAction) -> Result<Transition, TmsgError> {
        let step = self.state.step_index;
        if self.state.is_terminal {
            return Err(TmsgError::TerminalState { step });
        }
        if joint.actions.len() != 2 {
            return Err(TmsgError::JointArity {
                expected: 2,
                got: joint.actions.len(),
            });
        }
        let StatePayload::Snake(current) = &self.state.payload else {
            unreachable!("snake game holds a snake state")
        };
        let outcome = snake_step(
            current,
            joint.actions[0],
            joint.actions[1],
            &self.rewards,
            &mut self.rng,
        )
        .map_err(|_| TmsgError::TerminalState { step })?;
        self.state = GameState {
            payload: StatePayload::Snake(outcome.state),
            is_terminal: outcome.terminal,
            step_index: step + 1,
        };
        Ok(Transition {
            rewards: outcome.rewards,
            terminal: outcome.terminal,
            reason: outcome.terminal.then_some(TerminalReason::Collision),
        })
    }

    fn observe(&self, _player: PlayerId) -> Observation {
        super::render_observation(&self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn consts(poison: bool) -> RewardConstants {
        RewardConstants {
            apple: if poison { -1.0 } else { 1.0 },
            collision: -3.0,
            goal: 1.0,
            hole: 0.0,
        }
    }

    fn body(cells: &[(i32, i32)]) -> Vec<GridPos> {
        cells.iter().map(|&(r, c)| GridPos::new(r, c)).collect()
    }

    fn eating_state(poison: bool) -> SnakeState {
        let mut apples = BTreeSet::new();
        for p in [(4, 5), (0, 0), (9, 9), (0, 9), (9, 0)] {
            apples.insert(GridPos::new(p.0, p.1));
        }
        SnakeState {
            board_size: 10,
            learner: body(&[(4, 4), (4, 3), (4, 2)]),
            opponent: body(&[(7, 6), (7, 7), (7, 8)]),
            apples,
            poison,
            learner_alive: true,
            apples_eaten: 0,
        }
    }

    #[test]
    fn eating_an_apple_grows_and_respawns() {
        let mut rng = Rng::seed_from_u64(5);
        let s = eating_state(false);
        let out = snake_step(
            &s,
            Action::Move(Direction::Right),
            Action::Move(Direction::Left),
            &consts(false),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.rewards.values[0], 1.0);
        assert_eq!(out.state.learner.len(), 4);
        assert_eq!(out.state.learner[0], GridPos::new(4, 5));
        assert_eq!(out.state.apples.len(), 5);
        assert!(!out.state.apples.contains(&GridPos::new(4, 5)));
        assert!(!out.terminal);
    }

    #[test]
    fn poison_apple_costs_one() {
        let mut rng = Rng::seed_from_u64(5);
        let s = eating_state(true);
        let out = snake_step(
            &s,
            Action::Move(Direction::Right),
            Action::Move(Direction::Left),
            &consts(true),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.rewards.values[0], -1.0);
    }

    #[test]
    fn wall_collision_is_terminal() {
        let mut rng = Rng::seed_from_u64(5);
        let mut s = eating_state(false);
        s.learner = body(&[(0, 3), (1, 3), (2, 3)]);
        let out = snake_step(
            &s,
            Action::Move(Direction::Up),
            Action::Move(Direction::Left),
            &consts(false),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.rewards.values[0], -3.0);
        assert!(out.terminal);
        assert!(snake_step(
            &out.state,
            Action::NoAction,
            Action::NoAction,
            &consts(false),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn head_on_and_swap_kill_the_learner() {
        let mut rng = Rng::seed_from_u64(5);
        let mut s = eating_state(false);
        s.apples.remove(&GridPos::new(4, 5));
        s.apples.insert(GridPos::new(5, 5));
        s.opponent = body(&[(4, 6), (4, 7), (4, 8)]);
        let head_on = snake_step(
            &s,
            Action::Move(Direction::Right),
            Action::Move(Direction::Left),
            &consts(false),
            &mut rng,
        )
        .unwrap();
        assert!(head_on.terminal);

        s.opponent = body(&[(4, 5), (4, 6), (4, 7)]);
        let swap = snake_step(
            &s,
            Action::Move(Direction::Right),
            Action::Move(Direction::Left),
            &consts(false),
            &mut rng,
        )
        .unwrap();
        assert!(swap.terminal);
    }

    #[test]
    fn no_action_keeps_heading() {
        let mut rng = Rng::seed_from_u64(5);
        let mut s = eating_state(false);
        s.apples.remove(&GridPos::new(4, 5));
        s.apples.insert(GridPos::new(5, 5));
        let out = snake_step(
            &s,
            Action::NoAction,
            Action::NoAction,
            &consts(false),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.state.learner[0], GridPos::new(4, 5));
        assert_eq!(out.state.opponent[0], GridPos::new(7, 5));
    }

    #[test]
    fn opponent_death_removes_it_and_play_continues() {
        let mut rng = Rng::seed_from_u64(5);
        let mut s = eating_state(false);
        s.opponent = body(&[(9, 4), (9, 5), (9, 6)]);
        let out = snake_step(
            &s,
            Action::Move(Direction::Up),
            Action::Move(Direction::Down),
            &consts(false),
            &mut rng,
        )
        .unwrap();
        assert!(!out.terminal);
        assert!(out.state.opponent.is_empty());
        assert_eq!(out.rewards.values[1], -3.0);
    }

    #[test]
    fn opponent_moves_filter_walls_and_body() {
        let mut s = eating_state(false);
        s.opponent = body(&[(0, 1), (0, 2), (0, 3)]);
        let moves = opponent_legal_moves(&s);
        assert_eq!(moves, vec![Direction::Down, Direction::Left]);
        let mut rng = Rng::seed_from_u64(9);
        for _ in 0..200 {
            assert!(moves.contains(&opponent_policy(&s, &mut rng)));
        }
    }

    #[test]
    fn trapped_opponent_falls_back_to_up() {
        let mut s = eating_state(false);
        // Head in the corner, boxed in by its own coiled body.
        s.opponent = body(&[(9, 9), (8, 9), (8, 8), (9, 8), (9, 7)]);
        assert!(opponent_legal_moves(&s).is_empty());
        let mut rng = Rng::seed_from_u64(1);
        assert_eq!(opponent_policy(&s, &mut rng), Direction::Up);
    }

    #[test]
    fn initial_layout() {
        let s = SnakeState::initial(10, 5, false, 42);
        assert_eq!(s.learner, body(&[(2, 3), (2, 2), (2, 1)]));
        assert_eq!(s.opponent, body(&[(7, 6), (7, 7), (7, 8)]));
        assert_eq!(s.apples.len(), 5);
        assert_eq!(SnakeState::heading(&s.learner), Direction::Right);
        assert_eq!(SnakeState::heading(&s.opponent), Direction::Left);
        assert_eq!(s, SnakeState::initial(10, 5, false, 42));
    }
}
