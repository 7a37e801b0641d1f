//! Text-mediated stochastic games: the environment contract and the
//! agent-environment interaction loop.
//!
//! A game has `p` players acting simultaneously. Each player observes the
//! state only through text. The learner is always player 0; other players are
//! scripted and treated as part of the environment.

use serde::{Deserialize, Serialize};

use crate::env::{LakeState, SnakeState};
use crate::lap::ParsedAction;
use crate::reward::{self, FormatPenalty};
use crate::rng::{self, Rng};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TmsgError {
    #[error("transition requested on a terminal state (step {step})")]
    TerminalState { step: u64 },
    #[error("joint action has {got} entries, game has {expected} players")]
    JointArity { expected: usize, got: usize },
    #[error("player {player} chose {action:?}, which is not legal in this state")]
    IllegalAction { player: usize, action: Action },
    #[error("{got} opponent policies supplied for {expected} scripted players")]
    OpponentCount { expected: usize, got: usize },
    #[error("step cap must be positive")]
    ZeroStepCap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    /// Canonical order; also the tie-breaking order of greedy policies.
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    /// `(d_row, d_col)` with row 0 at the top.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }

    pub fn perpendicular(self) -> [Direction; 2] {
        match self {
            Direction::Up | Direction::Down => [Direction::Left, Direction::Right],
            Direction::Left | Direction::Right => [Direction::Up, Direction::Down],
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn from_word(word: &str) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.word() == word)
    }

    pub fn arrow(self) -> char {
        match self {
            Direction::Up => '^',
            Direction::Down => 'v',
            Direction::Left => '<',
            Direction::Right => '>',
        }
    }
}

/// A single player's action. `NoAction` is the recovery action applied when
/// a completion does not parse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Move(Direction),
    NoAction,
}

impl Action {
    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::Move(d) => Some(d),
            Action::NoAction => None,
        }
    }
}

impl From<Direction> for Action {
    fn from(d: Direction) -> Self {
        Action::Move(d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlayerId(pub usize);

impl PlayerId {
    pub const LEARNER: PlayerId = PlayerId(0);
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
}

impl Observation {
    pub fn new(text: impl Into<String>) -> Self {
        Observation { text: text.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub values: Vec<f64>,
}

impl RewardVector {
    pub fn zeros(players: usize) -> Self {
        RewardVector {
            values: vec![0.0; players],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum StatePayload {
    Lake(LakeState),
    Snake(SnakeState),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameState {
    pub payload: StatePayload,
    pub is_terminal: bool,
    pub step_index: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Goal,
    Collision,
    Hole,
    StepCap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub rewards: RewardVector,
    pub terminal: bool,
    pub reason: Option<TerminalReason>,
}

/// The environment side of a text-mediated stochastic game.
///
/// Implementations own their dynamics RNG, seeded at construction, and must
/// refuse transitions once the state is terminal.
pub trait Environment: Send {
    fn num_players(&self) -> usize;

    fn state(&self) -> &GameState;

    /// Per-player legal action sets. Errors on terminal states.
    fn legal_actions(&self) -> Result<Vec<Vec<Action>>, TmsgError>;

    fn step(&mut self, joint: &JointAction) -> Result<Transition, TmsgError>;

    fn observe(&self, player: PlayerId) -> Observation;

    fn is_terminal(&self) -> bool {
        self.state().is_terminal
    }
}

/// Everything a policy may look at when choosing the learner's action.
///
/// Text policies read only `observation`; scripted oracle policies may read
/// `state` directly.
pub struct StepContext<'a> {
    pub observation: &'a Observation,
    pub state: &'a GameState,
    pub episode_seed: u64,
    pub step: usize,
}

/// Output of one learner decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub prompt: String,
    /// Generated token ids; empty for policies without a token model.
    pub completion_tokens: Vec<u32>,
    pub completion_text: String,
    /// Token count used by the length penalty.
    pub token_count: usize,
    pub parsed: ParsedAction,
    /// Transport or generation failure; the step is then recorded as unparsed.
    pub error: Option<String>,
}

pub trait AgentPolicy: Sync {
    fn act(&self, ctx: &StepContext<'_>, rng: &mut Rng) -> Decision;
}

/// A scripted non-learning player.
pub trait OpponentPolicy: Sync {
    fn select(&self, state: &GameState, legal: &[Action], rng: &mut Rng) -> Action;
}

/// Uniform choice over the legal set; `Up` when the set is empty.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomLegalOpponent;

impl OpponentPolicy for RandomLegalOpponent {
    fn select(&self, _state: &GameState, legal: &[Action], rng: &mut Rng) -> Action {
        use rand::Rng as _;
        if legal.is_empty() {
            return Action::Move(Direction::Up);
        }
        legal[rng.random_range(0..legal.len())]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub observation: Observation,
    pub prompt: String,
    pub completion_tokens: Vec<u32>,
    pub completion_text: String,
    pub token_count: usize,
    pub parsed_action: Option<Direction>,
    pub applied_action: Action,
    pub env_reward: f64,
    pub invalid_penalty: f64,
    pub format_penalty: FormatPenalty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_error: Option<String>,
}

impl StepRecord {
    /// Environment reward plus the invalid-action penalty.
    pub fn env_channel(&self) -> f64 {
        self.env_reward + self.invalid_penalty
    }

    pub fn total(&self) -> f64 {
        self.env_reward + self.invalid_penalty + self.format_penalty.total()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub steps: Vec<StepRecord>,
    pub seed: u64,
    pub terminal_reason: TerminalReason,
    /// Sum over steps of env reward, invalid penalty and format penalties.
    pub composite_reward: f64,
    /// Sum over steps of env reward and invalid penalty.
    pub total_env_reward: f64,
}

impl EpisodeRecord {
    pub fn generated_tokens(&self) -> usize {
        self.steps.iter().map(|s| s.completion_tokens.len()).sum()
    }

    pub fn invalid_steps(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.parsed_action.is_none())
            .count()
    }
}

/// Runs one episode of the interaction loop.
///
/// `env` must be freshly reset. Policy and opponent randomness come from
/// streams derived from `seed`; environment randomness is owned by `env`.
/// The episode ends on a terminal state or after `step_cap` steps.
pub fn run_episode(
    env: &mut dyn Environment,
    learner: &dyn AgentPolicy,
    opponents: &[&dyn OpponentPolicy],
    seed: u64,
    step_cap: usize,
) -> Result<EpisodeRecord, TmsgError> {
    if step_cap == 0 {
        return Err(TmsgError::ZeroStepCap);
    }
    let players = env.num_players();
    if opponents.len() + 1 != players {
        return Err(TmsgError::OpponentCount {
            expected: players - 1,
            got: opponents.len(),
        });
    }
    if env.is_terminal() {
        return Err(TmsgError::TerminalState {
            step: env.state().step_index,
        });
    }

    let mut policy_rng = rng::stream(seed, &[rng::tag::POLICY]);
    let mut opponent_rng = rng::stream(seed, &[rng::tag::OPPONENT]);
    let mut steps = Vec::new();
    let mut reason = TerminalReason::StepCap;

    while steps.len() < step_cap {
        let observation = env.observe(PlayerId::LEARNER);
        let legal = env.legal_actions()?;
        let decision = learner.act(
            &StepContext {
                observation: &observation,
                state: env.state(),
                episode_seed: seed,
                step: steps.len(),
            },
            &mut policy_rng,
        );

        // Collect every action before any transition.
        let learner_action = match decision.parsed.value {
            Some(d) if legal[0].contains(&Action::Move(d)) => Action::Move(d),
            _ => Action::NoAction,
        };
        let mut actions = Vec::with_capacity(players);
        actions.push(learner_action);
        for (i, opponent) in opponents.iter().enumerate() {
            actions.push(opponent.select(env.state(), &legal[i + 1], &mut opponent_rng));
        }

        let transition = env.step(&JointAction { actions })?;
        let invalid_penalty = if decision.parsed.value.is_none() {
            reward::INVALID_ACTION_PENALTY
        } else {
            0.0
        };
        steps.push(StepRecord {
            format_penalty: FormatPenalty::of(&decision.completion_text, decision.token_count),
            observation,
            prompt: decision.prompt,
            completion_tokens: decision.completion_tokens,
            completion_text: decision.completion_text,
            token_count: decision.token_count,
            parsed_action: decision.parsed.value,
            applied_action: learner_action,
            env_reward: transition.rewards.values[0],
            invalid_penalty,
            policy_error: decision.error,
        });
        if transition.terminal {
            reason = transition.reason.unwrap_or(TerminalReason::Goal);
            break;
        }
    }

    let total_env_reward = steps.iter().map(StepRecord::env_channel).sum();
    let composite_reward = steps.iter().map(StepRecord::total).sum();
    Ok(EpisodeRecord {
        steps,
        seed,
        terminal_reason: reason,
        composite_reward,
        total_env_reward,
    })
}
