//! Deterministic toy games over the Atari action vocabulary.
//!
//! Each game emits symbolic frames (labelled bounding boxes on a cell grid)
//! instead of pixels, and [`render_propositions`] turns a state into the
//! textual scene description consumed by prompts and rule matching.
//!
//! Environment randomness comes from a caller-owned [`EnvRng`] stream so
//! that policy sampling never perturbs the world.

mod action;
mod games;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub use action::{ActionId, ACTION_NAMES};

use crate::error::{config_err, usage_err, Result};

/// Seeded stream for world randomness (spawns, initial layouts).
pub type EnvRng = rand_chacha::ChaCha8Rng;

/// Number of frames stacked in a [`GameState`].
pub const FRAME_STACK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameId {
    Dodger,
    Shooter,
    Collector,
    Crossing,
}

impl GameId {
    pub const ALL: [GameId; 4] = [
        GameId::Dodger,
        GameId::Shooter,
        GameId::Collector,
        GameId::Crossing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GameId::Dodger => "dodger",
            GameId::Shooter => "shooter",
            GameId::Collector => "collector",
            GameId::Crossing => "crossing",
        }
    }
}

impl fmt::Display for GameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GameId {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        GameId::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim())
            .ok_or_else(|| config_err(format!("unknown game `{s}`")))
    }
}

/// Per-game scalars. Their meaning depends on the game:
///
/// | game      | spawn_rate          | speed        | reward        | penalty          | population |
/// |-----------|---------------------|--------------|---------------|------------------|------------|
/// | dodger    | rock spawn prob     | fall speed   | rock dodged   | collision        | unused     |
/// | shooter   | target respawn prob | bullet speed | target hit    | cost per shot    | targets    |
/// | collector | coin respawn prob   | unused       | coin picked   | unused           | coins      |
/// | crossing  | unused              | car speed    | road crossed  | unused           | cars/lane  |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    pub spawn_rate: f64,
    pub speed: i32,
    pub reward: f64,
    pub penalty: f64,
    pub population: usize,
}

impl RuleParams {
    pub fn defaults(game: GameId) -> Self {
        match game {
            GameId::Dodger => RuleParams {
                spawn_rate: 0.3,
                speed: 1,
                reward: 1.0,
                penalty: -5.0,
                population: 0,
            },
            GameId::Shooter => RuleParams {
                spawn_rate: 0.25,
                speed: 2,
                reward: 1.0,
                penalty: 0.0,
                population: 2,
            },
            GameId::Collector => RuleParams {
                spawn_rate: 0.25,
                speed: 0,
                reward: 1.0,
                penalty: 0.0,
                population: 3,
            },
            GameId::Crossing => RuleParams {
                spawn_rate: 0.0,
                speed: 1,
                reward: 1.0,
                penalty: 0.0,
                population: 1,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub game: GameId,
    pub width: i32,
    pub height: i32,
    pub max_steps: u32,
    pub rules: RuleParams,
}

impl GameSpec {
    /// A 10x10 board with 200-step episodes and the game's default rules.
    pub fn new(game: GameId) -> Self {
        GameSpec {
            game,
            width: 10,
            height: 10,
            max_steps: 200,
            rules: RuleParams::defaults(game),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 4 {
            return Err(config_err(format!(
                "grid must be at least 4x4, got {}x{}",
                self.width, self.height
            )));
        }
        if self.max_steps < 1 {
            return Err(config_err("max_steps must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.rules.spawn_rate) {
            return Err(config_err("spawn_rate must lie in [0, 1]"));
        }
        if self.rules.speed < 0 {
            return Err(config_err("speed must be >= 0"));
        }
        if !self.rules.reward.is_finite() || !self.rules.penalty.is_finite() {
            return Err(config_err("reward values must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Player,
    Rock,
    Target,
    Bullet,
    Coin,
    Car,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Player => "player",
            Category::Rock => "rock",
            Category::Target => "target",
            Category::Bullet => "bullet",
            Category::Coin => "coin",
            Category::Car => "car",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive cell rectangle, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl BBox {
    pub fn cell(x: i32, y: i32) -> Self {
        BBox {
            x0: x,
            y0: y,
            x1: x,
            y1: y,
        }
    }

    pub fn within(&self, width: i32, height: i32) -> bool {
        self.x0 >= 0
            && self.y0 >= 0
            && self.x0 <= self.x1
            && self.y0 <= self.y1
            && self.x1 < width
            && self.y1 < height
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }
}

/// Cells moved per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motion {
    pub dx: i32,
    pub dy: i32,
}

impl Motion {
    pub fn label(&self) -> &'static str {
        match (self.dx.signum(), self.dy.signum()) {
            (0, 0) => "static",
            (0, -1) => "moving up",
            (0, 1) => "moving down",
            (-1, 0) => "moving left",
            (1, 0) => "moving right",
            _ => "moving diagonally",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: Category,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<Motion>,
}

impl SceneObject {
    pub fn at(category: Category, x: i32, y: i32) -> Self {
        SceneObject {
            category,
            bbox: BBox::cell(x, y),
            motion: None,
        }
    }

    pub fn moving(category: Category, x: i32, y: i32, dx: i32, dy: i32) -> Self {
        SceneObject {
            category,
            bbox: BBox::cell(x, y),
            motion: Some(Motion { dx, dy }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub width: i32,
    pub height: i32,
    pub objects: Vec<SceneObject>,
}

impl Frame {
    pub fn empty(width: i32, height: i32) -> Self {
        Frame {
            width,
            height,
            objects: Vec::new(),
        }
    }

    pub fn player(&self) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.category == Category::Player)
    }

    pub fn of(&self, category: Category) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(move |o| o.category == category)
    }

    pub fn in_bounds(&self) -> bool {
        self.objects
            .iter()
            .all(|o| o.bbox.within(self.width, self.height))
    }
}

/// Observable state: the three latest frames, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub frames: [Frame; FRAME_STACK],
    pub t: u64,
    pub episode_return: f64,
    pub done: bool,
}

impl GameState {
    pub fn from_frame(frame: Frame) -> Self {
        GameState {
            frames: [frame.clone(), frame.clone(), frame],
            t: 0,
            episode_return: 0.0,
            done: false,
        }
    }

    pub fn current(&self) -> &Frame {
        &self.frames[FRAME_STACK - 1]
    }

    fn push_frame(&mut self, frame: Frame) {
        self.frames.rotate_left(1);
        self.frames[FRAME_STACK - 1] = frame;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_state: GameState,
    pub reward: f64,
    pub done: bool,
    /// The requested action was not legal in this game and NOOP was applied.
    #[serde(default)]
    pub illegal_action: bool,
}

/// Deterministic initial state for `(spec, seed)`.
pub fn reset(spec: &GameSpec, seed: u64) -> Result<GameState> {
    let mut rng = EnvRng::seed_from_u64(seed);
    reset_with(spec, &mut rng)
}

/// Initial state drawn from an existing stream (used for episode restarts).
pub fn reset_with(spec: &GameSpec, rng: &mut EnvRng) -> Result<GameState> {
    spec.validate()?;
    Ok(GameState::from_frame(games::initial_frame(spec, rng)))
}

/// Advances the game by one step.
pub fn step(
    state: &GameState,
    action: ActionId,
    spec: &GameSpec,
    rng: &mut EnvRng,
) -> Result<StepResult> {
    if state.done {
        return Err(usage_err("step called on a finished episode; reset first"));
    }
    let legal = legal_actions(spec);
    let illegal_action = !legal.contains(&action);
    let applied = if illegal_action {
        ActionId::NOOP
    } else {
        action
    };

    let outcome = games::advance(spec, state.current(), applied, rng);
    let mut next = state.clone();
    next.push_frame(outcome.frame);
    next.t += 1;
    next.episode_return += outcome.reward;
    next.done = outcome.terminal || next.t >= u64::from(spec.max_steps);
    Ok(StepResult {
        done: next.done,
        reward: outcome.reward,
        next_state: next,
        illegal_action,
    })
}

/// The fixed per-game subset of the 18 actions, in canonical index order.
pub fn legal_actions(spec: &GameSpec) -> Vec<ActionId> {
    legal_actions_for(spec.game)
}

pub fn legal_actions_for(game: GameId) -> Vec<ActionId> {
    use ActionId as A;
    match game {
        GameId::Dodger => vec![A::NOOP, A::RIGHT, A::LEFT],
        GameId::Shooter => vec![
            A::NOOP,
            A::FIRE,
            A::RIGHT,
            A::LEFT,
            A::RIGHTFIRE,
            A::LEFTFIRE,
        ],
        GameId::Collector => vec![A::NOOP, A::UP, A::RIGHT, A::LEFT, A::DOWN],
        GameId::Crossing => vec![A::NOOP, A::UP, A::DOWN],
    }
}

const FRAME_HEADERS: [&str; FRAME_STACK] = [
    "Frame 1 (timestep -2):",
    "Frame 2 (timestep -1):",
    "Frame 3 (current timestep):",
];

/// One header per frame, then one `a <category> at (x0, y0, x1, y1)` line
/// per object, oldest frame first.
pub fn render_propositions(state: &GameState) -> String {
    let mut out = String::new();
    for (header, frame) in FRAME_HEADERS.iter().zip(&state.frames) {
        out.push_str(header);
        out.push('\n');
        render_frame_into(frame, &mut out);
    }
    out
}

pub fn render_frame(frame: &Frame) -> String {
    let mut out = String::new();
    render_frame_into(frame, &mut out);
    out
}

fn render_frame_into(frame: &Frame, out: &mut String) {
    for o in &frame.objects {
        let b = o.bbox;
        out.push_str(&format!(
            "a {} at ({}, {}, {}, {})\n",
            o.category, b.x0, b.y0, b.x1, b.y1
        ));
    }
}

/// A game instance that owns its spec, state and world stream, restarting
/// episodes from the same stream.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: GameSpec,
    state: GameState,
    rng: EnvRng,
}

impl Environment {
    pub fn new(spec: GameSpec, seed: u64) -> Result<Self> {
        let mut rng = EnvRng::seed_from_u64(seed);
        let state = reset_with(&spec, &mut rng)?;
        Ok(Environment { spec, state, rng })
    }

    pub fn spec(&self) -> &GameSpec {
        &self.spec
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepResult> {
        let result = step(&self.state, action, &self.spec, &mut self.rng)?;
        self.state = result.next_state.clone();
        Ok(result)
    }

    pub fn reset(&mut self) -> Result<&GameState> {
        self.state = reset_with(&self.spec, &mut self.rng)?;
        Ok(&self.state)
    }
}
