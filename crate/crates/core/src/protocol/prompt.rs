use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::{render_frame, render_propositions, GameState, ACTION_NAMES};
use crate::error::{usage_err, Result};
use crate::memory::{KnowledgeMemory, TrajectoryStep};

/// A chat prompt: one system message and one user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// Both messages joined into one text block.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

/// The action vocabulary as backticked names, in canonical order.
pub const VALID_ACTION_SET: &str = "`NOOP`, `FIRE`, `UP`, `RIGHT`, `LEFT`, `DOWN`, `UPRIGHT`, `UPLEFT`, `DOWNRIGHT`, `DOWNLEFT`, `UPFIRE`, `RIGHTFIRE`, `LEFTFIRE`, `DOWNFIRE`, `UPRIGHTFIRE`, `UPLEFTFIRE`, `DOWNRIGHTFIRE`, `DOWNLEFTFIRE`.";

pub const ACTION_SYSTEM_PROMPT: &str = "\
You are a general-purpose game agent. You read short descriptions of consecutive game frames and pick the next atomic action.

Scene Analysis: identify the player, enemies, obstacles, projectiles and items, with their bounding boxes (x_top_left, y_top_left, x_bottom_right, y_bottom_right). The origin (0,0) is the top-left cell of the frame.

Game Reasoning: infer the game's mechanics and goals from the objects and how they move across frames, using any known rules you are given.

Action Decision: choose one atomic action from the valid action set:
NOOP, FIRE, UP, RIGHT, LEFT, DOWN, UPRIGHT, UPLEFT, DOWNRIGHT, DOWNLEFT, UPFIRE, RIGHTFIRE, LEFTFIRE, DOWNFIRE, UPRIGHTFIRE, UPLEFTFIRE, DOWNRIGHTFIRE, DOWNLEFTFIRE.

Instructions:
- Wrap your reasoning in <think>...</think> tags.
- Wrap your final action decision in <answer>...</answer> tags, containing only the action name.";

pub const META_SYSTEM_PROMPT: &str = "You maintain a compact rule memory for a game-playing agent.";

/// Scene, known rules (omitted when the memory is empty) and the fixed
/// instruction block.
pub fn render_action_prompt(state: &GameState, memory: &KnowledgeMemory) -> Prompt {
    let mut user = String::from(
        "You are given a sequence of consecutive video game frames (observations).\n\n",
    );
    user.push_str(&render_propositions(state));
    if !memory.is_empty() {
        user.push_str("\nKnown rules:\n");
        push_rules(&mut user, memory);
    }
    user.push_str(
        "\nYour task is to analyze the visual scene and reason about the game's dynamics to infer the most appropriate next action.\n\n\
- Provide your reasoning inside `<think>...</think>` tags.\n\
- Then, output the final action decision inside `<answer>...</answer>` tags.\n\n\
Choose the action from the following valid set:\n",
    );
    user.push_str(VALID_ACTION_SET);
    user.push('\n');
    debug_assert!(ACTION_NAMES.iter().all(|n| user.contains(n)));
    Prompt {
        system: ACTION_SYSTEM_PROMPT.to_string(),
        user,
    }
}

fn push_rules(out: &mut String, memory: &KnowledgeMemory) {
    for (i, e) in memory.entries().iter().enumerate() {
        let _ = writeln!(out, "[{i}] {}", e.text);
    }
}

fn meta_header(count: usize, capacity: usize) -> String {
    format!(
        "You are managing a memory system of rule (current: {count}/{capacity} rule).\n\
Analyze the recent trajectory and current rules to decide memory operations.\n\
Return meta reasoning process in <meta>reason about the memory operations you are going to make</meta>\n\
followed by arbitrary number of operations using these tags:\n\
<add> Some knowledge about the game mechanics, or good strategies summarised from the experience with reasoning </add> - to add a new rule (if space available)\n\
<delete>rule_id</delete> - to remove rule by ID (0-based index)\n\
<keep/> - to make no changes\n\n\
Rules should be the game mechanisms and/or strategies learned from the experience.\n\
Avoid duplicates and contradictions.\n\
To update a rule, use <delete>old_id</delete> then <add>new rule</add>.\n\
If no changes needed, use <keep/>.\n"
    )
}

fn push_context(out: &mut String, segment: &[TrajectoryStep], memory: &KnowledgeMemory) {
    out.push_str("\nCurrent rules:\n");
    if memory.is_empty() {
        out.push_str("(none)\n");
    } else {
        push_rules(out, memory);
    }
    out.push_str("\nRecent trajectory:\n");
    for step in segment {
        let _ = writeln!(out, "Step {}:", step.t);
        out.push_str(&render_frame(step.state.state.current()));
        let _ = writeln!(out, "Action: {}", step.action);
        let _ = writeln!(out, "Environment reward: {}", step.r_env);
        match step.r_self {
            Some(r) => {
                let _ = writeln!(out, "Self-consistency reward: {r}");
            }
            None => out.push_str("Self-consistency reward: n/a\n"),
        }
    }
}

/// The meta template filled with the rule count, the numbered rules and
/// one block per trajectory step.
pub fn render_meta_prompt(
    segment: &[TrajectoryStep],
    memory: &KnowledgeMemory,
    capacity: usize,
) -> Result<Prompt> {
    if segment.is_empty() {
        return Err(usage_err("meta prompt needs a nonempty trajectory segment"));
    }
    let mut user = meta_header(memory.len(), capacity);
    push_context(&mut user, segment, memory);
    Ok(Prompt {
        system: META_SYSTEM_PROMPT.to_string(),
        user,
    })
}

/// Second call of the two-call meta variant: operations conditioned on an
/// already generated analysis.
pub fn render_meta_ops_prompt(
    segment: &[TrajectoryStep],
    memory: &KnowledgeMemory,
    capacity: usize,
    meta: &str,
) -> Result<Prompt> {
    let mut prompt = render_meta_prompt(segment, memory, capacity)?;
    let _ = write!(
        prompt.user,
        "\nYour analysis:\n<meta>{meta}</meta>\nNow output only the operations.\n"
    );
    Ok(prompt)
}
