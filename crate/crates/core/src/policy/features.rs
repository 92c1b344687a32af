//! Deterministic scene encoding plus rule-match features.
//!
//! A rule-match feature is on when some knowledge entry matches the
//! pattern's keyword groups *and* the pattern's scene condition holds.

use serde::{Deserialize, Serialize};

use crate::env::{legal_actions_for, ActionId, Category, Frame, GameId, GameSpec, GameState};
use crate::memory::KnowledgeMemory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> FeatureVector {
        FeatureVector {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

/// Scene facts the rule conditions are evaluated against.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Indicators {
    pub aligned: bool,
    pub focus_left: bool,
    pub focus_right: bool,
    pub danger_near: bool,
    pub in_flight: bool,
    pub lane_clear: bool,
}

pub struct RulePattern {
    pub name: &'static str,
    /// Every group must have a word starting with one of its keywords.
    pub keywords: &'static [&'static [&'static str]],
    pub condition: fn(&Indicators) -> bool,
    /// Actions an instruction-following policy associates with the rule.
    pub suggests: &'static [ActionId],
}

const MOVE_TOWARD: &[&[&str]] = &[&["move", "go", "head", "steer"], &["toward"]];

/// The fixed pattern lexicon, in feature order.
pub const RULE_LEXICON: [RulePattern; 6] = [
    RulePattern {
        name: "rule_fire_aligned",
        keywords: &[&["fire", "shoot"], &["align"]],
        condition: |i| i.aligned,
        suggests: &[ActionId::FIRE],
    },
    RulePattern {
        name: "rule_chase_left",
        keywords: MOVE_TOWARD,
        condition: |i| i.focus_left,
        suggests: &[ActionId::LEFT],
    },
    RulePattern {
        name: "rule_chase_right",
        keywords: MOVE_TOWARD,
        condition: |i| i.focus_right,
        suggests: &[ActionId::RIGHT],
    },
    RulePattern {
        name: "rule_evade",
        keywords: &[&["avoid", "dodge", "evade"]],
        condition: |i| i.danger_near,
        suggests: &[ActionId::LEFT, ActionId::RIGHT],
    },
    RulePattern {
        name: "rule_advance_clear",
        keywords: &[&["cross", "advance", "climb"], &["clear", "gap", "free"]],
        condition: |i| i.lane_clear,
        suggests: &[ActionId::UP],
    },
    RulePattern {
        name: "rule_wait",
        keywords: &[&["wait", "hold"]],
        condition: |i| i.in_flight || i.danger_near,
        suggests: &[ActionId::NOOP],
    },
];

impl RulePattern {
    pub fn matches_text(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        self.keywords
            .iter()
            .all(|group| group.iter().any(|k| words.iter().any(|w| w.starts_with(k))))
    }
}

const BASE_FEATURES: [&str; 7] = [
    "bias",
    "aligned",
    "focus_left",
    "focus_right",
    "danger_near",
    "in_flight",
    "lane_clear",
];

/// Feature layout and action slots for one game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub game: GameId,
    pub legal: Vec<ActionId>,
    pub names: Vec<String>,
    categories: Vec<Category>,
}

fn categories_for(game: GameId) -> Vec<Category> {
    match game {
        GameId::Dodger => vec![Category::Rock],
        GameId::Shooter => vec![Category::Target, Category::Bullet],
        GameId::Collector => vec![Category::Coin],
        GameId::Crossing => vec![Category::Car],
    }
}

fn focus_for(game: GameId) -> Category {
    match game {
        GameId::Dodger => Category::Rock,
        GameId::Shooter => Category::Target,
        GameId::Collector => Category::Coin,
        GameId::Crossing => Category::Car,
    }
}

impl FeatureSchema {
    pub fn for_game(game: GameId) -> Self {
        let categories = categories_for(game);
        let mut names: Vec<String> = BASE_FEATURES.iter().map(|s| s.to_string()).collect();
        for c in &categories {
            names.push(format!("{c}_present"));
            names.push(format!("{c}_dx"));
            names.push(format!("{c}_dy"));
        }
        names.extend(RULE_LEXICON.iter().map(|p| p.name.to_string()));
        FeatureSchema {
            game,
            legal: legal_actions_for(game),
            names,
            categories,
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn num_actions(&self) -> usize {
        self.legal.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn slot_of(&self, action: ActionId) -> Option<usize> {
        self.legal.iter().position(|&a| a == action)
    }

    pub fn rule_offset(&self) -> usize {
        self.dim() - RULE_LEXICON.len()
    }
}

pub fn indicators(frame: &Frame, game: GameId) -> Indicators {
    let Some(player) = frame.player() else {
        return Indicators::default();
    };
    let (px, py) = (player.bbox.x0, player.bbox.y0);
    let focus = focus_for(game);
    let nearest = frame.of(focus).min_by_key(|o| {
        (
            (o.bbox.x0 - px).abs() + (o.bbox.y0 - py).abs(),
            o.bbox.x0,
            o.bbox.y0,
        )
    });
    let aligned = frame
        .of(focus)
        .any(|o| (o.bbox.x0..=o.bbox.x1).contains(&px) && o.bbox.y1 <= py);
    let (focus_left, focus_right) = match nearest {
        Some(o) if !aligned => (o.bbox.x1 < px, o.bbox.x0 > px),
        _ => (false, false),
    };
    let (danger_near, lane_clear) = match game {
        GameId::Dodger => {
            let near = frame
                .of(Category::Rock)
                .any(|o| o.bbox.x0 == px && o.bbox.y0 < py && py - o.bbox.y0 <= 3);
            (near, !near)
        }
        GameId::Crossing => {
            let near = frame
                .of(Category::Car)
                .any(|o| o.bbox.y0 == py - 1 && (o.bbox.x0 - px).abs() <= 2);
            (near, !near && py > 0)
        }
        _ => (false, false),
    };
    Indicators {
        aligned,
        focus_left,
        focus_right,
        danger_near,
        in_flight: frame.of(Category::Bullet).next().is_some(),
        lane_clear,
    }
}

fn b(x: bool) -> f64 {
    if x {
        1.0
    } else {
        0.0
    }
}

/// Encodes the newest frame and the rule memory. Values lie in `[-1, 1]`.
pub fn features(state: &GameState, memory: &KnowledgeMemory, spec: &GameSpec) -> FeatureVector {
    let schema = FeatureSchema::for_game(spec.game);
    encode(&schema, state, memory)
}

pub(crate) fn encode(
    schema: &FeatureSchema,
    state: &GameState,
    memory: &KnowledgeMemory,
) -> FeatureVector {
    let frame = state.current();
    let ind = indicators(frame, schema.game);
    let mut v = vec![
        1.0,
        b(ind.aligned),
        b(ind.focus_left),
        b(ind.focus_right),
        b(ind.danger_near),
        b(ind.in_flight),
        b(ind.lane_clear),
    ];
    let (px, py) = frame
        .player()
        .map(|p| (p.bbox.x0, p.bbox.y0))
        .unwrap_or((0, 0));
    let sx = f64::from((frame.width - 1).max(1));
    let sy = f64::from((frame.height - 1).max(1));
    for &c in &schema.categories {
        let nearest = frame.of(c).min_by_key(|o| {
            (
                (o.bbox.x0 - px).abs() + (o.bbox.y0 - py).abs(),
                o.bbox.x0,
                o.bbox.y0,
            )
        });
        match nearest {
            Some(o) => {
                let (cx, cy) = o.bbox.center();
                v.push(1.0);
                v.push(((cx - f64::from(px)) / sx).clamp(-1.0, 1.0));
                v.push(((cy - f64::from(py)) / sy).clamp(-1.0, 1.0));
            }
            None => v.extend([0.0, 0.0, 0.0]),
        }
    }
    for pattern in &RULE_LEXICON {
        let known = memory.texts().any(|t| pattern.matches_text(t));
        v.push(b(known && (pattern.condition)(&ind)));
    }
    debug_assert_eq!(v.len(), schema.dim());
    FeatureVector { values: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, SceneObject};
    use crate::protocol::MemoryOp;

    fn shooter_state(px: i32, tx: i32) -> GameState {
        let mut f = Frame::empty(10, 10);
        f.objects.push(SceneObject::at(Category::Player, px, 9));
        f.objects.push(SceneObject::at(Category::Target, tx, 2));
        GameState::from_frame(f)
    }

    fn with_rule(text: &str) -> KnowledgeMemory {
        let mut m = KnowledgeMemory::new(20);
        m.apply(&[MemoryOp::Add(text.into())], 0);
        m
    }

    #[test]
    fn empty_memory_leaves_rule_features_off() {
        let spec = GameSpec::new(GameId::Shooter);
        let s = shooter_state(4, 4);
        let fv = features(&s, &KnowledgeMemory::new(20), &spec);
        let schema = FeatureSchema::for_game(GameId::Shooter);
        assert!(fv.values[schema.rule_offset()..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn aligned_shooter_state() {
        let spec = GameSpec::new(GameId::Shooter);
        let schema = FeatureSchema::for_game(GameId::Shooter);
        let fv = features(&shooter_state(4, 4), &KnowledgeMemory::new(20), &spec);
        assert_eq!(fv.values[schema.index_of("aligned").unwrap()], 1.0);
        let fv = features(&shooter_state(2, 4), &KnowledgeMemory::new(20), &spec);
        assert_eq!(fv.values[schema.index_of("aligned").unwrap()], 0.0);
        assert_eq!(fv.values[schema.index_of("focus_right").unwrap()], 1.0);
    }

    #[test]
    fn fire_rule_activates_only_when_aligned() {
        let spec = GameSpec::new(GameId::Shooter);
        let schema = FeatureSchema::for_game(GameId::Shooter);
        let j = schema.index_of("rule_fire_aligned").unwrap();
        let mem = with_rule("fire when aligned");
        assert_eq!(features(&shooter_state(4, 4), &mem, &spec).values[j], 1.0);
        assert_eq!(features(&shooter_state(1, 4), &mem, &spec).values[j], 0.0);
    }

    #[test]
    fn keyword_matching_uses_word_prefixes() {
        let p = &RULE_LEXICON[0];
        assert!(p.matches_text("Fire when the player is ALIGNED with a target."));
        assert!(!p.matches_text("fire often"));
        assert!(RULE_LEXICON[1].matches_text("move toward the nearest coin"));
    }

    #[test]
    fn features_are_pure_and_bounded() {
        for g in GameId::ALL {
            let spec = GameSpec::new(g);
            let s = reset(&spec, 11).unwrap();
            let mem = with_rule("move toward targets and avoid rocks");
            let a = features(&s, &mem, &spec);
            assert_eq!(a, features(&s, &mem, &spec));
            assert_eq!(a.len(), FeatureSchema::for_game(g).dim());
            assert!(a.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
