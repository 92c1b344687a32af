use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Canonical Atari atomic-action names, in emulator index order.
pub const ACTION_NAMES: [&str; 18] = [
    "NOOP",
    "FIRE",
    "UP",
    "RIGHT",
    "LEFT",
    "DOWN",
    "UPRIGHT",
    "UPLEFT",
    "DOWNRIGHT",
    "DOWNLEFT",
    "UPFIRE",
    "RIGHTFIRE",
    "LEFTFIRE",
    "DOWNFIRE",
    "UPRIGHTFIRE",
    "UPLEFTFIRE",
    "DOWNRIGHTFIRE",
    "DOWNLEFTFIRE",
];

/// One of the 18 atomic actions. Serialized by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId(u8);

impl ActionId {
    pub const COUNT: usize = 18;

    pub const NOOP: ActionId = ActionId(0);
    pub const FIRE: ActionId = ActionId(1);
    pub const UP: ActionId = ActionId(2);
    pub const RIGHT: ActionId = ActionId(3);
    pub const LEFT: ActionId = ActionId(4);
    pub const DOWN: ActionId = ActionId(5);
    pub const UPRIGHT: ActionId = ActionId(6);
    pub const UPLEFT: ActionId = ActionId(7);
    pub const DOWNRIGHT: ActionId = ActionId(8);
    pub const DOWNLEFT: ActionId = ActionId(9);
    pub const UPFIRE: ActionId = ActionId(10);
    pub const RIGHTFIRE: ActionId = ActionId(11);
    pub const LEFTFIRE: ActionId = ActionId(12);
    pub const DOWNFIRE: ActionId = ActionId(13);
    pub const UPRIGHTFIRE: ActionId = ActionId(14);
    pub const UPLEFTFIRE: ActionId = ActionId(15);
    pub const DOWNRIGHTFIRE: ActionId = ActionId(16);
    pub const DOWNLEFTFIRE: ActionId = ActionId(17);

    pub fn from_index(index: usize) -> Option<Self> {
        (index < Self::COUNT).then_some(ActionId(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        ACTION_NAMES[self.index()]
    }

    /// Case-insensitive lookup after trimming surrounding whitespace.
    pub fn from_name(name: &str) -> Option<Self> {
        let name = name.trim();
        ACTION_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| ActionId(i as u8))
    }

    pub fn all() -> impl Iterator<Item = ActionId> {
        (0..Self::COUNT as u8).map(ActionId)
    }

    /// Decomposes the action into a unit move `(dx, dy)` and a fire flag.
    /// `dy = -1` is up (top-left origin).
    pub fn components(self) -> (i32, i32, bool) {
        let name = self.name();
        let fire = name.contains("FIRE");
        let dy = if name.starts_with("UP") {
            -1
        } else if name.starts_with("DOWN") {
            1
        } else {
            0
        };
        let dx = if name.contains("RIGHT") {
            1
        } else if name.contains("LEFT") {
            -1
        } else {
            0
        };
        (dx, dy, fire)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ActionId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ActionId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        ActionId::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown action `{name}`")))
    }
}
