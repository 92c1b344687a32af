//! Run configuration, loaded from TOML with one section per module.
//!
//! ```toml
//! [run]
//! steps_total = 2000
//! seed = 7
//! ablation = "full"
//!
//! [env]
//! game = "shooter"
//!
//! [metareason]
//! backend = "scripted"
//! script = ["<meta>...</meta><add>fire when aligned</add>"]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::backend::{FixtureBackend, HttpChatBackend, ScriptedBackend, TextGenerator};
use crate::env::{GameId, GameSpec, RuleParams};
use crate::error::{config_err, Error, Result};
use crate::mctrl::MctrlConfig;
use crate::memory::DEFAULT_CAPACITY;
use crate::policy::{ActionBackend, PolicyRng, ToyPolicy};
use crate::scheduler::SchedulerState;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoMr,
    NoRl,
    NoMrNoRl,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoMr,
        Ablation::NoRl,
        Ablation::NoMrNoRl,
    ];

    pub fn meta_enabled(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoRl)
    }

    pub fn rl_enabled(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoMr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoMr => "no_mr",
            Ablation::NoRl => "no_rl",
            Ablation::NoMrNoRl => "no_mr_no_rl",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                config_err(format!(
                    "unknown ablation `{s}` (expected full, no_mr, no_rl or no_mr_no_rl)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub steps_total: u64,
    /// Master seed; per-role seeds default to it.
    pub seed: u64,
    pub ablation: Ablation,
    /// Steps between test-time RL rounds.
    pub mctrl_interval: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            steps_total: 1000,
            seed: 0,
            ablation: Ablation::Full,
            mctrl_interval: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub env: Option<u64>,
    pub policy: Option<u64>,
    pub backend: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleOverrides {
    pub spawn_rate: Option<f64>,
    pub speed: Option<i32>,
    pub reward: Option<f64>,
    pub penalty: Option<f64>,
    pub population: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub game: GameId,
    pub width: i32,
    pub height: i32,
    pub max_steps: u32,
    pub rules: RuleOverrides,
}

impl Default for EnvSection {
    fn default() -> Self {
        let spec = GameSpec::new(GameId::Shooter);
        EnvSection {
            game: spec.game,
            width: spec.width,
            height: spec.height,
            max_steps: spec.max_steps,
            rules: RuleOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub k_init: f64,
    pub growth: f64,
    pub k_min: u32,
    pub k_max: u32,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            k_init: 3.0,
            growth: 0.85,
            k_min: 2,
            k_max: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub capacity: usize,
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection {
            capacity: DEFAULT_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    Remote,
    Fixture,
    Scripted,
}

/// Connection settings for remote and fixture backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSection {
    pub model: String,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for RemoteSection {
    fn default() -> Self {
        RemoteSection {
            model: "default".into(),
            timeout_secs: 60,
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub backend: BackendKind,
    /// Initial weight from each rule-match feature to its suggested actions.
    pub rule_weight: f64,
    /// Initial weight of the generic scene prior.
    pub scene_weight: f64,
    /// Temperature of executed actions when voting is off; `<= 0` is greedy.
    pub act_temperature: f64,
    /// Execute the majority vote of `k_act` samples.
    pub online_vote: bool,
    pub k_act: usize,
    /// Sampling temperature of voting candidates.
    pub vote_temperature: f64,
    pub fixture_dir: Option<PathBuf>,
    pub remote: RemoteSection,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            backend: BackendKind::Toy,
            rule_weight: 2.0,
            scene_weight: 1.0,
            act_temperature: 0.0,
            online_vote: false,
            k_act: 8,
            vote_temperature: 1.0,
            fixture_dir: None,
            remote: RemoteSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    pub backend: BackendKind,
    /// Responses of the scripted backend, one per cycle.
    pub script: Vec<String>,
    /// Scripted response once the script runs out.
    pub fallback: Option<String>,
    pub two_call: bool,
    pub temperature: f64,
    pub fixture_dir: Option<PathBuf>,
    pub remote: RemoteSection,
}

impl Default for MetaSection {
    fn default() -> Self {
        MetaSection {
            backend: BackendKind::Remote,
            script: Vec::new(),
            fallback: None,
            two_call: false,
            temperature: 0.7,
            fixture_dir: None,
            remote: RemoteSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub seeds: SeedSection,
    pub env: EnvSection,
    pub scheduler: SchedulerSection,
    pub memory: MemorySection,
    pub policy: PolicySection,
    pub mctrl: MctrlConfig,
    pub metareason: MetaSection,
}

/// Resolved per-role seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub env: u64,
    pub policy: u64,
    pub backend: u64,
}

/// Independent ChaCha streams for one seed.
pub const STREAM_ACT: u64 = 1;
pub const STREAM_MCTRL: u64 = 2;

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative fixture paths are relative to the config file.
        if let Some(base) = path.parent() {
            for dir in [&mut cfg.policy.fixture_dir, &mut cfg.metareason.fixture_dir]
                .into_iter()
                .flatten()
            {
                if dir.is_relative() {
                    *dir = base.join(&*dir);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.steps_total == 0 {
            return Err(config_err("run.steps_total must be >= 1"));
        }
        if self.run.mctrl_interval == 0 {
            return Err(config_err("run.mctrl_interval must be >= 1"));
        }
        self.game_spec()?;
        self.scheduler_state()?;
        if self.memory.capacity == 0 {
            return Err(config_err("memory.capacity must be >= 1"));
        }
        if self.policy.online_vote && self.policy.k_act == 0 {
            return Err(config_err("policy.k_act must be >= 1 with online voting"));
        }
        if matches!(self.policy.backend, BackendKind::Scripted) {
            return Err(config_err(
                "policy.backend = \"scripted\" is not supported; use toy, remote or fixture",
            ));
        }
        if self.policy.backend == BackendKind::Fixture && self.policy.fixture_dir.is_none() {
            return Err(config_err(
                "policy.backend = \"fixture\" needs policy.fixture_dir",
            ));
        }
        if self.ablation().rl_enabled() && self.policy.backend != BackendKind::Toy {
            return Err(config_err(format!(
                "ablation {} trains the policy, which needs policy.backend = \"toy\"",
                self.ablation()
            )));
        }
        if self.ablation().meta_enabled() {
            match self.metareason.backend {
                BackendKind::Toy => {
                    return Err(config_err(
                        "metareason.backend must be scripted, remote or fixture",
                    ))
                }
                BackendKind::Fixture if self.metareason.fixture_dir.is_none() => {
                    return Err(config_err(
                        "metareason.backend = \"fixture\" needs metareason.fixture_dir",
                    ))
                }
                _ => {}
            }
        }
        if self.ablation().rl_enabled() {
            self.mctrl.validate()?;
        }
        Ok(())
    }

    pub fn ablation(&self) -> Ablation {
        self.run.ablation
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            env: self.seeds.env.unwrap_or(self.run.seed),
            policy: self.seeds.policy.unwrap_or(self.run.seed),
            backend: self.seeds.backend.unwrap_or(self.run.seed),
        }
    }

    /// Sets the master seed and clears per-role overrides.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.run.seed = seed;
        self.seeds = SeedSection::default();
        self
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.run.ablation = ablation;
        self
    }

    pub fn game_spec(&self) -> Result<GameSpec> {
        let mut rules = RuleParams::defaults(self.env.game);
        let o = &self.env.rules;
        if let Some(v) = o.spawn_rate {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err("env.rules.spawn_rate must lie in [0, 1]"));
            }
            rules.spawn_rate = v;
        }
        if let Some(v) = o.speed {
            rules.speed = v;
        }
        if let Some(v) = o.reward {
            rules.reward = v;
        }
        if let Some(v) = o.penalty {
            rules.penalty = v;
        }
        if let Some(v) = o.population {
            rules.population = v;
        }
        let spec = GameSpec {
            game: self.env.game,
            width: self.env.width,
            height: self.env.height,
            max_steps: self.env.max_steps,
            rules,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn scheduler_state(&self) -> Result<SchedulerState> {
        let s = &self.scheduler;
        SchedulerState::new(s.k_init, s.growth, s.k_min, s.k_max)
    }

    pub fn action_backend(&self) -> Result<ActionBackend> {
        let p = &self.policy;
        Ok(match p.backend {
            BackendKind::Toy => ActionBackend::Toy(ToyPolicy::with_prior(
                self.env.game,
                p.rule_weight,
                p.scene_weight,
            )),
            BackendKind::Remote => ActionBackend::Text(Box::new(HttpChatBackend::from_env(
                p.remote.model.clone(),
                Duration::from_secs(p.remote.timeout_secs),
                p.remote.retries,
            )?)),
            BackendKind::Fixture => ActionBackend::Text(Box::new(FixtureBackend::from_dir(
                p.fixture_dir.as_deref().expect("validated"),
            )?)),
            BackendKind::Scripted => {
                return Err(config_err("policy.backend = \"scripted\" is not supported"))
            }
        })
    }

    pub fn meta_backend(&self) -> Result<Box<dyn TextGenerator>> {
        let m = &self.metareason;
        Ok(match m.backend {
            BackendKind::Scripted => {
                let mut b = ScriptedBackend::new(m.script.clone());
                if let Some(f) = &m.fallback {
                    b = b.with_fallback(f.clone());
                }
                Box::new(b)
            }
            BackendKind::Remote => Box::new(HttpChatBackend::from_env(
                m.remote.model.clone(),
                Duration::from_secs(m.remote.timeout_secs),
                m.remote.retries,
            )?),
            BackendKind::Fixture => Box::new(FixtureBackend::from_dir(
                m.fixture_dir.as_deref().expect("validated"),
            )?),
            BackendKind::Toy => return Err(config_err("metareason.backend cannot be toy")),
        })
    }

    /// Policy-side random stream `stream` for this run.
    pub fn policy_rng(&self, stream: u64) -> PolicyRng {
        let mut rng = PolicyRng::seed_from_u64(self.seeds().policy);
        rng.set_stream(stream);
        rng
    }
}
