//! The action policy `pi(a | s, M)` behind one text-policy interface.
//!
//! The toy backend is a linear softmax over legal actions whose input is
//! the deterministic scene encoding of [`features`]; it renders each draw
//! as a tagged response so candidates travel through the same parser as a
//! remote model's output. Only [`ToyPolicy`] exposes parameters, so only it
//! can be trained.

mod features;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use features::{
    features, indicators, FeatureSchema, FeatureVector, Indicators, RulePattern, RULE_LEXICON,
};

use crate::backend::TextGenerator;
use crate::env::{ActionId, GameId, GameState};
use crate::error::{usage_err, Result};
use crate::memory::KnowledgeMemory;
use crate::protocol::{
    parse_action_response, render_action_prompt, serialize_action_response, ParseError,
    ParsedActionResponse,
};

/// Seeded stream for policy sampling.
pub type PolicyRng = rand_chacha::ChaCha8Rng;

/// Row-major `[action slot][feature]` weights over the game's legal actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(schema: &FeatureSchema) -> Self {
        PolicyParams {
            theta: vec![0.0; schema.dim() * schema.num_actions()],
            version: 0,
        }
    }

    /// Initial weights of an instruction-following agent with no game
    /// knowledge: every rule-match feature votes for its suggested actions
    /// with `rule_weight`, plus a weak generic scene prior of `scene_weight`.
    pub fn prior(schema: &FeatureSchema, rule_weight: f64, scene_weight: f64) -> Self {
        let mut p = PolicyParams::zeros(schema);
        let d = schema.dim();
        let mut bump = |action: ActionId, feature: &str, w: f64| {
            if let (Some(slot), Some(j)) = (schema.slot_of(action), schema.index_of(feature)) {
                p.theta[slot * d + j] += w;
            }
        };
        for pattern in &RULE_LEXICON {
            for &a in pattern.suggests {
                bump(a, pattern.name, rule_weight);
            }
        }
        match schema.game {
            GameId::Shooter | GameId::Collector => {
                bump(ActionId::LEFT, "focus_left", scene_weight);
                bump(ActionId::RIGHT, "focus_right", scene_weight);
                if schema.game == GameId::Collector {
                    bump(ActionId::UP, "coin_dy", -scene_weight);
                    bump(ActionId::DOWN, "coin_dy", scene_weight);
                }
            }
            GameId::Dodger => {
                bump(ActionId::LEFT, "danger_near", scene_weight);
                bump(ActionId::RIGHT, "danger_near", scene_weight);
            }
            GameId::Crossing => {
                bump(ActionId::UP, "lane_clear", scene_weight);
                bump(ActionId::NOOP, "danger_near", scene_weight);
            }
        }
        p
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &PolicyParams) -> f64 {
        self.theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }
}

fn check_dims(params: &PolicyParams, fv: &FeatureVector) -> Result<usize> {
    let d = fv.len();
    if d == 0 || !params.theta.len().is_multiple_of(d) {
        return Err(usage_err(format!(
            "parameter length {} is not a multiple of feature dim {d}",
            params.theta.len()
        )));
    }
    Ok(params.theta.len() / d)
}

/// `logit_a = <theta_a, fv>` for every legal action slot.
pub fn action_logits(params: &PolicyParams, fv: &FeatureVector) -> Result<Vec<f64>> {
    let d = fv.len();
    let m = check_dims(params, fv)?;
    Ok((0..m)
        .map(|a| {
            params.theta[a * d..(a + 1) * d]
                .iter()
                .zip(&fv.values)
                .map(|(w, x)| w * x)
                .sum()
        })
        .collect())
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `log softmax(logits / temperature)[slot]`.
pub fn log_softmax_at(logits: &[f64], slot: usize, temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    scaled[slot] - lse
}

/// Lowest slot among the maximal logits.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Log-probability of `slot` at temperature 1 and its exact gradient
/// `(onehot(slot) - pi) (x) fv`.
pub fn logprob_and_grad(
    params: &PolicyParams,
    fv: &FeatureVector,
    slot: usize,
) -> Result<(f64, Vec<f64>)> {
    logprob_and_grad_tempered(params, fv, slot, 1.0)
}

pub fn logprob_and_grad_tempered(
    params: &PolicyParams,
    fv: &FeatureVector,
    slot: usize,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let logits = action_logits(params, fv)?;
    if slot >= logits.len() {
        return Err(usage_err(format!(
            "action slot {slot} outside {} legal actions",
            logits.len()
        )));
    }
    let pi = softmax(&logits, temperature);
    let d = fv.len();
    let mut grad = vec![0.0; params.theta.len()];
    for (b, p) in pi.iter().enumerate() {
        let coef = (if b == slot { 1.0 } else { 0.0 } - p) / temperature;
        for (g, x) in grad[b * d..(b + 1) * d].iter_mut().zip(&fv.values) {
            *g = coef * x;
        }
    }
    Ok((log_softmax_at(&logits, slot, temperature), grad))
}

/// The trainable linear-softmax policy for one game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub schema: FeatureSchema,
    pub params: PolicyParams,
}

impl ToyPolicy {
    pub fn new(schema: FeatureSchema, params: PolicyParams) -> Result<Self> {
        if params.theta.len() != schema.dim() * schema.num_actions() {
            return Err(usage_err(format!(
                "expected {} parameters, got {}",
                schema.dim() * schema.num_actions(),
                params.theta.len()
            )));
        }
        Ok(ToyPolicy { schema, params })
    }

    pub fn with_prior(game: GameId, rule_weight: f64, scene_weight: f64) -> Self {
        let schema = FeatureSchema::for_game(game);
        let params = PolicyParams::prior(&schema, rule_weight, scene_weight);
        ToyPolicy { schema, params }
    }

    pub fn encode(&self, state: &GameState, memory: &KnowledgeMemory) -> FeatureVector {
        features::encode(&self.schema, state, memory)
    }

    pub fn probs(&self, fv: &FeatureVector, temperature: f64) -> Result<Vec<f64>> {
        Ok(softmax(&action_logits(&self.params, fv)?, temperature))
    }

    pub fn greedy(&self, fv: &FeatureVector) -> Result<ActionId> {
        let logits = action_logits(&self.params, fv)?;
        Ok(self.schema.legal[argmax(&logits)])
    }

    pub fn slot(&self, action: ActionId) -> Result<usize> {
        self.schema
            .slot_of(action)
            .ok_or_else(|| usage_err(format!("{action} is not legal in {}", self.schema.game)))
    }

    pub fn logprob(&self, fv: &FeatureVector, action: ActionId, temperature: f64) -> Result<f64> {
        let slot = self.slot(action)?;
        Ok(log_softmax_at(
            &action_logits(&self.params, fv)?,
            slot,
            temperature,
        ))
    }

    /// Draws `k` i.i.d. actions with their log-probabilities. A temperature
    /// of zero or below selects the argmax every time (log-prob 0).
    pub fn draw(
        &self,
        fv: &FeatureVector,
        k: usize,
        temperature: f64,
        rng: &mut PolicyRng,
    ) -> Result<Vec<(ActionId, f64)>> {
        let logits = action_logits(&self.params, fv)?;
        if temperature <= 0.0 {
            let a = self.schema.legal[argmax(&logits)];
            return Ok(vec![(a, 0.0); k]);
        }
        let pi = softmax(&logits, temperature);
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut slot = pi.len() - 1;
            for (i, p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    slot = i;
                    break;
                }
            }
            out.push((
                self.schema.legal[slot],
                log_softmax_at(&logits, slot, temperature),
            ));
        }
        Ok(out)
    }

    fn rationale(&self, state: &GameState, memory: &KnowledgeMemory) -> String {
        let ind = indicators(state.current(), self.schema.game);
        let mut facts = Vec::new();
        if ind.aligned {
            facts.push("an object of interest is in my column");
        }
        if ind.focus_left {
            facts.push("the nearest object of interest is to the left");
        }
        if ind.focus_right {
            facts.push("the nearest object of interest is to the right");
        }
        if ind.danger_near {
            facts.push("a hazard is close");
        }
        if ind.in_flight {
            facts.push("a projectile is in flight");
        }
        if facts.is_empty() {
            facts.push("nothing urgent is visible");
        }
        format!(
            "Scene: {}. Known rules: {}.",
            facts.join("; "),
            memory.len()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum CandidateError {
    Parse(ParseError),
    Transport(String),
}

/// One sampled response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub candidate_index: usize,
    pub text: String,
    pub parsed: std::result::Result<ParsedActionResponse, CandidateError>,
    pub action: Option<ActionId>,
    /// Present only for the toy backend.
    pub logprob: Option<f64>,
}

/// Where actions come from: the trainable toy policy or any text generator.
pub enum ActionBackend {
    Toy(ToyPolicy),
    Text(Box<dyn TextGenerator>),
}

impl ActionBackend {
    pub fn as_toy(&self) -> Option<&ToyPolicy> {
        match self {
            ActionBackend::Toy(p) => Some(p),
            ActionBackend::Text(_) => None,
        }
    }

    /// The trainable policy, or a usage error for text backends.
    pub fn trainable(&mut self) -> Result<&mut ToyPolicy> {
        match self {
            ActionBackend::Toy(p) => Ok(p),
            ActionBackend::Text(_) => Err(usage_err(
                "a remote text backend has no trainable parameters",
            )),
        }
    }
}

/// Samples `k` candidates for `state`, in candidate-index order.
pub fn sample_candidates(
    backend: &mut ActionBackend,
    state: &GameState,
    memory: &KnowledgeMemory,
    k: usize,
    temperature: f64,
    rng: &mut PolicyRng,
) -> Result<Vec<CandidateResponse>> {
    if k == 0 {
        return Err(usage_err("candidate count K must be >= 1"));
    }
    match backend {
        ActionBackend::Toy(policy) => {
            let fv = policy.encode(state, memory);
            toy_candidates(policy, state, memory, &fv, k, temperature, rng)
        }
        ActionBackend::Text(gen) => {
            let prompt = render_action_prompt(state, memory);
            Ok((0..k)
                .map(|i| match gen.generate(&prompt, temperature) {
                    Ok(text) => {
                        let parsed = parse_action_response(&text).map_err(CandidateError::Parse);
                        CandidateResponse {
                            candidate_index: i,
                            action: parsed.as_ref().ok().map(|p| p.action),
                            text,
                            parsed,
                            logprob: None,
                        }
                    }
                    Err(e) => CandidateResponse {
                        candidate_index: i,
                        text: String::new(),
                        parsed: Err(CandidateError::Transport(e.to_string())),
                        action: None,
                        logprob: None,
                    },
                })
                .collect())
        }
    }
}

/// Toy candidates for a precomputed feature vector.
pub fn toy_candidates(
    policy: &ToyPolicy,
    state: &GameState,
    memory: &KnowledgeMemory,
    fv: &FeatureVector,
    k: usize,
    temperature: f64,
    rng: &mut PolicyRng,
) -> Result<Vec<CandidateResponse>> {
    let think = policy.rationale(state, memory);
    let draws = policy.draw(fv, k, temperature, rng)?;
    Ok(draws
        .into_iter()
        .enumerate()
        .map(|(i, (a, lp))| {
            let text = serialize_action_response(&think, a);
            let parsed = parse_action_response(&text).map_err(CandidateError::Parse);
            CandidateResponse {
                candidate_index: i,
                action: parsed.as_ref().ok().map(|p| p.action),
                text,
                parsed,
                logprob: Some(lp),
            }
        })
        .collect())
}
