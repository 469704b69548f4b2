//! Synthetic teacher that closes the loop without a human: a hidden goal, an
//! attention policy standing in for the feedback condition, and
//! Boltzmann-rational corrections and prompt answers.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{self, Prompt};
use crate::model::{self, ActionVec, GoalId, Position, Scene, SimConfig, Vec3};

/// Confidence at which an overlay-watching teacher considers the robot taught.
pub const OVERLAY_SATISFIED: f64 = 0.8;

/// Rationality of the teacher's action choice; infinite means always optimal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rationality(f64);

impl Rationality {
    pub const RATIONAL: Rationality = Rationality(f64::INFINITY);

    pub fn boltzmann(beta: f64) -> Result<Self> {
        if beta >= 0.0 {
            Ok(Rationality(beta))
        } else {
            Err(Error::InvalidInput(format!(
                "rationality must be >= 0, got {beta}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_rational(self) -> bool {
        self.0.is_infinite()
    }
}

impl Serialize for Rationality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_rational() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Rationality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Rationality::boltzmann(v).map_err(serde::de::Error::custom),
            Repr::Word(w) if w == "inf" || w == "rational" => Ok(Rationality::RATIONAL),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("bad rationality `{w}`"))),
        }
    }
}

/// Attention policies mirroring the feedback conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionPolicy {
    /// Watches the robot continuously (GUI / AR analog).
    AlwaysAttending,
    /// Looks only when prompted (haptic analog).
    PromptDriven,
    /// Looks when prompted and leaves once the overlay shows the goal learned (AR+haptic analog).
    PromptDrivenWithOverlay,
}

impl AttentionPolicy {
    pub const ALL: [AttentionPolicy; 3] = [
        AttentionPolicy::AlwaysAttending,
        AttentionPolicy::PromptDriven,
        AttentionPolicy::PromptDrivenWithOverlay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionPolicy::AlwaysAttending => "always_attending",
            AttentionPolicy::PromptDriven => "prompt_driven",
            AttentionPolicy::PromptDrivenWithOverlay => "prompt_driven_with_overlay",
        }
    }
}

impl fmt::Display for AttentionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionPolicy {
    type Err = Error;

    /// Accepts the policy names and the short CLI condition names.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "always_attending" | "attending" => Ok(AttentionPolicy::AlwaysAttending),
            "prompt_driven" | "prompt" => Ok(AttentionPolicy::PromptDriven),
            "prompt_driven_with_overlay" | "prompt+overlay" => {
                Ok(AttentionPolicy::PromptDrivenWithOverlay)
            }
            other => Err(Error::InvalidInput(format!("unknown condition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherModel {
    pub goal_id: GoalId,
    pub rationality: Rationality,
    pub attention_policy: AttentionPolicy,
    /// Probability of answering a prompt.
    pub compliance: f64,
    pub attend_duration: u32,
    pub rng_seed: u64,
}

impl TeacherModel {
    pub fn new(
        goal_id: GoalId,
        rationality: Rationality,
        attention_policy: AttentionPolicy,
    ) -> Self {
        TeacherModel {
            goal_id,
            rationality,
            attention_policy,
            compliance: 1.0,
            attend_duration: 20,
            rng_seed: 0,
        }
    }

    pub fn validate(&self, scene: &Scene) -> Result<()> {
        if scene.goal(&self.goal_id).is_none() {
            return Err(Error::InvalidInput(format!(
                "teacher goal `{}` not in scene `{}`",
                self.goal_id, scene.name
            )));
        }
        if !(0.0..=1.0).contains(&self.compliance) {
            return Err(Error::InvalidInput("compliance must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttentionState {
    pub attending: bool,
    pub ticks_remaining: u32,
}

impl AttentionState {
    const AWAY: AttentionState = AttentionState {
        attending: false,
        ticks_remaining: 0,
    };

    pub fn initial(policy: AttentionPolicy) -> Self {
        AttentionState {
            attending: policy == AttentionPolicy::AlwaysAttending,
            ticks_remaining: 0,
        }
    }
}

/// What an attending teacher reads off the overlay about its own goal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayReading {
    /// Current belief in the teacher's goal.
    pub confidence: f64,
    /// Whether that goal is the robot's leading hypothesis.
    pub leading: bool,
}

/// Advances the teacher's attention by one tick.
///
/// A compliance draw is consumed on every fired prompt so the random stream
/// does not depend on the current attention state.
pub fn attention_step<R: Rng + ?Sized>(
    state: AttentionState,
    model: &TeacherModel,
    prompt_fired: bool,
    overlay: OverlayReading,
    rng: &mut R,
) -> AttentionState {
    if model.attention_policy == AttentionPolicy::AlwaysAttending {
        return AttentionState {
            attending: true,
            ticks_remaining: 0,
        };
    }
    let complied = prompt_fired && rng.random::<f64>() < model.compliance;
    let mut next = if complied && model.attend_duration > 0 {
        AttentionState {
            attending: true,
            ticks_remaining: model.attend_duration,
        }
    } else if state.attending {
        match state.ticks_remaining.saturating_sub(1) {
            0 => AttentionState::AWAY,
            left => AttentionState {
                attending: true,
                ticks_remaining: left,
            },
        }
    } else {
        AttentionState::AWAY
    };
    if model.attention_policy == AttentionPolicy::PromptDrivenWithOverlay
        && next.attending
        && overlay.leading
        && overlay.confidence >= OVERLAY_SATISFIED
    {
        next = AttentionState::AWAY;
    }
    next
}

/// The 26 unit directions of the `{-1, 0, 1}³` lattice, excluding the origin.
pub fn sphere_directions() -> Vec<Vec3> {
    let mut dirs = Vec::with_capacity(26);
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                if (i, j, k) != (0, 0, 0) {
                    dirs.push(Vec3::new(i as f64, j as f64, k as f64).normalized());
                }
            }
        }
    }
    dirs
}

/// Index sampled from unnormalized log-weights.
fn sample_log_weights<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> usize {
    let peak = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}

/// The teacher's joystick command this tick, or `None` while looking away.
///
/// Finite-rationality corrections pick one of [`sphere_directions`] at the
/// speed the optimal action would use, with probability proportional to
/// `exp(β_h·Q_{g*})`.
pub fn teacher_action<R: Rng + ?Sized>(
    s: Position,
    model: &TeacherModel,
    goal: Position,
    attn: AttentionState,
    active_prompt: Option<&Prompt>,
    cfg: &SimConfig,
    rng: &mut R,
) -> Option<ActionVec> {
    if !attn.attending {
        return None;
    }
    let beta_h = model.rationality.value();
    if let Some(u) = active_prompt {
        let human = SimConfig {
            beta: beta_h,
            ..cfg.clone()
        };
        let [p_first, _] = feedback::response_probs(u, s, goal, &human);
        let idx = if rng.random::<f64>() < p_first { 0 } else { 1 };
        return Some(u.responses[idx]);
    }
    let best = model::best_action(s, goal, cfg);
    if model.rationality.is_rational() {
        return Some(best);
    }
    let speed = best.norm();
    let candidates: Vec<Vec3> = sphere_directions().into_iter().map(|d| d * speed).collect();
    let log_w: Vec<f64> = candidates
        .iter()
        .map(|a| beta_h * model::q(s, *a, goal, cfg))
        .collect();
    Some(candidates[sample_log_weights(&log_w, rng)])
}

/// A teacher instance with its own random stream and attention state.
#[derive(Debug, Clone)]
pub struct SimTeacher {
    pub model: TeacherModel,
    goal: Position,
    attention: AttentionState,
    prompt: Option<(Prompt, u32)>,
    rng: ChaCha8Rng,
}

impl SimTeacher {
    pub fn new(model: TeacherModel, scene: &Scene) -> Result<Self> {
        model.validate(scene)?;
        let goal = scene.goal(&model.goal_id).expect("validated").point;
        Ok(SimTeacher {
            goal,
            attention: AttentionState::initial(model.attention_policy),
            prompt: None,
            rng: ChaCha8Rng::seed_from_u64(model.rng_seed),
            model,
        })
    }

    pub fn attention(&self) -> AttentionState {
        self.attention
    }

    /// Runs one tick of teacher behavior: observes any freshly fired prompt and
    /// the overlay, updates attention, and returns the command (if any).
    pub fn act(
        &mut self,
        s: Position,
        fired: Option<Prompt>,
        overlay: OverlayReading,
        cfg: &SimConfig,
    ) -> Option<ActionVec> {
        if let Some(u) = fired {
            let ticks = ((cfg.prompt_duration_ms as f64 / 1000.0) / cfg.dt)
                .ceil()
                .max(1.0) as u32;
            self.prompt = Some((u, ticks));
        }
        self.attention = attention_step(
            self.attention,
            &self.model,
            fired.is_some(),
            overlay,
            &mut self.rng,
        );
        let active = self.prompt.map(|(u, _)| u);
        let action = teacher_action(
            s,
            &self.model,
            self.goal,
            self.attention,
            active.as_ref(),
            cfg,
            &mut self.rng,
        );
        self.prompt = match self.prompt {
            Some((u, left)) if left > 1 => Some((u, left - 1)),
            _ => None,
        };
        action
    }
}
