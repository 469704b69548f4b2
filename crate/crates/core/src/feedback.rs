//! When to ask for help, which directional prompt to issue, and how the
//! belief is painted onto the passive trajectory overlay.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assist::autonomous_action;
use crate::error::{Error, Result};
use crate::inference::Belief;
use crate::model::{self, ActionVec, Goal, GoalId, Position, Scene, SimConfig, Vec3};

/// Gains within this many bits of the best are considered tied.
pub const INFO_GAIN_TIE_BITS: f64 = 1e-6;

/// Beliefs below this value render fully transparent.
pub const ALPHA_CUTOFF: f64 = 0.02;

pub const GRAY: Rgb = Rgb(0x80, 0x80, 0x80);
pub const ORANGE: Rgb = Rgb(0xFF, 0x8C, 0x00);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptId {
    #[serde(rename = "u_x")]
    X,
    #[serde(rename = "u_y")]
    Y,
    #[serde(rename = "u_z")]
    Z,
}

impl PromptId {
    /// Fixed tie-break order.
    pub const ALL: [PromptId; 3] = [PromptId::X, PromptId::Y, PromptId::Z];

    pub fn axis(self) -> Vec3 {
        match self {
            PromptId::X => Vec3::new(1.0, 0.0, 0.0),
            PromptId::Y => Vec3::new(0.0, 1.0, 0.0),
            PromptId::Z => Vec3::new(0.0, 0.0, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::X => "u_x",
            PromptId::Y => "u_y",
            PromptId::Z => "u_z",
        }
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A two-direction query: the human is invited to push along `+axis` or `-axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prompt {
    pub id: PromptId,
    pub responses: [ActionVec; 2],
}

impl Prompt {
    pub fn new(id: PromptId, a_max: f64) -> Self {
        let axis = id.axis() * a_max;
        Prompt {
            id,
            responses: [axis, -axis],
        }
    }

    pub fn all(a_max: f64) -> [Prompt; 3] {
        PromptId::ALL.map(|id| Prompt::new(id, a_max))
    }

    /// Index of `a` in the response pair, if it is one of them.
    pub fn response_index(&self, a: ActionVec) -> Option<usize> {
        self.responses
            .iter()
            .position(|r| (*r - a).norm() <= 1e-12 * r.norm().max(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    AlternateTopBottom,
    AlternateLeftRight,
    Circular,
}

impl PatternKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::AlternateTopBottom => "alternate_top_bottom",
            PatternKind::AlternateLeftRight => "alternate_left_right",
            PatternKind::Circular => "circular",
        }
    }
}

/// Abstract haptic cue: squeeze flag plus a vibrotactor pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPattern {
    pub squeeze: bool,
    pub pattern: PatternKind,
    pub duration_ms: u32,
}

impl PromptPattern {
    pub fn new(pattern: PatternKind, duration_ms: u32) -> Result<Self> {
        if !(100..=5000).contains(&duration_ms) {
            return Err(Error::InvalidInput(format!(
                "prompt duration {duration_ms} ms outside [100, 5000]"
            )));
        }
        Ok(PromptPattern {
            squeeze: true,
            pattern,
            duration_ms,
        })
    }
}

/// Debounce state for active prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptArmState {
    pub armed: bool,
    pub cooldown_remaining: u32,
}

impl Default for PromptArmState {
    fn default() -> Self {
        PromptArmState {
            armed: true,
            cooldown_remaining: 0,
        }
    }
}

/// 8-bit RGB color, serialized as `#RRGGBB`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub fn lerp(self, other: Rgb, t: f64) -> Rgb {
        let t = t.clamp(0.0, 1.0);
        let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
        Rgb(
            mix(self.0, other.0),
            mix(self.1, other.1),
            mix(self.2, other.2),
        )
    }

    pub fn hex(self) -> String {
        format!("#{:02X}{:02X}{:02X}", self.0, self.1, self.2)
    }

    pub fn parse_hex(s: &str) -> Option<Rgb> {
        let s = s.strip_prefix('#')?;
        if s.len() != 6 {
            return None;
        }
        let byte = |i: usize| u8::from_str_radix(&s[i..i + 2], 16).ok();
        Some(Rgb(byte(0)?, byte(2)?, byte(4)?))
    }
}

impl Serialize for Rgb {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.hex())
    }
}

impl<'de> Deserialize<'de> for Rgb {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Rgb::parse_hex(&s).ok_or_else(|| serde::de::Error::custom(format!("bad color `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Position,
    /// Unit direction of travel at this waypoint (zero when already at the goal).
    pub arrow: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTrajectory {
    pub goal_id: GoalId,
    pub waypoints: Vec<Waypoint>,
    pub color: Rgb,
    pub alpha: f64,
}

/// Per-goal straight-line trajectories shaded by belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualOverlay {
    pub trajectories: Vec<GoalTrajectory>,
}

impl VisualOverlay {
    pub fn alphas(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.alpha).collect()
    }
}

/// Expected optimality loss of the assistive action:
/// `Σ_g b(g)·(Q_g(s, a_g) − Q_g(s, a_r))`.
pub fn criticality(s: Position, b: &Belief, scene: &Scene, cfg: &SimConfig) -> f64 {
    let a_r = autonomous_action(s, b, scene, cfg);
    b.probs()
        .iter()
        .zip(&scene.goals)
        .map(|(&p, g)| {
            let best = model::best_action(s, g.point, cfg);
            let gap = model::q(s, best, g.point, cfg) - model::q(s, a_r, g.point, cfg);
            p * gap.max(0.0)
        })
        .sum()
}

/// Threshold rule with hysteresis and cooldown. Returns whether a prompt fires
/// this tick and the next arm state.
pub fn should_prompt(c: f64, arm: PromptArmState, cfg: &SimConfig) -> (bool, PromptArmState) {
    if c > cfg.sigma && arm.armed && arm.cooldown_remaining == 0 {
        return (
            true,
            PromptArmState {
                armed: false,
                cooldown_remaining: cfg.cooldown_ticks,
            },
        );
    }
    let next = PromptArmState {
        armed: arm.armed || c < cfg.sigma / 2.0,
        cooldown_remaining: arm.cooldown_remaining.saturating_sub(1),
    };
    (false, next)
}

/// Probabilities of the two responses of `u` for goal `g` (softmax of `β·Q_g`).
pub fn response_probs(u: &Prompt, s: Position, goal: Position, cfg: &SimConfig) -> [f64; 2] {
    let q0 = model::q(s, u.responses[0], goal, cfg);
    let q1 = model::q(s, u.responses[1], goal, cfg);
    let diff = q1 - q0;
    if diff == 0.0 {
        return [0.5, 0.5];
    }
    // p0 = 1 / (1 + e^{β(q1 - q0)}), evaluated without overflow.
    let x = cfg.beta * diff;
    let p0 = if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    };
    [p0, 1.0 - p0]
}

/// Likelihood that a compliant human answers prompt `u` with `a_h` under goal `g`.
pub fn prompt_response_likelihood(
    a_h: ActionVec,
    u: &Prompt,
    s: Position,
    goal: &Goal,
    cfg: &SimConfig,
) -> Result<f64> {
    let idx = u.response_index(a_h).ok_or_else(|| {
        Error::Contract(format!("action {a_h} is not a response of prompt {}", u.id))
    })?;
    Ok(response_probs(u, s, goal.point, cfg)[idx])
}

/// Mutual information, in bits, between the goal and the human's response to `u`.
pub fn expected_info_gain(
    u: &Prompt,
    s: Position,
    b: &Belief,
    scene: &Scene,
    cfg: &SimConfig,
) -> f64 {
    let likelihoods: Vec<[f64; 2]> = scene
        .goals
        .iter()
        .map(|g| response_probs(u, s, g.point, cfg))
        .collect();
    let mut info = 0.0;
    for r in 0..2 {
        let marginal: f64 = b
            .probs()
            .iter()
            .zip(&likelihoods)
            .map(|(&p, l)| p * l[r])
            .sum();
        for (&p, l) in b.probs().iter().zip(&likelihoods) {
            let joint = p * l[r];
            if joint > 0.0 {
                info += joint * (l[r] / marginal).log2();
            }
        }
    }
    info.max(0.0)
}

/// Greedy information-gain prompt choice with the fixed `x < y < z` tie order.
pub fn select_prompt(
    s: Position,
    b: &Belief,
    scene: &Scene,
    cfg: &SimConfig,
) -> (Prompt, PromptPattern) {
    let prompts = Prompt::all(cfg.a_max);
    let gains = prompts.map(|u| expected_info_gain(&u, s, b, scene, cfg));
    let (winner, tied) = pick_with_ties(&gains, INFO_GAIN_TIE_BITS);
    let pattern = if tied {
        PatternKind::Circular
    } else {
        match prompts[winner].id {
            PromptId::X => PatternKind::AlternateLeftRight,
            PromptId::Y => PatternKind::Circular,
            PromptId::Z => PatternKind::AlternateTopBottom,
        }
    };
    let pattern = PromptPattern {
        squeeze: true,
        pattern,
        duration_ms: cfg.prompt_duration_ms,
    };
    (prompts[winner], pattern)
}

/// Index of the first value within `tol` of the maximum, and whether any other
/// value is also within `tol`.
pub fn pick_with_ties(values: &[f64], tol: f64) -> (usize, bool) {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut near = values.iter().enumerate().filter(|(_, v)| best - **v <= tol);
    let (first, _) = near.next().expect("non-empty values");
    (first, near.next().is_some())
}

/// Opacity of a goal's trajectory given its belief and the current maximum.
pub fn overlay_alpha(p: f64, max_p: f64) -> f64 {
    if p < ALPHA_CUTOFF || max_p <= 0.0 {
        0.0
    } else {
        (p / max_p).min(1.0)
    }
}

pub fn overlay_color(p: f64) -> Rgb {
    GRAY.lerp(ORANGE, p)
}

/// Straight-line trajectories from the end-effector to every goal, colored and
/// faded by belief.
pub fn visual_overlay(s: Position, b: &Belief, scene: &Scene, cfg: &SimConfig) -> VisualOverlay {
    let n = cfg.overlay_waypoints.max(2);
    let max_p = b.max_prob();
    let trajectories = b
        .probs()
        .iter()
        .zip(&scene.goals)
        .map(|(&p, g)| {
            let arrow = (g.point - s).normalized();
            let waypoints = (0..n)
                .map(|i| {
                    let position = if i == 0 {
                        s
                    } else if i == n - 1 {
                        g.point
                    } else {
                        s.lerp(g.point, i as f64 / (n - 1) as f64)
                    };
                    Waypoint { position, arrow }
                })
                .collect();
            GoalTrajectory {
                goal_id: g.id.clone(),
                waypoints,
                color: overlay_color(p),
                alpha: overlay_alpha(p, max_p),
            }
        })
        .collect();
    VisualOverlay { trajectories }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::uniform_belief;

    fn scene(points: &[(&str, [f64; 3])]) -> Scene {
        Scene::new(
            "t",
            Vec3::ZERO,
            points
                .iter()
                .map(|(id, p)| Goal::new(id, (*p).into()))
                .collect(),
        )
        .unwrap()
    }

    fn unit_dt() -> SimConfig {
        SimConfig {
            dt: 1.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn criticality_examples() {
        let cfg = unit_dt();
        let sc = scene(&[("a", [1.0, 0.0, 0.0]), ("b", [-1.0, 0.0, 0.0])]);
        let uniform = uniform_belief(&sc).unwrap();
        let degenerate = Belief::from_pairs([("a".into(), 1.0), ("b".into(), 0.0)]).unwrap();
        assert_eq!(
            criticality(Vec3::new(0.3, 0.2, 0.0), &degenerate, &sc, &cfg),
            0.0
        );
        assert!((criticality(Vec3::ZERO, &uniform, &sc, &cfg) - 1.0).abs() < 1e-12);
        let far = criticality(Vec3::new(0.0, 5.0, 0.0), &uniform, &sc, &cfg);
        // Hand evaluation: 2·√26 − 10 ≈ 0.198.
        assert!((far - (2.0 * 26f64.sqrt() - 10.0)).abs() < 1e-12, "{far}");
        assert!(far < 1.0);
    }

    #[test]
    fn should_prompt_examples() {
        let cfg = SimConfig::default();
        let fresh = PromptArmState::default();
        assert!(!should_prompt(0.0, fresh, &cfg).0);

        let (fired, after) = should_prompt(2.0 * cfg.sigma, fresh, &cfg);
        assert!(fired);
        assert!(!after.armed);
        assert_eq!(after.cooldown_remaining, cfg.cooldown_ticks);

        // Held high: never re-fires even once the cooldown has expired.
        let mut arm = after;
        for _ in 0..(2 * cfg.cooldown_ticks) {
            let (fired, next) = should_prompt(2.0 * cfg.sigma, arm, &cfg);
            assert!(!fired);
            arm = next;
        }
        assert_eq!(arm.cooldown_remaining, 0);
        // Dip below σ/2 re-arms.
        let (fired, arm) = should_prompt(0.4 * cfg.sigma, arm, &cfg);
        assert!(!fired && arm.armed);
        assert!(should_prompt(2.0 * cfg.sigma, arm, &cfg).0);
    }

    #[test]
    fn rearmed_but_cooling_down_does_not_fire() {
        let cfg = SimConfig::default();
        let (_, arm) = should_prompt(1.0, PromptArmState::default(), &cfg);
        let (fired, arm) = should_prompt(0.0, arm, &cfg);
        assert!(!fired && arm.armed && arm.cooldown_remaining > 0);
        assert!(!should_prompt(1.0, arm, &cfg).0);
    }

    #[test]
    fn response_likelihood_examples() {
        let cfg = unit_dt();
        let sc = scene(&[("up", [0.0, 0.0, 1.0])]);
        let uz = Prompt::new(PromptId::Z, cfg.a_max);
        let up = prompt_response_likelihood(uz.responses[0], &uz, Vec3::ZERO, &sc.goals[0], &cfg)
            .unwrap();
        assert!((up - 1.0 / (1.0 + (-0.4f64).exp())).abs() < 1e-12);
        assert!((up - 0.5987).abs() < 1e-4);

        let ux = Prompt::new(PromptId::X, cfg.a_max);
        let p = prompt_response_likelihood(ux.responses[1], &ux, Vec3::ZERO, &sc.goals[0], &cfg)
            .unwrap();
        assert_eq!(p, 0.5);

        let rational = SimConfig {
            beta: f64::INFINITY,
            ..cfg.clone()
        };
        assert_eq!(
            prompt_response_likelihood(uz.responses[0], &uz, Vec3::ZERO, &sc.goals[0], &rational)
                .unwrap(),
            1.0
        );

        let err = prompt_response_likelihood(
            Vec3::new(1.0, 0.0, 0.0),
            &uz,
            Vec3::ZERO,
            &sc.goals[0],
            &cfg,
        );
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn info_gain_examples() {
        let cfg = SimConfig::default();
        let sc = scene(&[("up", [0.0, 0.0, 1.0]), ("down", [0.0, 0.0, -1.0])]);
        let b = uniform_belief(&sc).unwrap();
        let [ux, _, uz] = Prompt::all(cfg.a_max);
        assert!(expected_info_gain(&ux, Vec3::ZERO, &b, &sc, &cfg).abs() < 1e-12);

        // The worked value uses unit dt, matching the response-likelihood example.
        let cfg1 = unit_dt();
        let i = expected_info_gain(&uz, Vec3::ZERO, &b, &sc, &cfg1);
        assert!((i - 0.0283).abs() < 1e-4, "{i}");

        let degenerate = Belief::from_pairs([("up".into(), 1.0), ("down".into(), 0.0)]).unwrap();
        for u in Prompt::all(cfg.a_max) {
            assert_eq!(
                expected_info_gain(&u, Vec3::ZERO, &degenerate, &sc, &cfg1),
                0.0
            );
        }
    }

    #[test]
    fn select_prompt_examples() {
        let cfg = unit_dt();
        let z = scene(&[("up", [0.0, 0.0, 1.0]), ("down", [0.0, 0.0, -1.0])]);
        let (u, pat) = select_prompt(Vec3::ZERO, &uniform_belief(&z).unwrap(), &z, &cfg);
        assert_eq!(u.id, PromptId::Z);
        assert_eq!(pat.pattern, PatternKind::AlternateTopBottom);
        assert!(pat.squeeze);

        let x = scene(&[("l", [-1.0, 0.0, 0.0]), ("r", [1.0, 0.0, 0.0])]);
        let (u, pat) = select_prompt(Vec3::ZERO, &uniform_belief(&x).unwrap(), &x, &cfg);
        assert_eq!(u.id, PromptId::X);
        assert_eq!(pat.pattern, PatternKind::AlternateLeftRight);

        let quad = scene(&[
            ("pp", [1.0, 1.0, 0.0]),
            ("pm", [1.0, -1.0, 0.0]),
            ("mp", [-1.0, 1.0, 0.0]),
            ("mm", [-1.0, -1.0, 0.0]),
        ]);
        let b = uniform_belief(&quad).unwrap();
        let [ux, uy, _] = Prompt::all(cfg.a_max);
        let ix = expected_info_gain(&ux, Vec3::ZERO, &b, &quad, &cfg);
        let iy = expected_info_gain(&uy, Vec3::ZERO, &b, &quad, &cfg);
        assert!((ix - iy).abs() < INFO_GAIN_TIE_BITS);
        let (u, pat) = select_prompt(Vec3::ZERO, &b, &quad, &cfg);
        assert_eq!(u.id, PromptId::X);
        assert_eq!(pat.pattern, PatternKind::Circular);
    }

    #[test]
    fn overlay_examples() {
        let cfg = SimConfig::default();
        let sc = scene(&[
            ("a", [1.0, 0.0, 0.0]),
            ("b", [0.0, 1.0, 0.0]),
            ("c", [0.0, 0.0, 1.0]),
            ("d", [1.0, 1.0, 1.0]),
        ]);
        let s = Vec3::new(0.1, 0.2, 0.3);
        let sharp =
            Belief::from_pairs(sc.goal_ids().into_iter().zip([1.0, 0.0, 0.0, 0.0])).unwrap();
        let ov = visual_overlay(s, &sharp, &sc, &cfg);
        assert_eq!(ov.trajectories[0].alpha, 1.0);
        assert_eq!(ov.trajectories[0].color.hex(), "#FF8C00");
        assert_eq!(ov.trajectories[1].alpha, 0.0);

        let uniform = uniform_belief(&sc).unwrap();
        let ov = visual_overlay(s, &uniform, &sc, &cfg);
        for t in &ov.trajectories {
            assert_eq!(t.alpha, 1.0);
            assert_eq!(t.color, GRAY.lerp(ORANGE, 0.25));
            assert_eq!(t.waypoints.len(), cfg.overlay_waypoints);
            assert_eq!(t.waypoints[0].position, s);
        }
        assert_eq!(
            ov.trajectories[3].waypoints.last().unwrap().position,
            sc.goals[3].point
        );
        assert_eq!(GRAY.lerp(ORANGE, 0.25).hex(), "#A08360");
    }

    #[test]
    fn rgb_hex_roundtrip() {
        for c in [GRAY, ORANGE, Rgb(1, 2, 3)] {
            assert_eq!(Rgb::parse_hex(&c.hex()), Some(c));
        }
        assert_eq!(Rgb::parse_hex("FF8C00"), None);
    }

    #[test]
    fn pattern_duration_bounds() {
        assert!(PromptPattern::new(PatternKind::Circular, 99).is_err());
        assert!(PromptPattern::new(PatternKind::Circular, 5001).is_err());
        assert!(PromptPattern::new(PatternKind::Circular, 100).is_ok());
    }
}
