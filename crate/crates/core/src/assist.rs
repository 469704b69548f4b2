//! Autonomous assistance under the current belief and linear arbitration with
//! the human command.

use crate::error::Result;
use crate::inference::Belief;
use crate::model::{self, ActionVec, Position, Scene, SimConfig, Vec3};

/// Belief-weighted mean of the goal points.
pub fn goal_centroid(b: &Belief, scene: &Scene) -> Position {
    b.probs()
        .iter()
        .zip(&scene.goals)
        .fold(Vec3::ZERO, |acc, (&p, g)| acc + g.point * p)
}

/// `argmax_a Σ_g b(g)·Q_g(s, a)` over the admissible action ball.
///
/// Because every `Q_g` is `-‖s + a·dt - g‖²`, the weighted sum equals
/// `-‖s + a·dt - c‖²` plus a constant, where `c` is the belief-weighted goal
/// centroid; the constrained maximizer is the clipped step toward `c`.
pub fn autonomous_action(s: Position, b: &Belief, scene: &Scene, cfg: &SimConfig) -> ActionVec {
    model::best_action(s, goal_centroid(b, scene), cfg)
}

/// Expected Q of action `a` under the belief: `Σ_g b(g)·Q_g(s, a)`.
pub fn expected_q(s: Position, a: ActionVec, b: &Belief, scene: &Scene, cfg: &SimConfig) -> f64 {
    b.probs()
        .iter()
        .zip(&scene.goals)
        .map(|(&p, g)| p * model::q(s, a, g.point, cfg))
        .sum()
}

/// `(1 - α)·a_h + α·a_r`, clipped to the action cap.
pub fn blend(a_h: ActionVec, a_r: ActionVec, cfg: &SimConfig) -> Result<ActionVec> {
    let mixed = if cfg.alpha == 0.0 {
        a_h
    } else if cfg.alpha == 1.0 {
        a_r
    } else {
        a_h * (1.0 - cfg.alpha) + a_r * cfg.alpha
    };
    model::clip_action(mixed, cfg.a_max)
}
