//! Bayesian goal inference from teleoperation inputs under a Boltzmann-rational
//! human model with the Laplace-approximated normalizer.

use std::fmt;
use std::sync::Arc;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{
    self, ActionVec, EventKind, Goal, GoalId, Position, Scene, ScriptedEvent, SimConfig,
};

/// Probability distribution over a scene's goals, stored in scene order.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    ids: Arc<[GoalId]>,
    probs: Vec<f64>,
}

impl Belief {
    /// Builds a belief from explicit `(id, probability)` pairs, normalizing them.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (GoalId, f64)>) -> Result<Self> {
        let (ids, probs): (Vec<GoalId>, Vec<f64>) = pairs.into_iter().unzip();
        if ids.is_empty() {
            return Err(Error::InvalidInput("belief over an empty goal set".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "belief entries must be finite and >= 0".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("belief has zero total mass".into()));
        }
        Ok(Belief {
            ids: ids.into(),
            probs: probs.into_iter().map(|p| p / total).collect(),
        })
    }

    pub fn ids(&self) -> &[GoalId] {
        &self.ids
    }

    /// Probabilities aligned with [`Belief::ids`].
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: &GoalId) -> Option<f64> {
        self.ids.iter().position(|g| g == id).map(|i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GoalId, f64)> {
        self.ids.iter().zip(self.probs.iter().copied())
    }

    /// Index and probability of the most likely goal (first on ties).
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, self.probs[0]);
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        self.argmax().1
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.probs.len() as f64;
        self.probs.iter().all(|&p| p == u)
    }

    fn matches(&self, scene: &Scene) -> bool {
        self.ids.len() == scene.goals.len()
            && self.ids.iter().zip(&scene.goals).all(|(id, g)| *id == g.id)
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        if self.matches(scene) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "belief keys do not match goals of scene `{}`",
                scene.name
            )))
        }
    }

    fn with_probs(&self, probs: Vec<f64>) -> Belief {
        Belief {
            ids: Arc::clone(&self.ids),
            probs,
        }
    }
}

impl Serialize for Belief {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.probs.len()))?;
        for (id, p) in self.iter() {
            map.serialize_entry(id, &p)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Belief {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct OrderedMap;

        impl<'de> Visitor<'de> for OrderedMap {
            type Value = Belief;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of goal id to probability")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<Belief, A::Error> {
                let mut ids = Vec::new();
                let mut probs = Vec::new();
                while let Some((id, p)) = access.next_entry::<GoalId, f64>()? {
                    ids.push(id);
                    probs.push(p);
                }
                if ids.is_empty() {
                    return Err(serde::de::Error::custom("empty belief"));
                }
                // Stored values are kept verbatim so snapshots compare bit-for-bit.
                Ok(Belief {
                    ids: ids.into(),
                    probs,
                })
            }
        }

        d.deserialize_map(OrderedMap)
    }
}

/// Equal mass on every goal of the scene.
pub fn uniform_belief(scene: &Scene) -> Result<Belief> {
    if scene.goals.is_empty() {
        return Err(Error::InvalidInput("scene has no goals".into()));
    }
    let p = 1.0 / scene.goals.len() as f64;
    Ok(Belief {
        ids: scene.goal_ids().into(),
        probs: vec![p; scene.goals.len()],
    })
}

/// `Q_g(s, a_h) − Q_g(s, a_g)`, never positive.
fn optimality_gap(a_h: ActionVec, s: Position, goal: Position, cfg: &SimConfig) -> f64 {
    let best = model::best_action(s, goal, cfg);
    // Analytically <= 0; rounding can leave a positive residue of a few ulps.
    (model::q(s, a_h, goal, cfg) - model::q(s, best, goal, cfg)).min(0.0)
}

/// `β·(Q_g(s, a_h) − Q_g(s, a_g))`, the log of the Laplace-approximated likelihood.
pub fn log_likelihood(a_h: ActionVec, s: Position, goal: Position, cfg: &SimConfig) -> f64 {
    let gap = optimality_gap(a_h, s, goal, cfg);
    if gap == 0.0 {
        0.0
    } else {
        cfg.beta * gap
    }
}

/// Boltzmann-rational likelihood of `a_h` for goal `g`, normalized by its value
/// at the optimal action. Always in `(0, 1]`.
pub fn likelihood(a_h: ActionVec, s: Position, goal: &Goal, cfg: &SimConfig) -> Result<f64> {
    if !a_h.is_finite() || !s.is_finite() {
        return Err(Error::InvalidInput("non-finite state or action".into()));
    }
    Ok(log_likelihood(a_h, s, goal.point, cfg).exp())
}

/// Raises entries below `floor` to exactly `floor`, taking the mass from the
/// remaining entries proportionally. Entries already at the floor stay put, so
/// a fixed point of the update is not perturbed.
fn apply_floor(probs: &mut [f64], floor: f64) {
    if floor <= 0.0 || floor * probs.len() as f64 >= 1.0 {
        return;
    }
    let mut floored = vec![false; probs.len()];
    loop {
        let mut changed = false;
        for (p, f) in probs.iter_mut().zip(floored.iter_mut()) {
            if !*f && *p < floor {
                *f = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let n_floored = floored.iter().filter(|f| **f).count();
        let free_mass: f64 = probs
            .iter()
            .zip(&floored)
            .filter(|(_, f)| !**f)
            .map(|(p, _)| *p)
            .sum();
        let scale = (1.0 - n_floored as f64 * floor) / free_mass;
        for (p, f) in probs.iter_mut().zip(&floored) {
            *p = if *f { floor } else { *p * scale };
        }
    }
}

/// Posterior after observing human action `a_h` at state `s`.
///
/// Inputs at or below the deadzone leave the belief unchanged. The robot's own
/// assistance never enters the update.
pub fn update_belief(
    b: &Belief,
    scene: &Scene,
    s: Position,
    a_h: ActionVec,
    cfg: &SimConfig,
) -> Result<Belief> {
    b.check_scene(scene)?;
    if !a_h.is_finite() || !s.is_finite() {
        return Err(Error::InvalidInput("non-finite state or action".into()));
    }
    if a_h.norm() <= cfg.deadzone {
        return Ok(b.clone());
    }
    let log_post: Vec<f64> = if cfg.beta.is_infinite() {
        // Limit of the Boltzmann posterior as β grows: all mass goes to the
        // goals under which a_h is least suboptimal, even if none explains it
        // exactly.
        let gaps: Vec<f64> = scene
            .goals
            .iter()
            .map(|g| optimality_gap(a_h, s, g.point, cfg))
            .collect();
        let best = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        b.probs
            .iter()
            .zip(&gaps)
            .map(|(&p, &gap)| {
                if gap == best {
                    p.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    } else {
        b.probs
            .iter()
            .zip(&scene.goals)
            .map(|(&p, g)| p.ln() + log_likelihood(a_h, s, g.point, cfg))
            .collect()
    };
    let peak = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        // Only goals the belief has already ruled out could explain a_h.
        return Ok(b.clone());
    }
    let mut probs: Vec<f64> = log_post.iter().map(|lp| (lp - peak).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    apply_floor(&mut probs, cfg.belief_floor);
    Ok(b.with_probs(probs))
}

/// Applies a scripted scene event to the belief.
pub fn apply_event(b: &Belief, scene: &Scene, event: &ScriptedEvent) -> Result<Belief> {
    b.check_scene(scene)?;
    match event.kind {
        EventKind::BeliefReset => uniform_belief(scene),
    }
}

/// Ordered human inputs `(tick, state, action)` with strictly increasing ticks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputTrace {
    entries: Vec<(u64, Position, ActionVec)>,
}

impl InputTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tick: u64, s: Position, a_h: ActionVec) -> Result<()> {
        if let Some((last, _, _)) = self.entries.last() {
            if tick <= *last {
                return Err(Error::Contract(format!(
                    "input trace ticks must increase: {tick} after {last}"
                )));
            }
        }
        self.entries.push((tick, s, a_h));
        Ok(())
    }

    pub fn entries(&self) -> &[(u64, Position, ActionVec)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Folds every input of the trace into `prior`.
    pub fn posterior(&self, prior: &Belief, scene: &Scene, cfg: &SimConfig) -> Result<Belief> {
        self.entries.iter().try_fold(prior.clone(), |b, (_, s, a)| {
            update_belief(&b, scene, *s, *a, cfg)
        })
    }
}
