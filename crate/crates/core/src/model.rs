//! Workspace geometry, single-integrator dynamics, and the closed-form
//! goal-conditioned Q-function every other module builds on.

use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or vector in workspace coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// End-effector position, meters.
pub type Position = Vec3;
/// Commanded end-effector velocity, meters per second.
pub type ActionVec = Vec3;

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector in the same direction, or zero for the zero vector.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec3::ZERO
        }
    }

    pub fn lerp(self, other: Vec3, t: f64) -> Vec3 {
        self + (other - self) * t
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Goal identifier, unique within a scene.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoalId(pub String);

impl GoalId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GoalId {
    fn from(s: &str) -> Self {
        GoalId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: GoalId,
    pub point: Position,
    #[serde(default)]
    pub label: String,
    /// Rendering-only metadata (e.g. object orientation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoration: Option<serde_json::Value>,
}

impl Goal {
    pub fn new(id: &str, point: Position) -> Self {
        Goal {
            id: GoalId::from(id),
            point,
            label: String::new(),
            decoration: None,
        }
    }
}

/// Render-only obstacle geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Box { center: Position, size: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    BeliefReset,
}

/// Time-indexed scene event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEvent {
    pub t: f64,
    pub kind: EventKind,
}

impl ScriptedEvent {
    /// The tick at which this event fires for a given tick period.
    pub fn tick(&self, dt: f64) -> u64 {
        (self.t / dt - 1e-9).ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    pub version: u32,
    pub name: String,
    pub start: Position,
    pub goals: Vec<Goal>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub events: Vec<ScriptedEvent>,
}

pub const SCENE_VERSION: u32 = 1;

const BUNDLED_SCENES: &[(&str, &str)] = &[
    ("placing", include_str!("../scenes/placing.json")),
    ("avoiding", include_str!("../scenes/avoiding.json")),
    ("sorting", include_str!("../scenes/sorting.json")),
    ("forgetting", include_str!("../scenes/forgetting.json")),
];

impl Scene {
    /// Builds a scene from parts, applying the same validation as file loading.
    pub fn new(name: &str, start: Position, goals: Vec<Goal>) -> Result<Self> {
        let scene = Scene {
            version: SCENE_VERSION,
            name: name.to_owned(),
            start,
            goals,
            obstacles: Vec::new(),
            events: Vec::new(),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn with_events(mut self, events: Vec<ScriptedEvent>) -> Result<Self> {
        self.events = events;
        self.normalize_events();
        self.validate()?;
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawScene = serde_json::from_str(text)?;
        raw.into_scene()
    }

    /// One of the bundled task scenes: `placing`, `avoiding`, `sorting`, `forgetting`.
    pub fn bundled(name: &str) -> Option<Scene> {
        BUNDLED_SCENES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Scene::from_json(text).expect("bundled scene is valid"))
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED_SCENES.iter().map(|(n, _)| *n)
    }

    /// Resolves a bundled scene name, falling back to a file path.
    pub fn resolve(name_or_path: &str) -> Result<Scene> {
        match Scene::bundled(name_or_path) {
            Some(scene) => Ok(scene),
            None => load_scene(name_or_path),
        }
    }

    pub fn goal_index(&self, id: &GoalId) -> Option<usize> {
        self.goals.iter().position(|g| &g.id == id)
    }

    pub fn goal(&self, id: &GoalId) -> Option<&Goal> {
        self.goals.iter().find(|g| &g.id == id)
    }

    pub fn goal_ids(&self) -> Vec<GoalId> {
        self.goals.iter().map(|g| g.id.clone()).collect()
    }

    fn normalize_events(&mut self) {
        self.events.sort_by(|a, b| a.t.total_cmp(&b.t));
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENE_VERSION {
            return Err(Error::schema(
                "version",
                format!("unsupported version {}", self.version),
            ));
        }
        if !self.start.is_finite() {
            return Err(Error::schema("start", "non-finite coordinate"));
        }
        if self.goals.is_empty() {
            return Err(Error::schema("goals", "at least one goal is required"));
        }
        let mut seen = HashSet::new();
        for (i, g) in self.goals.iter().enumerate() {
            if g.id.0.is_empty() {
                return Err(Error::schema(format!("goals[{i}].id"), "empty goal id"));
            }
            if !seen.insert(&g.id) {
                return Err(Error::schema(
                    format!("goals[{i}].id"),
                    format!("duplicate goal id `{}`", g.id),
                ));
            }
            if !g.point.is_finite() {
                return Err(Error::schema(
                    format!("goals[{i}].point"),
                    "non-finite coordinate",
                ));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let Obstacle::Box { center, size } = o;
            if !center.is_finite() || !size.is_finite() {
                return Err(Error::schema(
                    format!("obstacles[{i}]"),
                    "non-finite coordinate",
                ));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(Error::schema(
                    format!("events[{i}].t"),
                    "event time must be finite and non-negative",
                ));
            }
            if i > 0 && self.events[i - 1].t > e.t {
                return Err(Error::schema("events", "events not sorted by time"));
            }
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for Scene {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        RawScene::deserialize(d)?
            .into_scene()
            .map_err(serde::de::Error::custom)
    }
}

/// Untyped scene as it appears on disk, before validation.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    version: u32,
    name: String,
    start: [f64; 3],
    goals: Vec<Goal>,
    #[serde(default)]
    obstacles: Vec<Obstacle>,
    #[serde(default)]
    events: Vec<RawEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    t: f64,
    kind: String,
}

impl RawScene {
    fn into_scene(self) -> Result<Scene> {
        let mut events = Vec::with_capacity(self.events.len());
        for (i, e) in self.events.into_iter().enumerate() {
            let kind = match e.kind.as_str() {
                "belief_reset" => EventKind::BeliefReset,
                other => {
                    return Err(Error::schema(
                        format!("events[{i}].kind"),
                        format!("unknown event kind `{other}`"),
                    ))
                }
            };
            events.push(ScriptedEvent { t: e.t, kind });
        }
        let mut scene = Scene {
            version: self.version,
            name: self.name,
            start: self.start.into(),
            goals: self.goals,
            obstacles: self.obstacles,
            events,
        };
        scene.normalize_events();
        scene.validate()?;
        Ok(scene)
    }
}

/// Loads and validates a scene file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Scene::from_json(&text)
}

/// Engine parameters shared by every component of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Arbitration weight on the robot's action.
    pub alpha: f64,
    /// Boltzmann rationality assumed by the robot's human model.
    pub beta: f64,
    /// Tick period, seconds.
    pub dt: f64,
    /// Action magnitude cap, m/s.
    pub a_max: f64,
    /// Criticality threshold for active prompts.
    pub sigma: f64,
    pub belief_floor: f64,
    /// Human actions at or below this magnitude are treated as no input.
    pub deadzone: f64,
    pub cooldown_ticks: u32,
    pub max_ticks: u64,
    pub overlay_waypoints: usize,
    pub prompt_duration_ms: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            alpha: 0.4,
            beta: 0.1,
            dt: 0.05,
            a_max: 1.0,
            sigma: 0.2,
            belief_floor: 1e-6,
            deadzone: 1e-3,
            cooldown_ticks: 40,
            max_ticks: 2000,
            overlay_waypoints: 10,
            prompt_duration_ms: 500,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_owned()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return bad("beta must be >= 0");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.a_max > 0.0 && self.a_max.is_finite()) {
            return bad("a_max must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(0.0..1.0).contains(&self.belief_floor) {
            return bad("belief_floor must lie in [0, 1)");
        }
        if !(self.deadzone >= 0.0 && self.deadzone.is_finite()) {
            return bad("deadzone must be >= 0");
        }
        if self.overlay_waypoints < 2 {
            return bad("overlay_waypoints must be >= 2");
        }
        if !(100..=5000).contains(&self.prompt_duration_ms) {
            return bad("prompt_duration_ms must lie in [100, 5000]");
        }
        Ok(())
    }

    /// Returns a copy with the given JSON object's keys overriding fields.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<SimConfig> {
        let mut base = serde_json::to_value(self)?;
        match overrides {
            serde_json::Value::Null => {}
            serde_json::Value::Object(map) => {
                let obj = base
                    .as_object_mut()
                    .expect("config serializes to an object");
                for (k, v) in map {
                    obj.insert(k.clone(), v.clone());
                }
            }
            _ => return Err(Error::schema("overrides", "expected an object")),
        }
        let cfg: SimConfig =
            serde_json::from_value(base).map_err(|e| Error::schema("overrides", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn ensure_finite(v: Vec3, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} is not finite: {v}")))
    }
}

pub(crate) fn clip(a: ActionVec, a_max: f64) -> ActionVec {
    let n = a.norm();
    // A rescaled vector can land a few ulps above a_max; accepting that band
    // keeps clip idempotent.
    if n <= a_max * (1.0 + 4.0 * f64::EPSILON) {
        a
    } else {
        a * (a_max / n)
    }
}

pub(crate) fn step_state(s: Position, a: ActionVec, cfg: &SimConfig) -> Position {
    s + clip(a, cfg.a_max) * cfg.dt
}

pub(crate) fn q(s: Position, a: ActionVec, goal: Position, cfg: &SimConfig) -> f64 {
    -(step_state(s, a, cfg) - goal).norm_squared()
}

pub(crate) fn best_action(s: Position, goal: Position, cfg: &SimConfig) -> ActionVec {
    clip((goal - s) * (1.0 / cfg.dt), cfg.a_max)
}

/// Scales `a` down to magnitude `a_max` if it exceeds it.
pub fn clip_action(a: ActionVec, a_max: f64) -> Result<ActionVec> {
    ensure_finite(a, "action")?;
    Ok(clip(a, a_max))
}

/// One explicit-Euler step of the end-effector under a clipped velocity.
pub fn transition(s: Position, a: ActionVec, cfg: &SimConfig) -> Result<Position> {
    ensure_finite(s, "state")?;
    ensure_finite(a, "action")?;
    Ok(step_state(s, a, cfg))
}

/// `Q_g(s, a) = -‖T(s, a) - g‖²`.
pub fn q_value(s: Position, a: ActionVec, goal: &Goal, cfg: &SimConfig) -> Result<f64> {
    ensure_finite(s, "state")?;
    ensure_finite(a, "action")?;
    Ok(q(s, a, goal.point, cfg))
}

/// The admissible action maximizing `Q_g(s, ·)`.
pub fn optimal_action(s: Position, goal: &Goal, cfg: &SimConfig) -> Result<ActionVec> {
    ensure_finite(s, "state")?;
    Ok(best_action(s, goal.point, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dt: f64) -> SimConfig {
        SimConfig {
            dt,
            ..SimConfig::default()
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_action(Vec3::ZERO, 1.0).unwrap(), Vec3::ZERO);
        assert_eq!(
            clip_action(Vec3::new(2.0, 0.0, 0.0), 1.0).unwrap(),
            Vec3::new(1.0, 0.0, 0.0)
        );
        assert_eq!(
            clip_action(Vec3::new(0.3, 0.4, 0.0), 1.0).unwrap(),
            Vec3::new(0.3, 0.4, 0.0)
        );
        assert!(clip_action(Vec3::new(f64::NAN, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn transition_examples() {
        let c = cfg(1.0);
        assert_eq!(
            transition(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), &c).unwrap(),
            Vec3::new(1.0, 0.0, 0.0)
        );
        assert_eq!(transition(Vec3::ZERO, Vec3::ZERO, &c).unwrap(), Vec3::ZERO);
        let s = transition(
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            &cfg(0.05),
        )
        .unwrap();
        assert!((s - Vec3::new(1.0, 1.05, 0.0)).norm() < 1e-15);
        assert!(transition(Vec3::new(f64::INFINITY, 0.0, 0.0), Vec3::ZERO, &c).is_err());
    }

    #[test]
    fn q_examples() {
        let c = cfg(1.0);
        let plus = Goal::new("a", Vec3::new(1.0, 0.0, 0.0));
        let minus = Goal::new("b", Vec3::new(-1.0, 0.0, 0.0));
        let a = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(q_value(Vec3::ZERO, a, &plus, &c).unwrap(), 0.0);
        assert_eq!(q_value(Vec3::ZERO, a, &minus, &c).unwrap(), -4.0);
        let s = Vec3::new(0.3, -2.0, 1.0);
        assert_eq!(
            q_value(s, Vec3::ZERO, &minus, &c).unwrap(),
            -(s - minus.point).norm_squared()
        );
    }

    #[test]
    fn optimal_action_examples() {
        let c = SimConfig::default();
        let far = Goal::new("far", Vec3::new(5.0, 0.0, 0.0));
        assert_eq!(
            optimal_action(Vec3::ZERO, &far, &c).unwrap(),
            Vec3::new(1.0, 0.0, 0.0)
        );
        assert_eq!(optimal_action(far.point, &far, &c).unwrap(), Vec3::ZERO);
        let near = Goal::new("near", Vec3::new(0.02, 0.0, 0.0));
        let a = optimal_action(Vec3::ZERO, &near, &c).unwrap();
        assert!((a - Vec3::new(0.4, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn optimal_action_beats_grid_near_goal() {
        // Independent check of the 0.02 m example: exhaustive grid over the action ball.
        let c = SimConfig::default();
        let near = Goal::new("near", Vec3::new(0.02, 0.0, 0.0));
        let best = q_value(
            Vec3::ZERO,
            optimal_action(Vec3::ZERO, &near, &c).unwrap(),
            &near,
            &c,
        )
        .unwrap();
        let n = 40;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let a = Vec3::new(
                        -1.0 + 2.0 * i as f64 / n as f64,
                        -1.0 + 2.0 * j as f64 / n as f64,
                        -1.0 + 2.0 * k as f64 / n as f64,
                    );
                    if a.norm() <= 1.0 {
                        assert!(q_value(Vec3::ZERO, a, &near, &c).unwrap() <= best + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bundled_scenes_load() {
        assert_eq!(Scene::bundled("placing").unwrap().goals.len(), 8);
        assert_eq!(Scene::bundled("avoiding").unwrap().goals.len(), 4);
        assert_eq!(Scene::bundled("sorting").unwrap().goals.len(), 4);
        let forgetting = Scene::bundled("forgetting").unwrap();
        assert_eq!(forgetting.goals.len(), 4);
        assert_eq!(forgetting.events.len(), 1);
        assert_eq!(forgetting.events[0].kind, EventKind::BeliefReset);
        assert_eq!(forgetting.events[0].t, 15.0);
        assert!(Scene::bundled("nope").is_none());
    }

    #[test]
    fn duplicate_goal_id_is_named() {
        let text = r#"{"version":1,"name":"dup","start":[0,0,0],
            "goals":[{"id":"shelf","point":[1,0,0],"label":""},{"id":"shelf","point":[2,0,0],"label":""}]}"#;
        let err = Scene::from_json(text).unwrap_err().to_string();
        assert!(err.contains("goals[1].id"), "{err}");
        assert!(err.contains("shelf"), "{err}");
    }

    #[test]
    fn unknown_event_kind_rejected() {
        let text = r#"{"version":1,"name":"x","start":[0,0,0],
            "goals":[{"id":"a","point":[1,0,0],"label":""}],
            "events":[{"t":1.0,"kind":"teleport"}]}"#;
        let err = Scene::from_json(text).unwrap_err().to_string();
        assert!(err.contains("events[0].kind"), "{err}");
    }

    #[test]
    fn events_are_sorted_on_load() {
        let text = r#"{"version":1,"name":"x","start":[0,0,0],
            "goals":[{"id":"a","point":[1,0,0],"label":""}],
            "events":[{"t":5.0,"kind":"belief_reset"},{"t":1.0,"kind":"belief_reset"}]}"#;
        let scene = Scene::from_json(text).unwrap();
        assert_eq!(scene.events[0].t, 1.0);
        assert_eq!(scene.events[1].t, 5.0);
    }

    #[test]
    fn empty_goal_list_rejected() {
        let text = r#"{"version":1,"name":"x","start":[0,0,0],"goals":[]}"#;
        assert!(Scene::from_json(text).is_err());
    }

    #[test]
    fn scene_roundtrips_through_json() {
        let scene = Scene::bundled("forgetting").unwrap();
        let text = serde_json::to_string(&scene).unwrap();
        assert_eq!(Scene::from_json(&text).unwrap(), scene);
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = SimConfig::default()
            .with_overrides(&serde_json::json!({"alpha": 0.7, "sigma": 0.5}))
            .unwrap();
        assert_eq!(cfg.alpha, 0.7);
        assert_eq!(cfg.sigma, 0.5);
        assert_eq!(cfg.beta, 0.1);
        assert!(SimConfig::default()
            .with_overrides(&serde_json::json!({"alpha": 1.5}))
            .is_err());
        assert!(SimConfig::default()
            .with_overrides(&serde_json::json!({"gamma": 1.0}))
            .is_err());
    }

    #[test]
    fn event_tick_rounding() {
        let e = ScriptedEvent {
            t: 15.0,
            kind: EventKind::BeliefReset,
        };
        assert_eq!(e.tick(0.05), 300);
        assert_eq!(e.tick(1.0), 15);
    }
}
