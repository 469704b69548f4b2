//! Messages exchanged with interactive clients, one JSON object per text frame.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::feedback::{PatternKind, PromptId, Rgb, VisualOverlay};
use crate::inference::Belief;
use crate::model::{ActionVec, GoalId, Position, Scene, SimConfig, Vec3};
use crate::session::{FiredPrompt, Session, TickRecord};

/// Overlay entry as sent to clients: waypoints are bare positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTrajectory {
    pub goal_id: GoalId,
    pub waypoints: Vec<Position>,
    pub color: Rgb,
    pub alpha: f64,
}

impl WireTrajectory {
    pub fn from_overlay(overlay: &VisualOverlay) -> Vec<WireTrajectory> {
        overlay
            .trajectories
            .iter()
            .map(|t| WireTrajectory {
                goal_id: t.goal_id.clone(),
                waypoints: t.waypoints.iter().map(|w| w.position).collect(),
                color: t.color,
                alpha: t.alpha,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub seq: u64,
    pub tick: u64,
    /// Time at the end of the tick, matching `s`.
    pub t: f64,
    pub s: Position,
    pub belief: Belief,
    pub overlay: Vec<WireTrajectory>,
    #[serde(rename = "C")]
    pub criticality: f64,
    pub goal_points: BTreeMap<GoalId, Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMsg {
    pub seq: u64,
    pub prompt_id: PromptId,
    pub pattern: PatternKind,
    pub squeeze: bool,
    pub duration_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEndMsg {
    pub seq: u64,
    pub tick: u64,
    pub t: f64,
    /// Leading goal and its probability at the end.
    pub leading_goal: GoalId,
    pub confidence: f64,
    pub reached_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    pub seq: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMsg {
    pub seq: u64,
    pub scene: Scene,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateMsg),
    Prompt(PromptMsg),
    EpisodeEnd(EpisodeEndMsg),
    Error(ErrorMsg),
    Config(ConfigMsg),
}

impl ServerMessage {
    pub fn seq(&self) -> u64 {
        match self {
            ServerMessage::State(m) => m.seq,
            ServerMessage::Prompt(m) => m.seq,
            ServerMessage::EpisodeEnd(m) => m.seq,
            ServerMessage::Error(m) => m.seq,
            ServerMessage::Config(m) => m.seq,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServerMessage::State(_) => "state",
            ServerMessage::Prompt(_) => "prompt",
            ServerMessage::EpisodeEnd(_) => "episode_end",
            ServerMessage::Error(_) => "error",
            ServerMessage::Config(_) => "config",
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }

    pub fn state(seq: u64, session: &Session, rec: &TickRecord) -> ServerMessage {
        let cfg = session.config();
        ServerMessage::State(StateMsg {
            seq,
            tick: rec.tick,
            t: (rec.tick + 1) as f64 * cfg.dt,
            s: rec.s_next,
            belief: rec.belief.clone(),
            overlay: WireTrajectory::from_overlay(session.overlay()),
            criticality: rec.criticality,
            goal_points: goal_points(session.scene()),
        })
    }

    pub fn prompt(seq: u64, fired: &FiredPrompt) -> ServerMessage {
        ServerMessage::Prompt(PromptMsg {
            seq,
            prompt_id: fired.prompt_id,
            pattern: fired.pattern.pattern,
            squeeze: fired.pattern.squeeze,
            duration_ms: fired.pattern.duration_ms,
        })
    }
}

pub fn goal_points(scene: &Scene) -> BTreeMap<GoalId, Position> {
    scene
        .goals
        .iter()
        .map(|g| (g.id.clone(), g.point))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Input {
        a: ActionVec,
        seq: Option<u64>,
    },
    Start {
        scene: Option<String>,
        config_overrides: Value,
        seq: Option<u64>,
    },
}

impl ClientMessage {
    pub fn seq(&self) -> Option<u64> {
        match self {
            ClientMessage::Input { seq, .. } | ClientMessage::Start { seq, .. } => *seq,
        }
    }

    /// Parses one client frame. Unknown kinds, unknown fields and anything
    /// other than three finite numbers for `a` are rejected.
    pub fn parse(text: &str) -> Result<ClientMessage> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("not JSON: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(Error::InvalidInput("message must be a JSON object".into()));
        };
        let kind = match obj.remove("kind") {
            Some(Value::String(k)) => k,
            Some(_) => return Err(Error::schema("kind", "must be a string")),
            None => return Err(Error::schema("kind", "missing")),
        };
        let seq = match obj.remove("seq") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .ok_or_else(|| Error::schema("seq", "must be a non-negative integer"))?,
            ),
        };
        match kind.as_str() {
            "input" => {
                let a = obj
                    .remove("a")
                    .ok_or_else(|| Error::schema("a", "missing"))?;
                reject_extra(&obj)?;
                Ok(ClientMessage::Input {
                    a: parse_vec3(&a)?,
                    seq,
                })
            }
            "start" => {
                let scene = match obj.remove("scene") {
                    None | Some(Value::Null) => None,
                    Some(Value::String(s)) => Some(s),
                    Some(_) => return Err(Error::schema("scene", "must be a string")),
                };
                let config_overrides = match obj.remove("config_overrides") {
                    None | Some(Value::Null) => Value::Object(Default::default()),
                    Some(v @ Value::Object(_)) => v,
                    Some(_) => return Err(Error::schema("config_overrides", "must be an object")),
                };
                reject_extra(&obj)?;
                Ok(ClientMessage::Start {
                    scene,
                    config_overrides,
                    seq,
                })
            }
            other => Err(Error::schema(
                "kind",
                format!("unknown message kind `{other}`"),
            )),
        }
    }
}

fn reject_extra(obj: &serde_json::Map<String, Value>) -> Result<()> {
    match obj.keys().next() {
        Some(k) => Err(Error::schema(k.clone(), "unknown field")),
        None => Ok(()),
    }
}

fn parse_vec3(v: &Value) -> Result<Vec3> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 3)
        .ok_or_else(|| Error::schema("a", "expected an array of three numbers"))?;
    let mut xyz = [0.0; 3];
    for (i, (slot, item)) in xyz.iter_mut().zip(arr).enumerate() {
        *slot = item
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::schema(format!("a[{i}]"), "expected a finite number"))?;
    }
    Ok(Vec3::new(xyz[0], xyz[1], xyz[2]))
}
