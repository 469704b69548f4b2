//! The per-tick control loop and the headless episode harness.
//!
//! Tick order: scripted events, belief update from the human input, assistive
//! action, blending, integration, then criticality / prompt selection and the
//! overlay at the new state.

use serde::{Deserialize, Serialize};

use crate::assist::{autonomous_action, blend};
use crate::error::{Error, Result};
use crate::feedback::{
    criticality, select_prompt, should_prompt, visual_overlay, Prompt, PromptArmState, PromptId,
    PromptPattern, VisualOverlay,
};
use crate::inference::{apply_event, uniform_belief, update_belief, Belief};
use crate::model::{self, ActionVec, EventKind, Position, Scene, SimConfig};
use crate::teacher::{AttentionPolicy, OverlayReading, SimTeacher, TeacherModel};

/// Episode ends once the leading goal holds this much belief...
pub const DONE_BELIEF: f64 = 0.999;
/// ...and the end-effector is this close to it (meters).
pub const DONE_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiredPrompt {
    pub prompt_id: PromptId,
    #[serde(flatten)]
    pub pattern: PromptPattern,
}

/// One control-loop step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    /// State at which the inputs were applied.
    pub s: Position,
    /// State after integration; criticality and overlay refer to it.
    pub s_next: Position,
    pub a_h: Option<ActionVec>,
    pub a_r: ActionVec,
    pub a_blended: ActionVec,
    pub belief: Belief,
    #[serde(rename = "C")]
    pub criticality: f64,
    pub prompt: Option<FiredPrompt>,
    pub overlay_digest: Vec<f64>,
    pub events_applied: Vec<EventKind>,
    pub done: bool,
}

/// A live control loop over one scene.
#[derive(Debug, Clone)]
pub struct Session {
    scene: Scene,
    cfg: SimConfig,
    belief: Belief,
    state: Position,
    tick: u64,
    arm: PromptArmState,
    next_event: usize,
    finished: bool,
    overlay: VisualOverlay,
}

impl Session {
    pub fn new(scene: Scene, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        if cfg.belief_floor * scene.goals.len() as f64 >= 1.0 {
            return Err(Error::InvalidConfig(
                "belief_floor times goal count must be below 1".into(),
            ));
        }
        let belief = uniform_belief(&scene)?;
        let overlay = visual_overlay(scene.start, &belief, &scene, &cfg);
        Ok(Session {
            state: scene.start,
            scene,
            cfg,
            belief,
            tick: 0,
            arm: PromptArmState::default(),
            next_event: 0,
            finished: false,
            overlay,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn state(&self) -> Position {
        self.state
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Overlay for the current state and belief.
    pub fn overlay(&self) -> &VisualOverlay {
        &self.overlay
    }

    fn pending_events(&self) -> bool {
        self.next_event < self.scene.events.len()
    }

    /// Advances the loop by one tick. `None` means no human input this tick.
    pub fn step(&mut self, a_h: Option<ActionVec>) -> Result<TickRecord> {
        if self.finished {
            return Err(Error::EpisodeFinished(self.tick));
        }
        if let Some(a) = a_h {
            if !a.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "human action is not finite: {a}"
                )));
            }
        }
        let cfg = &self.cfg;
        let tick = self.tick;
        let s = self.state;

        let mut events_applied = Vec::new();
        while let Some(event) = self.scene.events.get(self.next_event) {
            if event.tick(cfg.dt) > tick {
                break;
            }
            self.belief = apply_event(&self.belief, &self.scene, event)?;
            // A reset starts a fresh inference episode, so the debounce starts over too.
            if event.kind == EventKind::BeliefReset {
                self.arm = PromptArmState::default();
            }
            events_applied.push(event.kind);
            self.next_event += 1;
        }

        if let Some(a) = a_h {
            self.belief = update_belief(&self.belief, &self.scene, s, a, cfg)?;
        }

        let a_r = autonomous_action(s, &self.belief, &self.scene, cfg);
        let a_blended = blend(a_h.unwrap_or(model::Vec3::ZERO), a_r, cfg)?;
        let s_next = model::transition(s, a_blended, cfg)?;

        let c = criticality(s_next, &self.belief, &self.scene, cfg);
        let (fire, arm) = should_prompt(c, self.arm, cfg);
        self.arm = arm;
        let prompt = fire.then(|| {
            let (u, pattern) = select_prompt(s_next, &self.belief, &self.scene, cfg);
            FiredPrompt {
                prompt_id: u.id,
                pattern,
            }
        });

        self.overlay = visual_overlay(s_next, &self.belief, &self.scene, cfg);
        self.state = s_next;
        self.tick += 1;

        let (lead, p_lead) = self.belief.argmax();
        let reached = p_lead >= DONE_BELIEF
            && (s_next - self.scene.goals[lead].point).norm() <= DONE_RADIUS
            && !self.pending_events();
        self.finished = reached || self.tick >= cfg.max_ticks;

        Ok(TickRecord {
            tick,
            t: tick as f64 * cfg.dt,
            s,
            s_next,
            a_h,
            a_r,
            a_blended,
            belief: self.belief.clone(),
            criticality: c,
            prompt,
            overlay_digest: self.overlay.alphas(),
            events_applied,
            done: self.finished,
        })
    }
}

/// Summary measures of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Seconds of human input above the deadzone.
    pub interaction_time: f64,
    pub final_belief_in_goal: f64,
    /// `final_belief_in_goal / interaction_time`; `None` when no input was given.
    pub teaching_efficiency: Option<f64>,
    pub prompts_issued: u32,
    /// Fraction of ticks the teacher was not attending.
    pub distractor_proxy: f64,
    pub ticks: u64,
    pub reached_goal: bool,
}

impl EpisodeMetrics {
    pub fn from_trace(
        records: &[TickRecord],
        teacher: &TeacherModel,
        attending: &[bool],
        cfg: &SimConfig,
    ) -> Self {
        let inputs = records
            .iter()
            .filter(|r| r.a_h.is_some_and(|a| a.norm() > cfg.deadzone))
            .count();
        let interaction_time = inputs as f64 * cfg.dt;
        let final_belief_in_goal = records
            .last()
            .and_then(|r| r.belief.prob(&teacher.goal_id))
            .unwrap_or(0.0);
        let teaching_efficiency =
            (interaction_time > 0.0).then(|| final_belief_in_goal / interaction_time);
        let away = attending.iter().filter(|a| !**a).count();
        let reached_goal = records.last().is_some_and(|r| {
            let (lead, p) = r.belief.argmax();
            r.done && p >= DONE_BELIEF && r.belief.ids()[lead] == teacher.goal_id
        });
        EpisodeMetrics {
            interaction_time,
            final_belief_in_goal,
            teaching_efficiency,
            prompts_issued: records.iter().filter(|r| r.prompt.is_some()).count() as u32,
            distractor_proxy: if attending.is_empty() {
                0.0
            } else {
                away as f64 / attending.len() as f64
            },
            ticks: records.len() as u64,
            reached_goal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub records: Vec<TickRecord>,
    pub metrics: EpisodeMetrics,
    /// Teacher attention per tick.
    pub attending: Vec<bool>,
    pub teacher: TeacherModel,
    pub seed: u64,
}

/// Runs a full episode with a simulated teacher. The teacher's random stream
/// is seeded from `seed`.
pub fn run_episode(
    scene: &Scene,
    teacher: &TeacherModel,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Episode> {
    let teacher = TeacherModel {
        rng_seed: seed,
        ..teacher.clone()
    };
    let goal_idx = scene.goal_index(&teacher.goal_id).ok_or_else(|| {
        Error::InvalidInput(format!("teacher goal `{}` not in scene", teacher.goal_id))
    })?;
    let mut sim = SimTeacher::new(teacher.clone(), scene)?;
    let mut session = Session::new(scene.clone(), cfg.clone())?;
    let mut records: Vec<TickRecord> = Vec::new();
    let mut attending = Vec::new();

    while !session.is_finished() {
        let fired = records
            .last()
            .and_then(|r| r.prompt)
            .map(|p| Prompt::new(p.prompt_id, cfg.a_max));
        let belief = session.belief();
        let reading = OverlayReading {
            confidence: belief.probs()[goal_idx],
            leading: belief.argmax().0 == goal_idx,
        };
        let a_h = sim.act(session.state(), fired, reading, cfg);
        attending.push(sim.attention().attending);
        records.push(session.step(a_h)?);
    }

    let metrics = EpisodeMetrics::from_trace(&records, &teacher, &attending, cfg);
    Ok(Episode {
        records,
        metrics,
        attending,
        teacher,
        seed,
    })
}

/// A rational, always-attending teacher for the given goal.
pub fn rational_teacher(goal: &str) -> TeacherModel {
    TeacherModel::new(
        goal.into(),
        crate::teacher::Rationality::RATIONAL,
        AttentionPolicy::AlwaysAttending,
    )
}
