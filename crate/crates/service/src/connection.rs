//! Per-connection protocol state, independent of any transport.
//!
//! The server feeds incoming text frames to [`Connection::handle_text`] and
//! calls [`Connection::tick`] once per engine period, forwarding whatever
//! messages come back. Keeping this free of sockets makes the protocol
//! testable with plain function calls.

use std::time::Duration;

use sa_core::wire::{ClientMessage, ConfigMsg, EpisodeEndMsg, ErrorMsg, ServerMessage};
use sa_core::{ActionVec, Scene, Session, SimConfig, TickRecord};

#[derive(Debug, Clone)]
pub struct ConnectionOptions {
    /// Scene used when a `start` message names none.
    pub scene: Scene,
    pub config: SimConfig,
    /// Send a `state` message every this many ticks (prompts and the final
    /// state are always sent).
    pub broadcast_every: u32,
}

impl ConnectionOptions {
    pub fn new(scene: Scene, config: SimConfig) -> Self {
        ConnectionOptions {
            scene,
            config,
            broadcast_every: 1,
        }
    }
}

pub struct Connection {
    opts: ConnectionOptions,
    session: Option<Session>,
    /// Most recent input; it stays in effect until replaced.
    latest_input: Option<ActionVec>,
    last_client_seq: Option<u64>,
    next_seq: u64,
    last_record: Option<TickRecord>,
}

impl Connection {
    pub fn new(opts: ConnectionOptions) -> Self {
        Connection {
            opts,
            session: None,
            latest_input: None,
            last_client_seq: None,
            next_seq: 0,
            last_record: None,
        }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    /// Record of the most recent tick.
    pub fn last_record(&self) -> Option<&TickRecord> {
        self.last_record.as_ref()
    }

    /// True while an episode is streaming.
    pub fn is_running(&self) -> bool {
        self.session.as_ref().is_some_and(|s| !s.is_finished())
    }

    /// Engine period of the current (or default) configuration.
    pub fn tick_period(&self) -> Duration {
        let dt = self
            .session
            .as_ref()
            .map_or(self.opts.config.dt, |s| s.config().dt);
        Duration::from_secs_f64(dt)
    }

    fn seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn error(&mut self, detail: impl Into<String>) -> ServerMessage {
        ServerMessage::Error(ErrorMsg {
            seq: self.seq(),
            detail: detail.into(),
        })
    }

    /// Handles one client frame. Errors are answered with an `error` message
    /// and leave the session untouched.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        let msg = match ClientMessage::parse(text) {
            Ok(m) => m,
            Err(e) => return vec![self.error(e.to_string())],
        };
        if let Some(seq) = msg.seq() {
            if self.last_client_seq.is_some_and(|last| seq <= last) {
                let last = self.last_client_seq.unwrap_or_default();
                return vec![
                    self.error(format!("seq {seq} is not greater than previous seq {last}"))
                ];
            }
            self.last_client_seq = Some(seq);
        }
        match msg {
            ClientMessage::Input { a, .. } => {
                if self.session.is_none() {
                    return vec![self.error("no session running; send a start message first")];
                }
                self.latest_input = Some(a);
                Vec::new()
            }
            ClientMessage::Start {
                scene,
                config_overrides,
                ..
            } => match self.start(scene.as_deref(), &config_overrides) {
                Ok(msg) => vec![msg],
                Err(e) => vec![self.error(e)],
            },
        }
    }

    fn start(
        &mut self,
        scene: Option<&str>,
        overrides: &serde_json::Value,
    ) -> Result<ServerMessage, String> {
        // Clients may pick the served scene or a bundled one, never a file path.
        let scene = match scene {
            None => self.opts.scene.clone(),
            Some(name) if name == self.opts.scene.name => self.opts.scene.clone(),
            Some(name) => Scene::bundled(name).ok_or_else(|| {
                format!(
                    "unknown scene `{name}`; available: {}, {}",
                    self.opts.scene.name,
                    Scene::bundled_names().collect::<Vec<_>>().join(", ")
                )
            })?,
        };
        let config = self
            .opts
            .config
            .with_overrides(overrides)
            .map_err(|e| e.to_string())?;
        let session = Session::new(scene.clone(), config.clone()).map_err(|e| e.to_string())?;
        self.session = Some(session);
        self.latest_input = None;
        self.last_record = None;
        Ok(ServerMessage::Config(ConfigMsg {
            seq: self.seq(),
            scene,
            config,
        }))
    }

    /// Advances the running episode by one tick.
    pub fn tick(&mut self) -> Vec<ServerMessage> {
        if !self.is_running() {
            return Vec::new();
        }
        let input = self.latest_input;
        let broadcast_every = u64::from(self.opts.broadcast_every.max(1));
        let session = self.session.as_mut().expect("running session");
        let rec = match session.step(input) {
            Ok(r) => r,
            Err(e) => return vec![self.error(e.to_string())],
        };
        let mut out = Vec::new();
        let session = self.session.as_ref().expect("running session");
        if rec.done || rec.tick % broadcast_every == 0 {
            let seq = self.next_seq;
            out.push(ServerMessage::state(seq, session, &rec));
            self.next_seq += 1;
        }
        if let Some(fired) = &rec.prompt {
            out.push(ServerMessage::prompt(self.next_seq, fired));
            self.next_seq += 1;
        }
        if rec.done {
            let (lead, confidence) = rec.belief.argmax();
            let leading_goal = rec.belief.ids()[lead].clone();
            let reached_goal =
                session.scene().goal(&leading_goal).is_some_and(|g| {
                    (rec.s_next - g.point).norm() <= sa_core::session::DONE_RADIUS
                }) && confidence >= sa_core::session::DONE_BELIEF;
            out.push(ServerMessage::EpisodeEnd(EpisodeEndMsg {
                seq: self.next_seq,
                tick: rec.tick,
                t: (rec.tick + 1) as f64 * session.config().dt,
                leading_goal,
                confidence,
                reached_goal,
            }));
            self.next_seq += 1;
        }
        self.last_record = Some(rec);
        out
    }
}
