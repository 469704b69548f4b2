//! JSON-lines episode logs and deterministic replay verification.
//!
//! A log is a header line (`{"kind":"header", ...}`) followed by one
//! [`TickRecord`] per line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Scene, SimConfig};
use crate::session::{Episode, Session, TickRecord};
use crate::teacher::TeacherModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum HeaderKind {
    Header,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    kind: HeaderKind,
    pub scene: Scene,
    pub config: SimConfig,
    #[serde(default)]
    pub teacher: Option<TeacherModel>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl LogHeader {
    pub fn new(
        scene: Scene,
        config: SimConfig,
        teacher: Option<TeacherModel>,
        seed: Option<u64>,
    ) -> Self {
        LogHeader {
            kind: HeaderKind::Header,
            scene,
            config,
            teacher,
            seed,
        }
    }

    pub fn for_episode(scene: &Scene, config: &SimConfig, episode: &Episode) -> Self {
        LogHeader::new(
            scene.clone(),
            config.clone(),
            Some(episode.teacher.clone()),
            Some(episode.seed),
        )
    }
}

pub fn write_log<W: Write>(mut w: W, header: &LogHeader, records: &[TickRecord]) -> Result<()> {
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_log_file(
    path: impl AsRef<Path>,
    header: &LogHeader,
    records: &[TickRecord],
) -> Result<()> {
    write_log(BufWriter::new(File::create(path)?), header, records)
}

#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub records: Vec<TickRecord>,
    /// Non-fatal problems found while reading (e.g. a truncated last line).
    pub warnings: Vec<String>,
}

/// Parses a log. A malformed final line is dropped with a warning; any other
/// malformed line is an error naming its (1-based) line number.
pub fn parse_log(text: &str) -> Result<EpisodeLog> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let Some(&(first_no, first)) = lines.first() else {
        return Err(Error::CorruptLog {
            line: 1,
            detail: "empty log".into(),
        });
    };
    let header: LogHeader = serde_json::from_str(first).map_err(|e| Error::CorruptLog {
        line: first_no,
        detail: format!("bad header: {e}"),
    })?;
    let mut records = Vec::with_capacity(lines.len().saturating_sub(1));
    let mut warnings = Vec::new();
    let last = lines.len() - 1;
    for (idx, &(line_no, line)) in lines.iter().enumerate().skip(1) {
        match serde_json::from_str::<TickRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) if idx == last => {
                warnings.push(format!(
                    "line {line_no}: ignoring incomplete final record ({e})"
                ));
            }
            Err(e) => {
                return Err(Error::CorruptLog {
                    line: line_no,
                    detail: e.to_string(),
                })
            }
        }
    }
    Ok(EpisodeLog {
        header,
        records,
        warnings,
    })
}

pub fn read_log(path: impl AsRef<Path>) -> Result<EpisodeLog> {
    parse_log(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub tick: u64,
    pub field: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub ticks_verified: usize,
    pub divergence: Option<Divergence>,
    pub warnings: Vec<String>,
    /// Records produced by re-running the engine on the logged inputs.
    pub replayed: Vec<TickRecord>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

fn vec_bits(a: crate::model::Vec3, b: crate::model::Vec3) -> bool {
    same_bits(a.x, b.x) && same_bits(a.y, b.y) && same_bits(a.z, b.z)
}

/// First field where a replayed record departs from the logged one.
fn compare(logged: &TickRecord, replayed: &TickRecord) -> Option<(&'static str, String)> {
    if logged.tick != replayed.tick {
        return Some(("tick", format!("{} vs {}", logged.tick, replayed.tick)));
    }
    if !vec_bits(logged.s, replayed.s) || !vec_bits(logged.s_next, replayed.s_next) {
        return Some(("state", format!("{} vs {}", logged.s_next, replayed.s_next)));
    }
    if logged.belief.ids() != replayed.belief.ids() {
        return Some(("belief", "goal ids differ".into()));
    }
    for ((id, p), q) in logged.belief.iter().zip(replayed.belief.probs()) {
        if !same_bits(p, *q) {
            return Some(("belief", format!("b({id}) logged {p:e}, replayed {q:e}")));
        }
    }
    if !vec_bits(logged.a_r, replayed.a_r) || !vec_bits(logged.a_blended, replayed.a_blended) {
        return Some(("action", "assistive or blended action differs".into()));
    }
    if !same_bits(logged.criticality, replayed.criticality) {
        return Some((
            "C",
            format!("{:e} vs {:e}", logged.criticality, replayed.criticality),
        ));
    }
    if logged.prompt != replayed.prompt {
        return Some((
            "prompt",
            format!("{:?} vs {:?}", logged.prompt, replayed.prompt),
        ));
    }
    if logged.events_applied != replayed.events_applied {
        return Some(("events", "applied events differ".into()));
    }
    if logged.overlay_digest.len() != replayed.overlay_digest.len()
        || logged
            .overlay_digest
            .iter()
            .zip(&replayed.overlay_digest)
            .any(|(a, b)| !same_bits(*a, *b))
    {
        return Some(("overlay", "overlay alphas differ".into()));
    }
    None
}

/// Re-runs the engine on the logged human inputs and checks every tick.
pub fn replay(log: &EpisodeLog) -> Result<ReplayReport> {
    let mut session = Session::new(log.header.scene.clone(), log.header.config.clone())?;
    let mut replayed = Vec::with_capacity(log.records.len());
    let mut divergence = None;
    let mut ticks_verified = 0;
    for logged in &log.records {
        if session.is_finished() {
            divergence = Some(Divergence {
                tick: logged.tick,
                field: "done",
                detail: "log continues after the episode finished".into(),
            });
            break;
        }
        let rec = session.step(logged.a_h)?;
        let diff = compare(logged, &rec);
        replayed.push(rec);
        if let Some((field, detail)) = diff {
            divergence = Some(Divergence {
                tick: logged.tick,
                field,
                detail,
            });
            break;
        }
        ticks_verified += 1;
    }
    Ok(ReplayReport {
        ticks_verified,
        divergence,
        warnings: log.warnings.clone(),
        replayed,
    })
}
