//! Batch experiments: scenes × conditions × seeds, run data-parallel when the
//! `parallel` feature is on, summarized per condition and per scene.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GoalId, Scene, SimConfig};
use crate::session::{run_episode, EpisodeMetrics};
use crate::teacher::{AttentionPolicy, Rationality, TeacherModel};

fn default_rationality() -> Rationality {
    Rationality::boltzmann(5.0).expect("positive")
}

fn default_compliance() -> f64 {
    0.9
}

fn default_attend() -> u32 {
    20
}

/// Teacher parameters shared by every episode of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    #[serde(default = "default_rationality")]
    pub rationality: Rationality,
    #[serde(default = "default_compliance")]
    pub compliance: f64,
    #[serde(default = "default_attend")]
    pub attend_duration: u32,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        TeacherSpec {
            rationality: default_rationality(),
            compliance: default_compliance(),
            attend_duration: default_attend(),
        }
    }
}

/// Experiment file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    /// Bundled scene names or scene file paths (relative to the experiment file).
    pub scenes: Vec<String>,
    pub conditions: Vec<AttentionPolicy>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub teacher: TeacherSpec,
    /// SimConfig field overrides.
    #[serde(default)]
    pub overrides: serde_json::Value,
    /// Hidden goal per scene name; otherwise goal `seed mod |G|` is used.
    #[serde(default)]
    pub goals: BTreeMap<String, GoalId>,
}

impl Experiment {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let exp: Experiment = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::schema(path, e.into_inner().to_string())
        })?;
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes.is_empty() {
            return Err(Error::schema("scenes", "at least one scene is required"));
        }
        if self.conditions.is_empty() {
            return Err(Error::schema(
                "conditions",
                "at least one condition is required",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::schema("seeds", "at least one seed is required"));
        }
        if !(0.0..=1.0).contains(&self.teacher.compliance) {
            return Err(Error::schema("teacher.compliance", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn load_experiment(path: impl AsRef<Path>) -> Result<Experiment> {
    Experiment::from_json(&std::fs::read_to_string(path)?)
}

/// One episode to run.
#[derive(Debug, Clone)]
pub struct Job {
    pub scene: Scene,
    pub condition: AttentionPolicy,
    pub seed: u64,
    pub teacher: TeacherModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeOutcome {
    pub scene: String,
    pub condition: AttentionPolicy,
    pub seed: u64,
    pub goal: GoalId,
    pub metrics: EpisodeMetrics,
}

/// Expands an experiment into its job list. Scene paths resolve against `base_dir`.
pub fn plan_jobs(exp: &Experiment, base_dir: Option<&Path>) -> Result<Vec<Job>> {
    exp.validate()?;
    let mut jobs = Vec::new();
    for (i, name) in exp.scenes.iter().enumerate() {
        let scene = match Scene::bundled(name) {
            Some(s) => s,
            None => {
                let path: PathBuf = match base_dir {
                    Some(dir) => dir.join(name),
                    None => PathBuf::from(name),
                };
                crate::model::load_scene(&path)
                    .map_err(|e| Error::schema(format!("scenes[{i}]"), e.to_string()))?
            }
        };
        let fixed_goal = exp.goals.get(&scene.name).or_else(|| exp.goals.get(name));
        if let Some(g) = fixed_goal {
            if scene.goal(g).is_none() {
                return Err(Error::schema(
                    format!("goals.{name}"),
                    format!("goal `{g}` not in scene"),
                ));
            }
        }
        for &condition in &exp.conditions {
            for &seed in &exp.seeds {
                let goal = fixed_goal.cloned().unwrap_or_else(|| {
                    scene.goals[(seed % scene.goals.len() as u64) as usize]
                        .id
                        .clone()
                });
                let teacher = TeacherModel {
                    compliance: exp.teacher.compliance,
                    attend_duration: exp.teacher.attend_duration,
                    rng_seed: seed,
                    ..TeacherModel::new(goal, exp.teacher.rationality, condition)
                };
                jobs.push(Job {
                    scene: scene.clone(),
                    condition,
                    seed,
                    teacher,
                });
            }
        }
    }
    Ok(jobs)
}

fn run_job(job: &Job, cfg: &SimConfig) -> Result<EpisodeOutcome> {
    let ep = run_episode(&job.scene, &job.teacher, cfg, job.seed)?;
    Ok(EpisodeOutcome {
        scene: job.scene.name.clone(),
        condition: job.condition,
        seed: job.seed,
        goal: job.teacher.goal_id.clone(),
        metrics: ep.metrics,
    })
}

/// Runs every job on the current thread, in order.
pub fn run_jobs_sequential(jobs: &[Job], cfg: &SimConfig) -> Result<Vec<EpisodeOutcome>> {
    jobs.iter().map(|j| run_job(j, cfg)).collect()
}

/// Runs jobs across the rayon pool. Output order matches `jobs`.
#[cfg(feature = "parallel")]
pub fn run_jobs_parallel(jobs: &[Job], cfg: &SimConfig) -> Result<Vec<EpisodeOutcome>> {
    use rayon::prelude::*;
    jobs.par_iter().map(|j| run_job(j, cfg)).collect()
}

/// Parallel when the `parallel` feature is enabled, sequential otherwise.
pub fn run_jobs(jobs: &[Job], cfg: &SimConfig) -> Result<Vec<EpisodeOutcome>> {
    #[cfg(feature = "parallel")]
    {
        run_jobs_parallel(jobs, cfg)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_jobs_sequential(jobs, cfg)
    }
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat {
                n,
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Stat { n, mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub condition: AttentionPolicy,
    /// `None` for the across-scene aggregate.
    pub scene: Option<String>,
    pub episodes: usize,
    pub interaction_time: Stat,
    pub final_belief_in_goal: Stat,
    /// Over episodes where efficiency is defined (some interaction happened).
    pub teaching_efficiency: Stat,
    pub prompts_issued: Stat,
    pub distractor_proxy: Stat,
    pub ticks: Stat,
}

impl GroupSummary {
    fn of(condition: AttentionPolicy, scene: Option<String>, outcomes: &[&EpisodeOutcome]) -> Self {
        let col = |f: &dyn Fn(&EpisodeMetrics) -> f64| -> Stat {
            Stat::of(&outcomes.iter().map(|o| f(&o.metrics)).collect::<Vec<_>>())
        };
        let eff: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.metrics.teaching_efficiency)
            .collect();
        GroupSummary {
            condition,
            scene,
            episodes: outcomes.len(),
            interaction_time: col(&|m| m.interaction_time),
            final_belief_in_goal: col(&|m| m.final_belief_in_goal),
            teaching_efficiency: Stat::of(&eff),
            prompts_issued: col(&|m| m.prompts_issued as f64),
            distractor_proxy: col(&|m| m.distractor_proxy),
            ticks: col(&|m| m.ticks as f64),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchReport {
    pub episodes: Vec<EpisodeOutcome>,
    pub by_condition: Vec<GroupSummary>,
    pub by_scene: Vec<GroupSummary>,
}

impl BatchReport {
    pub fn from_outcomes(episodes: Vec<EpisodeOutcome>) -> Self {
        let mut conditions: Vec<AttentionPolicy> = episodes.iter().map(|e| e.condition).collect();
        conditions.sort();
        conditions.dedup();
        let mut scenes: Vec<String> = Vec::new();
        for e in &episodes {
            if !scenes.contains(&e.scene) {
                scenes.push(e.scene.clone());
            }
        }
        let by_condition = conditions
            .iter()
            .map(|&c| {
                let group: Vec<_> = episodes.iter().filter(|e| e.condition == c).collect();
                GroupSummary::of(c, None, &group)
            })
            .collect();
        let mut by_scene = Vec::new();
        for scene in &scenes {
            for &c in &conditions {
                let group: Vec<_> = episodes
                    .iter()
                    .filter(|e| e.condition == c && &e.scene == scene)
                    .collect();
                if !group.is_empty() {
                    by_scene.push(GroupSummary::of(c, Some(scene.clone()), &group));
                }
            }
        }
        BatchReport {
            episodes,
            by_condition,
            by_scene,
        }
    }

    pub fn scene_summary(&self, scene: &str, condition: AttentionPolicy) -> Option<&GroupSummary> {
        self.by_scene
            .iter()
            .find(|s| s.condition == condition && s.scene.as_deref() == Some(scene))
    }

    /// Writes `summary.csv`, `by_scene.csv`, `episodes.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_summary_csv(&dir.join("summary.csv"), &self.by_condition)?;
        write_summary_csv(&dir.join("by_scene.csv"), &self.by_scene)?;
        let mut w = csv::Writer::from_path(dir.join("episodes.csv")).map_err(csv_err)?;
        for e in &self.episodes {
            w.serialize(EpisodeRow::from(e)).map_err(csv_err)?;
        }
        w.flush()?;
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "by_condition": self.by_condition,
                "by_scene": self.by_scene,
            }))?,
        )?;
        Ok(())
    }

    /// Human-readable per-condition table (mean ± standard error).
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:>4} {:>18} {:>16} {:>18} {:>12} {:>14}",
            "condition",
            "n",
            "interaction [s]",
            "final b(g*)",
            "efficiency [1/s]",
            "prompts",
            "distractor"
        );
        for s in &self.by_condition {
            let cell =
                |st: &Stat, prec: usize| format!("{:.p$} ± {:.p$}", st.mean, st.se, p = prec);
            let _ = writeln!(
                out,
                "{:<28} {:>4} {:>18} {:>16} {:>18} {:>12} {:>14}",
                s.condition.as_str(),
                s.episodes,
                cell(&s.interaction_time, 2),
                cell(&s.final_belief_in_goal, 3),
                cell(&s.teaching_efficiency, 3),
                cell(&s.prompts_issued, 2),
                cell(&s.distractor_proxy, 2),
            );
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    condition: &'a str,
    scene: &'a str,
    episodes: usize,
    interaction_time_mean: f64,
    interaction_time_se: f64,
    final_belief_mean: f64,
    final_belief_se: f64,
    teaching_efficiency_n: usize,
    teaching_efficiency_mean: f64,
    teaching_efficiency_se: f64,
    prompts_mean: f64,
    prompts_se: f64,
    distractor_proxy_mean: f64,
    distractor_proxy_se: f64,
    ticks_mean: f64,
    ticks_se: f64,
}

fn write_summary_csv(path: &Path, rows: &[GroupSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in rows {
        w.serialize(SummaryRow {
            condition: s.condition.as_str(),
            scene: s.scene.as_deref().unwrap_or("*"),
            episodes: s.episodes,
            interaction_time_mean: s.interaction_time.mean,
            interaction_time_se: s.interaction_time.se,
            final_belief_mean: s.final_belief_in_goal.mean,
            final_belief_se: s.final_belief_in_goal.se,
            teaching_efficiency_n: s.teaching_efficiency.n,
            teaching_efficiency_mean: s.teaching_efficiency.mean,
            teaching_efficiency_se: s.teaching_efficiency.se,
            prompts_mean: s.prompts_issued.mean,
            prompts_se: s.prompts_issued.se,
            distractor_proxy_mean: s.distractor_proxy.mean,
            distractor_proxy_se: s.distractor_proxy.se,
            ticks_mean: s.ticks.mean,
            ticks_se: s.ticks.se,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EpisodeRow<'a> {
    scene: &'a str,
    condition: &'a str,
    seed: u64,
    goal: &'a str,
    interaction_time: f64,
    final_belief_in_goal: f64,
    teaching_efficiency: Option<f64>,
    prompts_issued: u32,
    distractor_proxy: f64,
    ticks: u64,
    reached_goal: bool,
}

impl<'a> From<&'a EpisodeOutcome> for EpisodeRow<'a> {
    fn from(e: &'a EpisodeOutcome) -> Self {
        EpisodeRow {
            scene: &e.scene,
            condition: e.condition.as_str(),
            seed: e.seed,
            goal: e.goal.as_str(),
            interaction_time: e.metrics.interaction_time,
            final_belief_in_goal: e.metrics.final_belief_in_goal,
            teaching_efficiency: e.metrics.teaching_efficiency,
            prompts_issued: e.metrics.prompts_issued,
            distractor_proxy: e.metrics.distractor_proxy,
            ticks: e.metrics.ticks,
            reached_goal: e.metrics.reached_goal,
        }
    }
}

/// Loads, plans and runs an experiment file, applying its config overrides.
pub fn run_batch(experiment: impl AsRef<Path>) -> Result<BatchReport> {
    let path = experiment.as_ref();
    let exp = load_experiment(path)?;
    run_experiment(&exp, path.parent(), &SimConfig::default())
}

pub fn run_experiment(
    exp: &Experiment,
    base_dir: Option<&Path>,
    base_cfg: &SimConfig,
) -> Result<BatchReport> {
    let cfg = base_cfg.with_overrides(&exp.overrides)?;
    let jobs = plan_jobs(exp, base_dir)?;
    Ok(BatchReport::from_outcomes(run_jobs(&jobs, &cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_of_known_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample sd = sqrt(5/3); se = sd / 2
        assert!((s.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).se, 0.0);
        assert!(Stat::of(&[]).mean.is_nan());
    }

    #[test]
    fn plan_counts_jobs() {
        let exp = Experiment::from_json(
            r#"{"scenes":["placing","avoiding","sorting","forgetting"],
                "conditions":["always_attending","prompt_driven","prompt_driven_with_overlay"],
                "seeds":[0,1,2,3,4,5,6,7,8,9]}"#,
        )
        .unwrap();
        let jobs = plan_jobs(&exp, None).unwrap();
        assert_eq!(jobs.len(), 120);
        assert_eq!(jobs[3].teacher.goal_id.as_str(), "top-back-side");
        let fixed = Experiment {
            goals: [("sorting".to_owned(), GoalId::from("lower-left"))].into(),
            ..exp
        };
        let jobs = plan_jobs(&fixed, None).unwrap();
        assert!(jobs.iter().filter(|j| j.scene.name == "sorting").all(|j| j
            .teacher
            .goal_id
            .as_str()
            == "lower-left"));
    }

    #[test]
    fn empty_seed_list_is_error() {
        let err = Experiment::from_json(
            r#"{"scenes":["sorting"],"conditions":["prompt_driven"],"seeds":[]}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("seeds"), "{err}");
    }

    #[test]
    fn schema_errors_carry_path() {
        let err = Experiment::from_json(
            r#"{"scenes":["sorting"],"conditions":["prompt_driven","telepathy"],"seeds":[1]}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("conditions[1]"), "{err}");
        let err = Experiment::from_json(
            r#"{"scenes":["sorting"],"conditions":["prompt_driven"],"seeds":[1],"teacher":{"compliance":"high"}}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("teacher.compliance"), "{err}");
    }

    #[test]
    fn unknown_goal_override_rejected() {
        let exp = Experiment::from_json(
            r#"{"scenes":["sorting"],"conditions":["prompt_driven"],"seeds":[1],"goals":{"sorting":"attic"}}"#,
        )
        .unwrap();
        assert!(plan_jobs(&exp, None).is_err());
    }

    #[test]
    fn small_batch_summarizes() {
        let exp = Experiment::from_json(
            r#"{"scenes":["sorting","avoiding"],"conditions":["always_attending","prompt_driven_with_overlay"],
                "seeds":[0,1],"overrides":{"max_ticks":300}}"#,
        )
        .unwrap();
        let report = run_experiment(&exp, None, &SimConfig::default()).unwrap();
        assert_eq!(report.episodes.len(), 8);
        assert_eq!(report.by_condition.len(), 2);
        assert_eq!(report.by_scene.len(), 4);
        assert!(report.episodes.iter().all(|e| e.metrics.ticks <= 300));
        let table = report.table();
        assert!(table.contains("always_attending"));
        let dir = tempfile::tempdir().unwrap();
        report.write_to(dir.path()).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 3);
        let episodes = std::fs::read_to_string(dir.path().join("episodes.csv")).unwrap();
        assert_eq!(episodes.lines().count(), 9);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let exp = Experiment::from_json(
            r#"{"scenes":["forgetting","placing"],"conditions":["prompt_driven","always_attending"],
                "seeds":[3,4,5]}"#,
        )
        .unwrap();
        let jobs = plan_jobs(&exp, None).unwrap();
        let cfg = SimConfig::default();
        assert_eq!(
            run_jobs_parallel(&jobs, &cfg).unwrap(),
            run_jobs_sequential(&jobs, &cfg).unwrap()
        );
    }
}
