use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sa_core::batch::run_experiment;
use sa_core::replay::{read_log, replay, write_log_file, LogHeader};
use sa_core::{run_episode, AttentionPolicy, GoalId, Rationality, Scene, SimConfig, TeacherModel};

use crate::connection::ConnectionOptions;
use crate::server::{bind, serve, ServeOptions};

#[derive(Debug, Parser)]
#[command(
    name = "sa",
    version,
    about = "Shared-autonomy engine: simulate, batch, serve and replay"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulated episode.
    Run(RunArgs),
    /// Run an experiment file (scenes × conditions × seeds).
    Batch(BatchArgs),
    /// Serve interactive sessions over websocket at /ws.
    Serve(ServeArgs),
    /// Re-run a logged episode and compare every tick.
    Replay(ReplayArgs),
}

/// SimConfig overrides shared by several commands.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// Assistance weight in the blend.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Inference rationality.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Criticality threshold for prompts.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Tick length in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Speed limit.
    #[arg(long = "a-max")]
    pub a_max: Option<f64>,
}

impl ConfigFlags {
    pub fn apply(&self, base: &SimConfig) -> anyhow::Result<SimConfig> {
        let mut cfg = base.clone();
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.a_max {
            cfg.a_max = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TeacherKind {
    Rational,
    Noisy,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Bundled scene name or scene file.
    #[arg(long)]
    pub scene: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TeacherKind::Rational)]
    pub teacher: TeacherKind,
    /// Rationality of the noisy teacher.
    #[arg(long, default_value_t = 5.0)]
    pub teacher_beta: f64,
    /// attending, prompt or prompt+overlay.
    #[arg(long, default_value = "attending")]
    pub condition: AttentionPolicy,
    /// Hidden goal; defaults to goal number `seed mod goal count`.
    #[arg(long)]
    pub goal: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub compliance: f64,
    /// Write the JSON-lines episode log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[arg(long)]
    pub experiment: PathBuf,
    /// Directory for summary.csv, by_scene.csv, episodes.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SA_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Default scene for new sessions (bundled name or file).
    #[arg(long, default_value = "sorting")]
    pub scene: String,
    /// Wall-clock milliseconds per engine tick; defaults to real time.
    #[arg(long)]
    pub tick_ms: Option<u64>,
    /// Send a state message every N ticks.
    #[arg(long, default_value_t = 1)]
    pub broadcast_every: u32,
    #[command(flatten)]
    pub config: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Only verify; exit with status 1 at the first divergence.
    #[arg(long)]
    pub verify: bool,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(a) => run(a),
        Command::Batch(a) => batch(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Replay(a) => replay_cmd(a),
    }
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let scene =
        Scene::resolve(&args.scene).with_context(|| format!("loading scene `{}`", args.scene))?;
    let cfg = args.config.apply(&SimConfig::default())?;
    let goal = match args.goal {
        Some(g) => GoalId::from(g.as_str()),
        None => scene.goals[(args.seed % scene.goals.len() as u64) as usize]
            .id
            .clone(),
    };
    let rationality = match args.teacher {
        TeacherKind::Rational => Rationality::RATIONAL,
        TeacherKind::Noisy => Rationality::boltzmann(args.teacher_beta)?,
    };
    let teacher = TeacherModel {
        compliance: args.compliance,
        ..TeacherModel::new(goal, rationality, args.condition)
    };
    let episode = run_episode(&scene, &teacher, &cfg, args.seed)?;
    if let Some(path) = &args.log {
        write_log_file(
            path,
            &LogHeader::for_episode(&scene, &cfg, &episode),
            &episode.records,
        )
        .with_context(|| format!("writing {}", path.display()))?;
    }
    let m = &episode.metrics;
    let last = episode
        .records
        .last()
        .expect("episodes have at least one tick");
    let (lead, p) = last.belief.argmax();
    println!("scene           {}", scene.name);
    println!("goal            {}", teacher.goal_id);
    println!("condition       {}", args.condition.as_str());
    println!("ticks           {}", m.ticks);
    println!("leading goal    {} ({p:.4})", last.belief.ids()[lead]);
    println!("reached goal    {}", m.reached_goal);
    println!("interaction [s] {:.2}", m.interaction_time);
    println!("final b(g*)     {:.4}", m.final_belief_in_goal);
    match m.teaching_efficiency {
        Some(e) => println!("efficiency      {e:.4} /s"),
        None => println!("efficiency      n/a (no interaction)"),
    }
    println!("prompts         {}", m.prompts_issued);
    Ok(ExitCode::SUCCESS)
}

fn batch(args: BatchArgs) -> anyhow::Result<ExitCode> {
    let exp = sa_core::batch::load_experiment(&args.experiment)
        .with_context(|| format!("reading experiment {}", args.experiment.display()))?;
    let cfg = args.config.apply(&SimConfig::default())?;
    let report = run_experiment(&exp, args.experiment.parent(), &cfg)?;
    report.write_to(&args.out)?;
    print!("{}", report.table());
    println!(
        "wrote {} episodes to {}",
        report.episodes.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn serve_cmd(args: ServeArgs) -> anyhow::Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let scene =
        Scene::resolve(&args.scene).with_context(|| format!("loading scene `{}`", args.scene))?;
    let cfg = args.config.apply(&SimConfig::default())?;
    if args.broadcast_every == 0 {
        bail!("--broadcast-every must be at least 1");
    }
    let opts = ServeOptions {
        connection: ConnectionOptions {
            broadcast_every: args.broadcast_every,
            ..ConnectionOptions::new(scene, cfg)
        },
        tick_period: args.tick_ms.map(Duration::from_millis),
    };
    let addr = SocketAddr::new(args.host, args.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!("listening on ws://{}/ws", listener.local_addr()?);
        serve(listener, opts).await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn replay_cmd(args: ReplayArgs) -> anyhow::Result<ExitCode> {
    let log = read_log(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    let report = replay(&log)?;
    if !args.verify {
        for rec in &report.replayed {
            println!("{}", serde_json::to_string(rec)?);
        }
    }
    match &report.divergence {
        None => {
            eprintln!("replay ok: {} ticks verified", report.ticks_verified);
            Ok(ExitCode::SUCCESS)
        }
        Some(d) => {
            eprintln!(
                "replay diverged at tick {} ({}): {} [{} ticks verified]",
                d.tick, d.field, d.detail, report.ticks_verified
            );
            Ok(if args.verify {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
    }
}
