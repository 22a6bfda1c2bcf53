use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

mod commands;
mod settings;

use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "evtrack", version, about = "Event-camera pose tracking on time surfaces and event maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic event sequence with ground truth and a map.
    Simulate(SimulateArgs),
    /// Track an event stream against a map.
    Track(TrackArgs),
    /// Score an estimated trajectory against ground truth (ATE).
    Evaluate(EvaluateArgs),
    /// Run TSEM trials over a grid of switching thresholds.
    Sweep(SweepArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` file (or a run manifest); flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// office, poster or checkerboard
    #[arg(long)]
    scene: Option<String>,
    /// planar or 6dof
    #[arg(long)]
    motion: Option<String>,
    /// Seconds.
    #[arg(long)]
    duration: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Meters.
    #[arg(long)]
    plane_depth: Option<String>,
    /// Log-intensity contrast threshold.
    #[arg(long)]
    contrast: Option<String>,
    /// Rendering rate, Hz.
    #[arg(long)]
    rate: Option<String>,
    /// Still intervals as `start-end` seconds, comma separated.
    #[arg(long)]
    pauses: Option<String>,
}

#[derive(Debug, Args)]
struct TrackerFlags {
    #[arg(long)]
    events: Option<String>,
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    calib: Option<String>,
    /// Events aggregated into one event map.
    #[arg(long)]
    em_events: Option<String>,
    /// Milliseconds between tracked frames.
    #[arg(long)]
    ts_period: Option<String>,
    /// Time-surface decay, milliseconds.
    #[arg(long)]
    delta: Option<String>,
}

impl TrackerFlags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("events", self.events.clone()),
            ("map", self.map.clone()),
            ("calib", self.calib.clone()),
            ("em-events", self.em_events.clone()),
            ("ts-period", self.ts_period.clone()),
            ("delta", self.delta.clone()),
        ]
    }
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tracker: TrackerFlags,
    /// ts, em or tsem
    #[arg(long)]
    repr: Option<String>,
    #[arg(long)]
    lambda_th: Option<String>,
    /// Trajectory file whose first sample is the starting time and pose.
    #[arg(long)]
    init: Option<String>,
    /// Mean reprojection size (px) of a seeded random initial-guess perturbation.
    #[arg(long)]
    perturb: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    est: Option<String>,
    #[arg(long)]
    gt: Option<String>,
    /// Association tolerance, milliseconds.
    #[arg(long)]
    max_dt: Option<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tracker: TrackerFlags,
    /// Comma-separated switching thresholds.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    gt: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    perturb: Option<String>,
    #[arg(long)]
    max_dt: Option<String>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    out: Option<String>,
}

/// What a run did, with enough configuration to repeat it exactly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(settings: &Settings) -> Self {
        Self {
            command: settings.command().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: settings.values().clone(),
            seeds: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.artifacts
            .insert(name.to_string(), path.to_string_lossy().into_owned());
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_ms
            .insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, Failure> {
        let path = dir.join(format!("{}_manifest.json", self.command));
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Failure::Usage(format!("cannot encode manifest: {e}")))?;
        std::fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or malformed inputs.
    Usage(String),
    Tracking(String),
    Numerical(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Tracking(_) => 3,
            Self::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "{m}"),
            Self::Tracking(m) => write!(f, "tracking failed: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<evtrack::Error> for Failure {
    fn from(e: evtrack::Error) -> Self {
        use evtrack::Error as E;
        match e {
            E::NumericalFailure(m) => Self::Numerical(m),
            e @ (E::TrackingFailure(_) | E::InsufficientConstraints { .. }) => {
                Self::Tracking(e.to_string())
            }
            e => Self::Usage(e.to_string()),
        }
    }
}

pub fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn settings_for(cmd: &Command) -> Result<Settings, Failure> {
    let (mut s, common, pairs) = match cmd {
        Command::Simulate(a) => (
            commands::simulate_settings(),
            &a.common,
            vec![
                ("scene", a.scene.clone()),
                ("motion", a.motion.clone()),
                ("duration", a.duration.clone()),
                ("seed", a.seed.clone()),
                ("plane-depth", a.plane_depth.clone()),
                ("contrast", a.contrast.clone()),
                ("rate", a.rate.clone()),
                ("pauses", a.pauses.clone()),
            ],
        ),
        Command::Track(a) => {
            let mut p = a.tracker.pairs();
            p.extend([
                ("repr", a.repr.clone()),
                ("lambda-th", a.lambda_th.clone()),
                ("init", a.init.clone()),
                ("perturb", a.perturb.clone()),
                ("seed", a.seed.clone()),
            ]);
            (commands::track_settings(), &a.common, p)
        }
        Command::Evaluate(a) => (
            commands::evaluate_settings(),
            &a.common,
            vec![
                ("est", a.est.clone()),
                ("gt", a.gt.clone()),
                ("max-dt", a.max_dt.clone()),
            ],
        ),
        Command::Sweep(a) => {
            let mut p = a.tracker.pairs();
            p.extend([
                ("grid", a.grid.clone()),
                ("gt", a.gt.clone()),
                ("trials", a.trials.clone()),
                ("seed", a.seed.clone()),
                ("perturb", a.perturb.clone()),
                ("max-dt", a.max_dt.clone()),
            ]);
            (commands::sweep_settings(), &a.common, p)
        }
        Command::Replay(_) => unreachable!("replay has no settings of its own"),
    };
    if let Some(path) = &common.config {
        s.merge_file(path)?;
    }
    s.merge(pairs)?;
    s.merge([("out", common.out.clone())])?;
    Ok(s)
}

fn replay_settings(args: &ReplayArgs) -> Result<Settings, Failure> {
    let path = &args.manifest;
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let m: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("invalid manifest {}: {e}", path.display())))?;
    let mut s = match m.command.as_str() {
        "simulate" => commands::simulate_settings(),
        "track" => commands::track_settings(),
        "evaluate" => commands::evaluate_settings(),
        "sweep" => commands::sweep_settings(),
        other => return Err(Failure::Usage(format!("manifest names unknown command '{other}'"))),
    };
    for (k, v) in m.config {
        s.set(&k, v)?;
    }
    if let Some(out) = &args.out {
        s.set("out", out.clone())?;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let settings = match &cli.command {
        Command::Replay(a) => replay_settings(a)?,
        cmd => settings_for(cmd)?,
    };
    commands::dispatch(settings)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("evtrack: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
