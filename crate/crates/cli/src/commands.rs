use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use evtrack::evaluation::{
    evaluate, lambda_sweep, sweep_csv, TrackingInput, Trajectory, TrialSettings,
    DEFAULT_LAMBDA_GRID,
};
use evtrack::events::{seconds_to_micros, EventStream, Micros};
use evtrack::geometry::{read_map, write_map, CameraIntrinsics, MapPoint, PoseSE3};
use evtrack::representations::RepresentationConfig;
use evtrack::simulator::{simulate, MotionKind, SceneKind, SimulationConfig, TrajectorySpec};
use evtrack::tracker::{Representation, SequenceTracker, TrackerConfig};

use crate::settings::{parse_list, Settings};
use crate::{io_failure, Failure, RunManifest};

const PATH_KEYS: &[&str] = &["events", "map", "calib", "init", "est", "gt", "out"];

const TRACKER_KEYS: [&str; 6] = ["events", "map", "calib", "em-events", "ts-period", "delta"];
const TRACKER_DEFAULTS: [(&str, &str); 3] =
    [("em-events", "4000"), ("ts-period", "10"), ("delta", "30")];

pub fn simulate_settings() -> Settings {
    Settings::new(
        "simulate",
        &[
            "scene", "motion", "duration", "seed", "plane-depth", "contrast", "rate", "pauses",
            "out",
        ],
        &[
            ("scene", "checkerboard"),
            ("motion", "planar"),
            ("duration", "2"),
            ("seed", "0"),
            ("plane-depth", "2"),
            ("contrast", "0.1"),
            ("rate", "1000"),
            ("pauses", ""),
        ],
    )
}

pub fn track_settings() -> Settings {
    const KNOWN: &[&str] = &[
        "events", "map", "calib", "em-events", "ts-period", "delta", "repr", "lambda-th", "init",
        "perturb", "seed", "out",
    ];
    let mut d = TRACKER_DEFAULTS.to_vec();
    d.extend([("repr", "tsem"), ("lambda-th", "31"), ("perturb", "0"), ("seed", "0")]);
    Settings::new("track", KNOWN, &d)
}

pub fn evaluate_settings() -> Settings {
    Settings::new("evaluate", &["est", "gt", "max-dt", "out"], &[("max-dt", "5")])
}

pub fn sweep_settings() -> Settings {
    const KNOWN: &[&str] = &[
        "events", "map", "calib", "em-events", "ts-period", "delta", "grid", "gt", "trials",
        "seed", "perturb", "max-dt", "out",
    ];
    debug_assert!(TRACKER_KEYS.iter().all(|k| KNOWN.contains(k)));
    let mut d = TRACKER_DEFAULTS.to_vec();
    d.extend([
        ("grid", "10,31,100,158,251,400"),
        ("trials", "10"),
        ("seed", "0"),
        ("perturb", "0"),
        ("max-dt", "5"),
    ]);
    debug_assert_eq!(
        parse_list::<f64>("grid", d.iter().find(|p| p.0 == "grid").unwrap().1).unwrap(),
        DEFAULT_LAMBDA_GRID
    );
    Settings::new("sweep", KNOWN, &d)
}

pub fn dispatch(mut s: Settings) -> Result<(), Failure> {
    if s.command() == "evaluate" && s.opt("out").is_none() {
        // reports land next to the estimate by default
        let est = s.path("est")?;
        let dir = est.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        s.set("out", dir.to_string_lossy())?;
    }
    s.absolutize(PATH_KEYS)?;
    let out = s.path("out")?;
    std::fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    match s.command() {
        "simulate" => cmd_simulate(&s, &out),
        "track" => cmd_track(&s, &out),
        "evaluate" => cmd_evaluate(&s, &out),
        "sweep" => cmd_sweep(&s, &out),
        other => Err(Failure::Usage(format!("unknown command '{other}'"))),
    }
}

fn parse_pauses(raw: &str) -> Result<Vec<(f64, f64)>, Failure> {
    raw.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let bad = || Failure::Usage(format!("invalid --pauses entry '{p}', expected start-end"));
            let (a, b) = p.split_once('-').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

fn write_text(manifest: &mut RunManifest, name: &str, path: PathBuf, text: &str) -> Result<(), Failure> {
    std::fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
    manifest.artifact(name, &path);
    Ok(())
}

fn cmd_simulate(s: &Settings, out: &Path) -> Result<(), Failure> {
    let scene: SceneKind = s.get("scene")?;
    let motion: MotionKind = s.get("motion")?;
    let seed: u64 = s.get("seed")?;
    let mut spec = TrajectorySpec::for_kind(motion, s.get("duration")?, seed);
    spec.pauses = parse_pauses(s.require("pauses")?)?;
    let mut cfg = SimulationConfig::new(scene, spec);
    cfg.scene_seed = seed;
    cfg.plane_depth = s.get("plane-depth")?;
    cfg.contrast.threshold = s.get("contrast")?;
    cfg.rate_hz = s.get("rate")?;

    let mut m = RunManifest::new(s);
    m.seeds.insert("trajectory".into(), seed);
    m.seeds.insert("scene".into(), seed);
    let seq = m.time("simulate", || simulate(&cfg))?;
    let p = out.join("events.txt");
    seq.events.write_file(&p)?;
    m.artifact("events", &p);
    let p = out.join("gt_poses.txt");
    Trajectory::new(seq.ground_truth.clone())?.write_file(&p)?;
    m.artifact("ground_truth", &p);
    let p = out.join("map.txt");
    write_map(&p, &seq.map)?;
    m.artifact("map", &p);
    write_text(&mut m, "calib", out.join("calib.txt"), &cfg.camera.to_calib_line())?;
    m.write(out)?;
    eprintln!(
        "simulated {} events, {} map points, {} ground-truth poses into {}",
        seq.events.len(),
        seq.map.len(),
        seq.ground_truth.len(),
        out.display()
    );
    Ok(())
}

struct TrackerInputs {
    camera: CameraIntrinsics,
    events: EventStream,
    map: Vec<MapPoint>,
    representation: RepresentationConfig,
}

fn load_tracker_inputs(s: &Settings) -> Result<TrackerInputs, Failure> {
    let calib = s.path("calib")?;
    let camera = CameraIntrinsics::read_calib(&calib).map_err(|e| io_failure(&calib, e))?;
    let ev = s.path("events")?;
    let events =
        EventStream::read_file(&ev, camera.width, camera.height).map_err(|e| io_failure(&ev, e))?;
    if events.is_empty() {
        return Err(Failure::Usage(format!("{}: no events", ev.display())));
    }
    let mp = s.path("map")?;
    let map = read_map(&mp).map_err(|e| io_failure(&mp, e))?;
    if map.is_empty() {
        return Err(Failure::Usage(format!("{}: map is empty", mp.display())));
    }
    let representation = RepresentationConfig {
        delta_ms: s.get("delta")?,
        em_event_count: s.get("em-events")?,
        ts_period_ms: s.get("ts-period")?,
        ..Default::default()
    };
    representation.validate()?;
    Ok(TrackerInputs {
        camera,
        events,
        map,
        representation,
    })
}

fn read_trajectory(path: &Path) -> Result<Trajectory, Failure> {
    Trajectory::read_file(path).map_err(|e| io_failure(path, e))
}

fn cmd_track(s: &Settings, out: &Path) -> Result<(), Failure> {
    let mut m = RunManifest::new(s);
    let inputs = m.time("load", || load_tracker_inputs(s))?;
    let tracker = TrackerConfig {
        representation: s.get::<Representation>("repr")?,
        lambda_th: s.get("lambda-th")?,
        ..Default::default()
    };
    tracker.validate()?;
    let (t_start, initial): (Micros, PoseSE3) = match s.opt("init") {
        Some(p) => {
            let path = PathBuf::from(p);
            let init = read_trajectory(&path)?;
            *init
                .samples()
                .first()
                .ok_or_else(|| Failure::Usage(format!("{}: empty trajectory", path.display())))?
        }
        None => (inputs.events.first_time().unwrap_or(0), PoseSE3::identity()),
    };
    let t_end = inputs.events.last_time().unwrap_or(t_start);

    let seed: u64 = s.get("seed")?;
    let mut st = SequenceTracker::new(inputs.camera, inputs.map, tracker, inputs.representation);
    st.init_perturbation_px = s.get("perturb")?;
    st.seed = seed;
    m.seeds.insert("perturbation".into(), seed);
    let output = m.time("track", || st.run(&inputs.events, &initial, t_start, t_end))?;
    if output.records.is_empty() {
        return Err(Failure::Usage("event stream is too short for a single frame".into()));
    }

    let traj = Trajectory::new(output.poses())?;
    let p = out.join("trajectory.txt");
    traj.write_file(&p)?;
    m.artifact("trajectory", &p);
    write_text(&mut m, "metrics", out.join("metrics.csv"), &output.metrics_csv())?;
    m.write(out)?;

    let failed = output.failed_frames();
    let n = output.records.len();
    eprintln!(
        "tracked {n} frames, {failed} failed, EM used on {:.1}%",
        100.0 * output.em_fraction()
    );
    if 2 * failed > n {
        return Err(Failure::Tracking(format!("{failed} of {n} frames failed")));
    }
    Ok(())
}

fn max_dt(s: &Settings) -> Result<Micros, Failure> {
    let ms: f64 = s.get("max-dt")?;
    if ms.is_nan() || ms < 0.0 {
        return Err(Failure::Usage("--max-dt must be non-negative".into()));
    }
    Ok(seconds_to_micros(ms * 1e-3))
}

fn cmd_evaluate(s: &Settings, out: &Path) -> Result<(), Failure> {
    let mut m = RunManifest::new(s);
    let est = read_trajectory(&s.path("est")?)?;
    let gt = read_trajectory(&s.path("gt")?)?;
    let report = m.time("evaluate", || evaluate(&est, &gt, max_dt(s)?).map_err(Failure::from))?;

    let assoc = evtrack::evaluation::associate(&est, &gt, max_dt(s)?)?;
    let mut csv = String::from("t_sec,error_cm\n");
    for (pair, err) in assoc.pairs.iter().zip(&report.errors_cm) {
        let _ = writeln!(csv, "{:.6},{err:.6}", evtrack::events::micros_to_seconds(pair.t));
    }
    write_text(&mut m, "ate", out.join("ate.csv"), &csv)?;
    m.write(out)?;
    println!("ate_mean_cm {:.6}", report.mean_cm);
    println!("ate_rmse_cm {:.6}", report.rmse_cm());
    println!("matched {}", report.matched);
    println!("unpaired {}", report.unpaired);
    Ok(())
}

fn cmd_sweep(s: &Settings, out: &Path) -> Result<(), Failure> {
    let mut m = RunManifest::new(s);
    let inputs = m.time("load", || load_tracker_inputs(s))?;
    let ground_truth = read_trajectory(&s.path("gt")?)?;
    let grid: Vec<f64> = parse_list("grid", s.require("grid")?)?;
    if grid.is_empty() {
        return Err(Failure::Usage("--grid is empty".into()));
    }
    let settings = TrialSettings {
        trials: s.get("trials")?,
        seed: s.get("seed")?,
        init_perturbation_px: s.get("perturb")?,
        max_dt: max_dt(s)?,
    };
    m.seeds.insert("first_trial".into(), settings.seed);
    let input = TrackingInput {
        events: inputs.events,
        map: inputs.map,
        camera: inputs.camera,
        ground_truth,
    };
    let rows = m.time("sweep", || {
        lambda_sweep(
            &input,
            &TrackerConfig::default(),
            &inputs.representation,
            &settings,
            &grid,
        )
    })?;
    let csv = sweep_csv(&rows);
    write_text(&mut m, "sweep", out.join("sweep.csv"), &csv)?;
    m.write(out)?;
    print!("{csv}");
    Ok(())
}
