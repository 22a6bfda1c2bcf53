use std::path::Path;
use std::process::{Command, Output};

fn evtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evtrack"))
        .args(args)
        .output()
        .expect("failed to spawn evtrack")
}

fn ok(args: &[&str]) -> Output {
    let out = evtrack(args);
    assert!(
        out.status.success(),
        "evtrack {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Simulates a short planar checkerboard sequence into `dir`.
fn simulate_into(dir: &Path, seed: &str) {
    ok(&["simulate", "--duration", "0.3", "--seed", seed, "--out", p(dir)]);
}

fn track_args<'a>(seq: &'a str, out: &'a str) -> Vec<String> {
    [
        "track",
        "--events",
        &format!("{seq}/events.txt"),
        "--map",
        &format!("{seq}/map.txt"),
        "--calib",
        &format!("{seq}/calib.txt"),
        "--init",
        &format!("{seq}/gt_poses.txt"),
        "--out",
        out,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_track(seq: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = track_args(p(seq), p(out));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    evtrack(&refs)
}

#[test]
fn simulate_is_deterministic_and_writes_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    simulate_into(&a, "5");
    simulate_into(&b, "5");
    for f in ["events.txt", "gt_poses.txt", "map.txt", "calib.txt"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(a.join("simulate_manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seeds"]["trajectory"], 5);
    assert_eq!(manifest["config"]["scene"], "checkerboard");

    let c = dir.path().join("c");
    simulate_into(&c, "6");
    assert_ne!(read(a.join("events.txt")), read(c.join("events.txt")));
}

#[test]
fn replay_reproduces_every_command_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    simulate_into(&seq, "2");
    let run = dir.path().join("run");
    assert!(run_track(&seq, &run, &["--perturb", "0.5", "--seed", "4"]).status.success());
    ok(&["evaluate", "--est", p(&run.join("trajectory.txt")), "--gt", p(&seq.join("gt_poses.txt"))]);

    let again = dir.path().join("again");
    for (manifest, files) in [
        ("seq/simulate_manifest.json", &["events.txt", "gt_poses.txt", "map.txt", "calib.txt"][..]),
        ("run/track_manifest.json", &["trajectory.txt", "metrics.csv"][..]),
        ("run/evaluate_manifest.json", &["ate.csv"][..]),
    ] {
        let src = dir.path().join(manifest);
        ok(&["replay", p(&src), "--out", p(&again)]);
        let orig = src.parent().unwrap();
        for f in files {
            assert_eq!(read(orig.join(f)), read(again.join(f)), "{manifest}: {f} differs");
        }
    }
}

#[test]
fn tsem_with_zero_threshold_matches_ts() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    simulate_into(&seq, "1");
    let (ts, tsem) = (dir.path().join("ts"), dir.path().join("tsem"));
    assert!(run_track(&seq, &ts, &["--repr", "ts"]).status.success());
    assert!(run_track(&seq, &tsem, &["--repr", "tsem", "--lambda-th", "0"]).status.success());
    assert_eq!(read(ts.join("trajectory.txt")), read(tsem.join("trajectory.txt")));
}

#[test]
fn evaluate_reports_small_error_for_a_tracked_run() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    simulate_into(&seq, "0");
    let run = dir.path().join("run");
    assert!(run_track(&seq, &run, &[]).status.success());
    let out = ok(&[
        "evaluate",
        "--est",
        p(&run.join("trajectory.txt")),
        "--gt",
        p(&seq.join("gt_poses.txt")),
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mean: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("ate_mean_cm "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mean < 5.0, "{stdout}");
    let csv = String::from_utf8(read(run.join("ate.csv"))).unwrap();
    assert!(csv.starts_with("t_sec,error_cm\n"));
    assert_eq!(csv.lines().count(), 31);

    // a trajectory evaluated against itself has zero error
    let out = ok(&[
        "evaluate",
        "--est",
        p(&seq.join("gt_poses.txt")),
        "--gt",
        p(&seq.join("gt_poses.txt")),
        "--out",
        p(&dir.path().join("self")),
    ]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("ate_mean_cm 0.000000"));
}

#[test]
fn sweep_writes_the_csv_and_extreme_thresholds_pick_one_representation() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    simulate_into(&seq, "3");
    let out_dir = dir.path().join("sweep");
    let s = p(&seq);
    let out = ok(&[
        "sweep",
        "--events",
        &format!("{s}/events.txt"),
        "--map",
        &format!("{s}/map.txt"),
        "--calib",
        &format!("{s}/calib.txt"),
        "--gt",
        &format!("{s}/gt_poses.txt"),
        "--grid",
        "0,1e15",
        "--trials",
        "2",
        "--out",
        p(&out_dir),
    ]);
    let csv = String::from_utf8(read(out_dir.join("sweep.csv"))).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), csv);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda_th,mean_ate_cm,em_fraction,trials");
    let em = |l: &str| l.split(',').nth(2).unwrap().parse::<f64>().unwrap();
    assert_eq!(em(lines[1]), 0.0);
    assert_eq!(em(lines[2]), 1.0);
    assert!(lines[1].ends_with(",2") && lines[2].ends_with(",2"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    simulate_into(&seq, "1");
    let cfg = dir.path().join("track.cfg");
    std::fs::write(&cfg, "# tracker\nrepr = em\nlambda_th = 7\nem-events = 3000\n").unwrap();
    let run = dir.path().join("run");
    assert!(run_track(&seq, &run, &["--config", p(&cfg), "--repr", "ts"]).status.success());
    let m: serde_json::Value =
        serde_json::from_slice(&read(run.join("track_manifest.json"))).unwrap();
    assert_eq!(m["config"]["repr"], "ts");
    assert_eq!(m["config"]["lambda-th"], "7");
    assert_eq!(m["config"]["em-events"], "3000");

    // a manifest also works as a config file
    let run2 = dir.path().join("run2");
    let out = evtrack(&[
        "track",
        "--config",
        p(&run.join("track_manifest.json")),
        "--out",
        p(&run2),
    ]);
    assert!(out.status.success());
    assert_eq!(read(run.join("trajectory.txt")), read(run2.join("trajectory.txt")));
}

#[test]
fn input_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    simulate_into(&seq, "1");
    let out = dir.path().join("o");

    let missing = dir.path().join("missing");
    assert_eq!(run_track(&missing, &out, &[]).status.code(), Some(2));
    assert_eq!(evtrack(&["track", "--bogus"]).status.code(), Some(2));
    assert_eq!(evtrack(&["simulate", "--scene", "moon", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(run_track(&seq, &out, &["--repr", "xyz"]).status.code(), Some(2));
    assert_eq!(run_track(&seq, &out, &["--lambda-th", "abc"]).status.code(), Some(2));

    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "colour = blue\n").unwrap();
    let r = run_track(&seq, &out, &["--config", p(&bad_cfg)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("colour"));

    let bad_map = dir.path().join("bad_map.txt");
    std::fs::write(&bad_map, "1 2\n").unwrap();
    let mut args = track_args(p(&seq), p(&out));
    args[4] = p(&bad_map).to_string();
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let r = evtrack(&refs);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 1"));
}

#[test]
fn mostly_failed_tracking_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    simulate_into(&seq, "1");
    // every point sits behind the camera, so no frame has constraints
    let behind = dir.path().join("behind.txt");
    std::fs::write(&behind, "0 0 -2\n0.1 0 -2\n0 0.1 -2\n0.1 0.1 -2\n").unwrap();
    let out = dir.path().join("o");
    let mut args = track_args(p(&seq), p(&out));
    args[4] = p(&behind).to_string();
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let r = evtrack(&refs);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    // outputs are still written for inspection
    assert!(out.join("metrics.csv").exists());
    assert!(String::from_utf8(read(out.join("metrics.csv"))).unwrap().contains("FAILED"));
}
