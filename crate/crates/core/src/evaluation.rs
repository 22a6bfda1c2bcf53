//! Trajectory files, absolute trajectory error and the multi-trial and
//! threshold-sweep harnesses.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::events::{micros_to_seconds, seconds_to_micros, EventStream, Micros};
use crate::geometry::{CameraIntrinsics, MapPoint, PoseSE3};
use crate::representations::RepresentationConfig;
use crate::simulator::SimulatedSequence;
use crate::tracker::{Representation, SequenceOutput, SequenceTracker, TrackerConfig};

/// Default association tolerance, half the TS period.
pub const DEFAULT_MAX_DT: Micros = 5_000;

/// Threshold grid of the sweep: roughly `10^a` for `a` in 1, 1.5, 2, 2.2, 2.4, 2.6.
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [10.0, 31.0, 100.0, 158.0, 251.0, 400.0];

/// Camera-to-world poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<(Micros, PoseSE3)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(Micros, PoseSE3)>) -> Result<Self> {
        if let Some(i) = samples.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(Error::Format(format!(
                "trajectory timestamps must strictly increase (sample {})",
                i + 1
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(Micros, PoseSE3)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Applies `t` on the left of every pose (a change of world frame).
    pub fn transformed(&self, t: &PoseSE3) -> Self {
        Self {
            samples: self.samples.iter().map(|(s, p)| (*s, t.compose(p))).collect(),
        }
    }

    /// Parses `t_sec tx ty tz qx qy qz qw` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut samples: Vec<(Micros, PoseSE3)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let err = |msg: String| Error::Parse { line: lineno, msg };
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad number '{f}': {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != 8 {
                return Err(err(format!("expected 8 fields, got {}", v.len())));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(err("non-finite value".into()));
            }
            let q = Quaternion::new(v[7], v[4], v[5], v[6]);
            if q.norm() < 1e-6 {
                return Err(err("zero quaternion".into()));
            }
            let t = seconds_to_micros(v[0]);
            if let Some((prev, _)) = samples.last() {
                if t <= *prev {
                    return Err(Error::Format(format!(
                        "line {lineno}: timestamp does not increase"
                    )));
                }
            }
            let pose = PoseSE3::from_quaternion(
                &UnitQuaternion::from_quaternion(q),
                Vector3::new(v[1], v[2], v[3]),
            );
            samples.push((t, pose));
        }
        Ok(Self { samples })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.samples.len() * 100);
        for (t, p) in &self.samples {
            let q = p.quaternion();
            let tr = p.translation;
            let _ = writeln!(
                s,
                "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                micros_to_seconds(*t),
                tr.x,
                tr.y,
                tr.z,
                q.i,
                q.j,
                q.k,
                q.w
            );
        }
        s
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePair {
    pub t: Micros,
    pub est: Vector3<f64>,
    pub gt: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub pairs: Vec<PosePair>,
    /// Estimated samples with no ground truth within `max_dt`.
    pub unpaired: usize,
}

/// Pairs every estimated sample with the nearest ground-truth sample, if it
/// is within `max_dt`. At least two pairs are required.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: Micros) -> Result<Association> {
    let g = gt.samples();
    let mut pairs = Vec::new();
    let mut unpaired = 0;
    for (t, pe) in est.samples() {
        let i = g.partition_point(|(tg, _)| tg < t);
        let best = [i.checked_sub(1), (i < g.len()).then_some(i)]
            .into_iter()
            .flatten()
            .min_by_key(|&j| (g[j].0 - t).abs());
        match best {
            Some(j) if (g[j].0 - t).abs() <= max_dt => pairs.push(PosePair {
                t: *t,
                est: pe.translation,
                gt: g[j].1.translation,
            }),
            _ => unpaired += 1,
        }
    }
    if pairs.len() < 2 {
        return Err(Error::Domain(format!(
            "only {} trajectory samples could be associated within {max_dt} us, need 2",
            pairs.len()
        )));
    }
    Ok(Association { pairs, unpaired })
}

/// Rigid transform `A` minimizing `sum |A * est - gt|^2` (no scale).
pub fn align_se3(pairs: &[PosePair]) -> Result<PoseSE3> {
    if pairs.len() < 2 {
        return Err(Error::Domain("alignment needs at least 2 pairs".into()));
    }
    let n = pairs.len() as f64;
    let me = pairs.iter().map(|p| p.est).sum::<Vector3<f64>>() / n;
    let mg = pairs.iter().map(|p| p.gt).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in pairs {
        cov += (p.gt - mg) * (p.est - me).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NumericalFailure("SVD of the alignment covariance failed".into())),
    };
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let aligned = PoseSE3::from_parts(r, mg - r * me);
    // round-off can leave the SVD solution a hair worse than no motion at all
    let sse = |a: &PoseSE3| -> f64 {
        pairs
            .iter()
            .map(|p| (a.transform(&p.est) - p.gt).norm_squared())
            .sum()
    };
    if sse(&PoseSE3::identity()) <= sse(&aligned) {
        return Ok(PoseSE3::identity());
    }
    Ok(aligned)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    pub mean_cm: f64,
    pub errors_cm: Vec<f64>,
    pub matched: usize,
    pub unpaired: usize,
    /// Applied to the estimate before measuring.
    pub alignment: PoseSE3,
}

impl AteReport {
    pub fn rmse_cm(&self) -> f64 {
        (self.errors_cm.iter().map(|e| e * e).sum::<f64>() / self.errors_cm.len() as f64).sqrt()
    }
}

pub fn mean_ate_translation(assoc: &Association, alignment: &PoseSE3) -> AteReport {
    let errors_cm: Vec<f64> = assoc
        .pairs
        .iter()
        .map(|p| 100.0 * (alignment.transform(&p.est) - p.gt).norm())
        .collect();
    let mean_cm = errors_cm.iter().sum::<f64>() / errors_cm.len().max(1) as f64;
    AteReport {
        mean_cm,
        matched: errors_cm.len(),
        errors_cm,
        unpaired: assoc.unpaired,
        alignment: *alignment,
    }
}

/// Associate, align and measure in one go.
pub fn evaluate(est: &Trajectory, gt: &Trajectory, max_dt: Micros) -> Result<AteReport> {
    let assoc = associate(est, gt, max_dt)?;
    let alignment = align_se3(&assoc.pairs)?;
    Ok(mean_ate_translation(&assoc, &alignment))
}

/// Everything a tracking run needs, with the ground truth to score it.
#[derive(Debug, Clone)]
pub struct TrackingInput {
    pub events: EventStream,
    pub map: Vec<MapPoint>,
    pub camera: CameraIntrinsics,
    pub ground_truth: Trajectory,
}

impl TrackingInput {
    pub fn from_sequence(seq: &SimulatedSequence) -> Result<Self> {
        Ok(Self {
            events: seq.events.clone(),
            map: seq.map.clone(),
            camera: seq.config.camera,
            ground_truth: Trajectory::new(seq.ground_truth.clone())?,
        })
    }

    /// Tracking starts at the first ground-truth sample and ends at the last.
    pub fn track(&self, tracker: &SequenceTracker) -> Result<SequenceOutput> {
        let g = self.ground_truth.samples();
        let (Some(first), Some(last)) = (g.first(), g.last()) else {
            return Err(Error::Domain("ground truth is empty".into()));
        };
        tracker.run(&self.events, &first.1, first.0, last.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSettings {
    pub trials: usize,
    pub seed: u64,
    /// Mean reprojection size of the initial-guess perturbation; 0 disables it.
    pub init_perturbation_px: f64,
    pub max_dt: Micros,
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self {
            trials: 10,
            seed: 0,
            init_perturbation_px: 0.0,
            max_dt: DEFAULT_MAX_DT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub seed: u64,
    pub ate: AteReport,
    pub output: SequenceOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialsReport {
    pub trials: Vec<TrialOutcome>,
    pub mean_ate_cm: f64,
    pub em_fraction: f64,
}

/// Runs `settings.trials` independent tracking runs; trial `i` uses seed
/// `settings.seed + i`. Trials run in parallel, results are in trial order.
pub fn run_trials(
    input: &TrackingInput,
    tracker: &TrackerConfig,
    representation: &RepresentationConfig,
    settings: &TrialSettings,
) -> Result<TrialsReport> {
    if settings.trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let trials = (0..settings.trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = settings.seed.wrapping_add(i);
            let mut st = SequenceTracker::new(
                input.camera,
                input.map.clone(),
                tracker.clone(),
                representation.clone(),
            );
            st.init_perturbation_px = settings.init_perturbation_px;
            st.seed = seed;
            let output = input.track(&st)?;
            let est = Trajectory::new(output.poses())?;
            let ate = evaluate(&est, &input.ground_truth, settings.max_dt)?;
            Ok(TrialOutcome { seed, ate, output })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = trials.len() as f64;
    let mean_ate_cm = trials.iter().map(|t| t.ate.mean_cm).sum::<f64>() / n;
    let em_fraction = trials.iter().map(|t| t.output.em_fraction()).sum::<f64>() / n;
    Ok(TrialsReport {
        trials,
        mean_ate_cm,
        em_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda_th: f64,
    pub mean_ate_cm: f64,
    pub em_fraction: f64,
    pub trials: usize,
}

/// One set of TSEM trials per threshold in `grid`.
pub fn lambda_sweep(
    input: &TrackingInput,
    tracker: &TrackerConfig,
    representation: &RepresentationConfig,
    settings: &TrialSettings,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&lambda_th| {
            let cfg = TrackerConfig {
                lambda_th,
                representation: Representation::TsEm,
                ..tracker.clone()
            };
            let r = run_trials(input, &cfg, representation, settings)?;
            Ok(SweepRow {
                lambda_th,
                mean_ate_cm: r.mean_ate_cm,
                em_fraction: r.em_fraction,
                trials: r.trials.len(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda_th,mean_ate_cm,em_fraction,trials\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{}",
            r.lambda_th, r.mean_ate_cm, r.em_fraction, r.trials
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Tangent;

    fn traj(ts: &[Micros], f: impl Fn(f64) -> PoseSE3) -> Trajectory {
        Trajectory::new(ts.iter().map(|&t| (t, f(t as f64 * 1e-6))).collect()).unwrap()
    }

    fn wiggly(s: f64) -> PoseSE3 {
        PoseSE3::exp(&Tangent::new(
            s.sin(),
            (2.0 * s).cos(),
            0.3 * s,
            0.1 * s,
            -0.2 * s.sin(),
            0.05,
        ))
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        let p = PoseSE3::identity();
        assert!(Trajectory::new(vec![(1, p), (1, p)]).is_err());
        assert!(Trajectory::parse("0.1 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n").is_err());
    }

    #[test]
    fn trajectory_text_round_trip() {
        let t = traj(&[0, 10_000, 20_000, 35_000], wiggly);
        let back = Trajectory::parse(&t.to_text()).unwrap();
        assert_eq!(back.len(), t.len());
        for ((ta, a), (tb, b)) in t.samples().iter().zip(back.samples()) {
            assert_eq!(ta, tb);
            assert!((a.log() - b.log()).norm() < 1e-8);
        }
        assert_eq!(back.to_text(), t.to_text());
        assert!(Trajectory::parse("0.1 0 0 0 0 0 0\n").is_err());
        assert!(Trajectory::parse("0.1 0 0 0 0 0 0 0\n").is_err());
    }

    #[test]
    fn association_examples() {
        let ts: Vec<Micros> = (0..20).map(|i| i * 10_000).collect();
        let gt = traj(&ts, wiggly);
        let a = associate(&gt, &gt, DEFAULT_MAX_DT).unwrap();
        assert_eq!((a.pairs.len(), a.unpaired), (20, 0));

        let shifted: Vec<Micros> = ts.iter().map(|t| t + DEFAULT_MAX_DT / 2).collect();
        let est = traj(&shifted, wiggly);
        let a = associate(&est, &gt, DEFAULT_MAX_DT).unwrap();
        assert_eq!(a.pairs.len(), 20);
        for (p, t) in a.pairs.iter().zip(&ts) {
            assert_eq!(p.gt, wiggly(*t as f64 * 1e-6).translation);
        }

        let far: Vec<Micros> = ts.iter().map(|t| t + 1_000_000_000).collect();
        assert!(associate(&traj(&far, wiggly), &gt, DEFAULT_MAX_DT).is_err());
    }

    #[test]
    fn partial_association_counts_unpaired() {
        let gt = traj(&[0, 10_000, 20_000], wiggly);
        let est = traj(&[0, 10_000, 20_000, 90_000], wiggly);
        let a = associate(&est, &gt, DEFAULT_MAX_DT).unwrap();
        assert_eq!((a.pairs.len(), a.unpaired), (3, 1));
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let ts: Vec<Micros> = (0..30).map(|i| i * 10_000).collect();
        let gt = traj(&ts, wiggly);
        let r = evaluate(&gt, &gt, DEFAULT_MAX_DT).unwrap();
        assert_eq!(r.mean_cm, 0.0);
        assert!((r.alignment.log()).norm() < 1e-12);
        assert_eq!(r.matched, 30);
    }

    #[test]
    fn recovers_known_rigid_transform() {
        let ts: Vec<Micros> = (0..30).map(|i| i * 10_000).collect();
        let gt = traj(&ts, wiggly);
        let t = PoseSE3::exp(&Tangent::new(0.4, -1.0, 2.0, 0.3, -0.7, 1.1));
        let est = gt.transformed(&t);
        let a = associate(&est, &gt, DEFAULT_MAX_DT).unwrap();
        let al = align_se3(&a.pairs).unwrap();
        assert!((al.matrix() - t.inverse().matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn collinear_offset_is_absorbed() {
        let ts: Vec<Micros> = (0..10).map(|i| i * 10_000).collect();
        let line = |s: f64| PoseSE3::from_translation(Vector3::new(s, 0.0, 0.0));
        let gt = traj(&ts, line);
        let est = traj(&ts, |s| PoseSE3::from_translation(Vector3::new(s, 0.01, 0.0)));
        let r = evaluate(&est, &gt, DEFAULT_MAX_DT).unwrap();
        assert!(r.mean_cm < 1e-9);
    }

    #[test]
    fn sweep_csv_format() {
        let rows = vec![SweepRow {
            lambda_th: 31.0,
            mean_ate_cm: 1.5,
            em_fraction: 0.25,
            trials: 10,
        }];
        assert_eq!(
            sweep_csv(&rows),
            "lambda_th,mean_ate_cm,em_fraction,trials\n31,1.500000,0.250000,10\n"
        );
        assert_eq!(DEFAULT_LAMBDA_GRID, [10.0, 31.0, 100.0, 158.0, 251.0, 400.0]);
    }
}
