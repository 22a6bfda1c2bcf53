//! Deterministic synthetic event camera looking at a textured wall.
//!
//! The world frame is the camera frame at `t = 0`: x right, y down, z
//! forward. The wall is the plane `z = plane_depth`, textured periodically
//! along x and y. Poses are camera-to-world.
//!
//! Events follow the ideal contrast model: a pixel fires whenever its log
//! intensity has moved by the contrast threshold since its last event, with
//! the timestamp interpolated linearly inside the sampling step.

use std::collections::HashSet;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::events::{seconds_to_micros, Event, EventStream, Micros, Polarity};
use crate::geometry::{CameraIntrinsics, MapPoint, PoseSE3, TemplateEntry, TemplateView};

const LOG_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Office,
    Poster,
    Checkerboard,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "office" => Ok(Self::Office),
            "poster" => Ok(Self::Poster),
            "checkerboard" => Ok(Self::Checkerboard),
            other => Err(Error::Config(format!("unknown scene '{other}'"))),
        }
    }
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Office => "office",
            Self::Poster => "poster",
            Self::Checkerboard => "checkerboard",
        })
    }
}

/// Planar wall with a periodic grayscale texture in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    texture: Vec<f64>,
    tex_width: usize,
    tex_height: usize,
    /// Edge length of one texel, meters.
    pub texel_size: f64,
    pub plane_depth: f64,
}

/// Texel edge length used by the built-in textures.
pub const TEXEL_SIZE: f64 = 0.005;
/// Blur applied to built-in textures, in texels.
const TEXTURE_BLUR_TEXELS: f64 = 1.5;

impl SyntheticScene {
    pub fn from_texture(
        texture: Vec<f64>,
        tex_width: usize,
        tex_height: usize,
        texel_size: f64,
        plane_depth: f64,
    ) -> Result<Self> {
        if texture.len() != tex_width * tex_height || texture.is_empty() {
            return Err(Error::Config("texture size mismatch".into()));
        }
        if !(plane_depth > 0.0) || !(texel_size > 0.0) {
            return Err(Error::Config("plane depth and texel size must be positive".into()));
        }
        if texture.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("texture values must lie in [0, 1]".into()));
        }
        Ok(Self {
            texture,
            tex_width,
            tex_height,
            texel_size,
            plane_depth,
        })
    }

    pub fn uniform(value: f64, plane_depth: f64) -> Result<Self> {
        Self::from_texture(vec![value; 16], 4, 4, 0.1, plane_depth)
    }

    pub fn new(kind: SceneKind, plane_depth: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_7E47);
        let (w, h, tex) = match kind {
            SceneKind::Checkerboard => checkerboard_texture(),
            SceneKind::Poster => poster_texture(&mut rng),
            SceneKind::Office => office_texture(&mut rng),
        };
        let tex = blur_periodic(&tex, w, h, TEXTURE_BLUR_TEXELS);
        Self::from_texture(tex, w, h, TEXEL_SIZE, plane_depth)
    }

    /// Bilinear texture lookup at wall coordinates (meters), wrapping.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let u = x / self.texel_size;
        let v = y / self.texel_size;
        let (u0, v0) = (u.floor(), v.floor());
        let (au, av) = (u - u0, v - v0);
        let wrap = |i: f64, n: usize| (i as i64).rem_euclid(n as i64) as usize;
        let (x0, y0) = (wrap(u0, self.tex_width), wrap(v0, self.tex_height));
        let x1 = (x0 + 1) % self.tex_width;
        let y1 = (y0 + 1) % self.tex_height;
        let t = |x: usize, y: usize| self.texture[y * self.tex_width + x];
        let top = t(x0, y0) + au * (t(x1, y0) - t(x0, y0));
        let bottom = t(x0, y1) + au * (t(x1, y1) - t(x0, y1));
        top + av * (bottom - top)
    }

    /// Wall point hit by the ray through pixel `px` of a camera at `pose_wc`.
    pub fn intersect(
        &self,
        pose_wc: &PoseSE3,
        k: &CameraIntrinsics,
        px: &Vector2<f64>,
    ) -> Option<Vector3<f64>> {
        let dir_c = Vector3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0);
        let dir_w = pose_wc.rotation * dir_c;
        let o = pose_wc.translation;
        if !(dir_w.z > 0.0) {
            return None;
        }
        let s = (self.plane_depth - o.z) / dir_w.z;
        (s > 0.0).then(|| o + dir_w * s)
    }
}

fn checkerboard_texture() -> (usize, usize, Vec<f64>) {
    // 0.3 m squares, 12 x 12 squares per tile
    let square = 60;
    let n = square * 12;
    let mut t = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            t[y * n + x] = if (x / square + y / square) % 2 == 0 { 0.8 } else { 0.2 };
        }
    }
    (n, n, t)
}

fn poster_texture(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<f64>) {
    let n = 720;
    let mut t = vec![0.0; n * n];
    // smooth 1/f background
    let mut waves = Vec::new();
    for kx in -6i32..=6 {
        for ky in -6i32..=6 {
            if kx == 0 && ky == 0 {
                continue;
            }
            let f = ((kx * kx + ky * ky) as f64).sqrt();
            waves.push((kx as f64, ky as f64, rng.gen::<f64>() / f, rng.gen_range(0.0..std::f64::consts::TAU)));
        }
    }
    let tau = std::f64::consts::TAU / n as f64;
    for y in 0..n {
        for x in 0..n {
            let mut v = 0.0;
            for &(kx, ky, a, ph) in &waves {
                v += a * (tau * (kx * x as f64 + ky * y as f64) + ph).cos();
            }
            t[y * n + x] = v;
        }
    }
    normalize(&mut t, 0.3, 0.7);
    // sharp-edged shapes on top
    for _ in 0..40 {
        let (cx, cy) = (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64));
        let r = rng.gen_range(15.0..70.0);
        let val = rng.gen_range(0.1..0.9);
        for y in 0..n {
            for x in 0..n {
                let dx = wrapped_delta(x as f64 - cx, n as f64);
                let dy = wrapped_delta(y as f64 - cy, n as f64);
                if dx * dx + dy * dy < r * r {
                    t[y * n + x] = val;
                }
            }
        }
    }
    (n, n, t)
}

fn office_texture(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<f64>) {
    let n = 720;
    let mut t = vec![0.5; n * n];
    let fill = |t: &mut [f64], x0: usize, y0: usize, w: usize, h: usize, v: f64| {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                t[(y % n) * n + (x % n)] = v;
            }
        }
    };
    // furniture-sized blocks, then small clutter, then thin cables/frames
    for _ in 0..25 {
        let (w, h) = (rng.gen_range(60..200), rng.gen_range(40..160));
        let v = rng.gen_range(0.15..0.85);
        fill(&mut t, rng.gen_range(0..n), rng.gen_range(0..n), w, h, v);
    }
    for _ in 0..120 {
        let (w, h) = (rng.gen_range(8..40), rng.gen_range(8..40));
        let v = rng.gen_range(0.1..0.9);
        fill(&mut t, rng.gen_range(0..n), rng.gen_range(0..n), w, h, v);
    }
    for _ in 0..30 {
        let v = rng.gen_range(0.1..0.9);
        if rng.gen_bool(0.5) {
            fill(&mut t, rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(100..400), 3, v);
        } else {
            fill(&mut t, rng.gen_range(0..n), rng.gen_range(0..n), 3, rng.gen_range(100..400), v);
        }
    }
    (n, n, t)
}

fn wrapped_delta(d: f64, n: f64) -> f64 {
    d - n * (d / n).round()
}

fn normalize(t: &mut [f64], lo: f64, hi: f64) {
    let min = t.iter().copied().fold(f64::INFINITY, f64::min);
    let max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    for v in t.iter_mut() {
        *v = lo + (hi - lo) * (*v - min) / span;
    }
}

fn blur_periodic(t: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / s).collect();
    let mut tmp = vec![0.0; t.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = (x as i64 + j as i64 - r).rem_euclid(w as i64) as usize;
                acc += kv * t[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; t.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = (y as i64 + j as i64 - r).rem_euclid(h as i64) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc.clamp(0.0, 1.0);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionKind {
    /// Translation parallel to the wall plus rotation about the wall normal.
    Planar,
    SixDof,
}

impl std::str::FromStr for MotionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "planar" => Ok(Self::Planar),
            "6dof" | "sixdof" | "six_dof" => Ok(Self::SixDof),
            other => Err(Error::Config(format!("unknown motion '{other}'"))),
        }
    }
}

impl std::fmt::Display for MotionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Planar => "planar",
            Self::SixDof => "6dof",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub kind: MotionKind,
    pub duration_s: f64,
    /// Mean linear speed, m/s.
    pub speed: f64,
    /// Mean angular speed, rad/s.
    pub angular_speed: f64,
    pub seed: u64,
    /// Intervals `[start, end]` (seconds) during which the camera is still.
    pub pauses: Vec<(f64, f64)>,
    /// Length of the smooth slow-down / speed-up around each pause, seconds.
    pub pause_ramp_s: f64,
}

impl TrajectorySpec {
    /// Slow planar regime (about 0.3 m/s).
    pub fn planar(duration_s: f64, seed: u64) -> Self {
        Self {
            kind: MotionKind::Planar,
            duration_s,
            speed: 0.3,
            angular_speed: 0.15,
            seed,
            pauses: Vec::new(),
            pause_ramp_s: 0.05,
        }
    }

    /// Fast 6-DoF regime (about 1 m/s).
    pub fn six_dof(duration_s: f64, seed: u64) -> Self {
        Self {
            kind: MotionKind::SixDof,
            duration_s,
            speed: 1.0,
            angular_speed: 0.5,
            seed,
            pauses: Vec::new(),
            pause_ramp_s: 0.05,
        }
    }

    pub fn for_kind(kind: MotionKind, duration_s: f64, seed: u64) -> Self {
        match kind {
            MotionKind::Planar => Self::planar(duration_s, seed),
            MotionKind::SixDof => Self::six_dof(duration_s, seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("trajectory duration must be positive".into()));
        }
        if !(self.speed >= 0.0) || !(self.angular_speed >= 0.0) {
            return Err(Error::Config("speeds must be non-negative".into()));
        }
        for &(a, b) in &self.pauses {
            if !(b >= a) {
                return Err(Error::Config(format!("pause [{a}, {b}] is reversed")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Harmonic {
    amp: f64,
    omega: f64,
    phase: f64,
}

/// Smooth band-limited trajectory built from a [`TrajectorySpec`].
#[derive(Debug, Clone)]
pub struct TrajectoryModel {
    spec: TrajectorySpec,
    /// tx, ty, tz, rx, ry, rz
    axes: [Vec<Harmonic>; 6],
}

const HARMONICS: usize = 3;

fn eval_axis(h: &[Harmonic], tau: f64) -> f64 {
    h.iter()
        .map(|c| c.amp * ((c.omega * tau + c.phase).sin() - c.phase.sin()))
        .sum()
}

fn eval_axis_rate(h: &[Harmonic], tau: f64) -> f64 {
    h.iter()
        .map(|c| c.amp * c.omega * (c.omega * tau + c.phase).cos())
        .sum()
}

fn smootherstep_integral(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(6) - 3.0 * x.powi(5) + 2.5 * x.powi(4)
}

impl TrajectoryModel {
    pub fn new(spec: &TrajectorySpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let active = match spec.kind {
            MotionKind::Planar => [true, true, false, false, false, true],
            MotionKind::SixDof => [true; 6],
        };
        let mut axes: [Vec<Harmonic>; 6] = Default::default();
        for (i, axis) in axes.iter_mut().enumerate() {
            // draw for every axis so both kinds consume the rng identically
            let hs: Vec<Harmonic> = (0..HARMONICS)
                .map(|_| Harmonic {
                    amp: rng.gen_range(0.5..1.0),
                    omega: std::f64::consts::TAU * rng.gen_range(0.3..1.2),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                })
                .collect();
            if active[i] {
                *axis = hs;
            }
        }
        // scale so the mean speeds over the run match `spec`
        let n = 2000;
        let dt = spec.duration_s / n as f64;
        let mean_rate = |axes: &[Vec<Harmonic>]| {
            (0..n)
                .map(|j| {
                    let tau = (j as f64 + 0.5) * dt;
                    axes.iter()
                        .map(|h| eval_axis_rate(h, tau).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / n as f64
        };
        let rescale = |group: &mut [Vec<Harmonic>], target: f64| {
            let m = mean_rate(group);
            let s = if m > 0.0 { target / m } else { 0.0 };
            for h in group.iter_mut().flat_map(|v| v.iter_mut()) {
                h.amp *= s;
            }
        };
        let (trans, rot) = axes.split_at_mut(3);
        rescale(trans, spec.speed);
        rescale(rot, spec.angular_speed);
        Ok(Self {
            spec: spec.clone(),
            axes,
        })
    }

    pub fn spec(&self) -> &TrajectorySpec {
        &self.spec
    }

    /// Motion time: wall time minus the time lost to pauses.
    fn motion_time(&self, t: f64) -> f64 {
        let r = self.spec.pause_ramp_s;
        let mut lost = 0.0;
        for &(a, b) in &self.spec.pauses {
            if r > 0.0 {
                // slowing down over [a - r, a]
                let x = (t - (a - r)) / r;
                lost += r * smootherstep_integral(x);
            }
            // stopped over [a, b]
            lost += (t.min(b) - a).max(0.0);
            if r > 0.0 && t > b {
                // speeding up over [b, b + r]
                let x = ((t - b) / r).min(1.0);
                lost += r * (x - smootherstep_integral(x));
            }
        }
        t - lost
    }

    /// Camera-to-world pose at `t` seconds.
    pub fn pose_at(&self, t: f64) -> Result<PoseSE3> {
        if !(t >= 0.0 && t <= self.spec.duration_s + 1e-12) {
            return Err(Error::Domain(format!(
                "t={t} outside trajectory [0, {}]",
                self.spec.duration_s
            )));
        }
        let tau = self.motion_time(t);
        let v: Vec<f64> = self.axes.iter().map(|h| eval_axis(h, tau)).collect();
        let rotation = crate::geometry::so3_exp(&Vector3::new(v[3], v[4], v[5]));
        Ok(PoseSE3::from_parts(rotation, Vector3::new(v[0], v[1], v[2])))
    }
}

pub fn sample_pose(spec: &TrajectorySpec, t: f64) -> Result<PoseSE3> {
    TrajectoryModel::new(spec)?.pose_at(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastModel {
    /// Log-intensity step per event.
    pub threshold: f64,
    pub refractory_us: Micros,
}

impl Default for ContrastModel {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            refractory_us: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

fn render_row(
    scene: &SyntheticScene,
    pose_wc: &PoseSE3,
    k: &CameraIntrinsics,
    y: u32,
    out: &mut [f64],
) {
    for (x, v) in out.iter_mut().enumerate() {
        *v = scene
            .intersect(pose_wc, k, &Vector2::new(x as f64, y as f64))
            .map_or(0.0, |p| scene.sample(p.x, p.y));
    }
}

pub fn render_intensity(
    scene: &SyntheticScene,
    pose_wc: &PoseSE3,
    k: &CameraIntrinsics,
) -> IntensityImage {
    let mut values = vec![0.0; (k.width * k.height) as usize];
    values
        .par_chunks_mut(k.width as usize)
        .enumerate()
        .for_each(|(y, row)| render_row(scene, pose_wc, k, y as u32, row));
    IntensityImage {
        width: k.width,
        height: k.height,
        values,
    }
}

/// Pose log of the simulated camera, camera-to-world.
pub type PoseLog = Vec<(Micros, PoseSE3)>;

/// Emits events for every pixel over the whole trajectory, sampling poses at
/// `rate_hz`. Fails if more than 1% of pixels change by 3 thresholds or more
/// within a single sampling step.
pub fn generate_events(
    scene: &SyntheticScene,
    spec: &TrajectorySpec,
    model: &ContrastModel,
    k: &CameraIntrinsics,
    rate_hz: f64,
) -> Result<(EventStream, PoseLog)> {
    if !(model.threshold > 0.0) {
        return Err(Error::Config("contrast threshold must be positive".into()));
    }
    if !(rate_hz > 0.0) {
        return Err(Error::Config("sampling rate must be positive".into()));
    }
    let traj = TrajectoryModel::new(spec)?;
    let steps = (spec.duration_s * rate_hz).floor() as usize;
    let times: Vec<Micros> = (0..=steps)
        .map(|i| seconds_to_micros(i as f64 / rate_hz))
        .collect();
    let poses: Vec<PoseSE3> = (0..=steps)
        .map(|i| traj.pose_at(i as f64 / rate_hz))
        .collect::<Result<_>>()?;

    let (w, h) = (k.width as usize, k.height as usize);
    let c = model.threshold;
    let rows: Vec<(Vec<Event>, Vec<u32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut events = Vec::new();
            let mut violations = vec![0u32; steps];
            let mut prev = vec![0.0; w];
            let mut cur = vec![0.0; w];
            render_row(scene, &poses[0], k, y as u32, &mut prev);
            for v in prev.iter_mut() {
                *v = (*v + LOG_EPS).ln();
            }
            let mut reference = prev.clone();
            let mut last_fire = vec![Micros::MIN; w];
            for step in 0..steps {
                render_row(scene, &poses[step + 1], k, y as u32, &mut cur);
                let (t0, t1) = (times[step], times[step + 1]);
                for x in 0..w {
                    let l1 = (cur[x] + LOG_EPS).ln();
                    cur[x] = l1;
                    let l0 = prev[x];
                    if (l1 - l0).abs() >= 3.0 * c {
                        violations[step] += 1;
                    }
                    loop {
                        let (level, polarity) = if l1 - reference[x] >= c {
                            (reference[x] + c, Polarity::Positive)
                        } else if reference[x] - l1 >= c {
                            (reference[x] - c, Polarity::Negative)
                        } else {
                            break;
                        };
                        reference[x] = level;
                        let alpha = ((level - l0) / (l1 - l0)).clamp(0.0, 1.0);
                        let t = t0 + (alpha * (t1 - t0) as f64).round() as Micros;
                        if last_fire[x] != Micros::MIN && t - last_fire[x] < model.refractory_us {
                            continue;
                        }
                        last_fire[x] = t;
                        events.push(Event {
                            t,
                            x: x as u16,
                            y: y as u16,
                            polarity,
                        });
                    }
                }
                std::mem::swap(&mut prev, &mut cur);
            }
            (events, violations)
        })
        .collect();

    let mut violations = vec![0u32; steps];
    let mut events = Vec::new();
    for (ev, vio) in rows {
        events.extend(ev);
        for (a, b) in violations.iter_mut().zip(vio) {
            *a += b;
        }
    }
    let limit = (0.01 * (w * h) as f64).floor() as u32;
    if let Some((step, &count)) = violations.iter().enumerate().find(|(_, &v)| v > limit) {
        return Err(Error::Precondition(format!(
            "sampling rate {rate_hz} Hz too low: {count} pixels changed by >= 3C in step {step}"
        )));
    }
    // stable: rows were concatenated in y order and each row is in x order per step
    events.sort_by_key(|e| (e.t, e.y, e.x));
    let stream = EventStream::new(events, k.width, k.height)?;
    let log = times.into_iter().zip(poses).collect();
    Ok((stream, log))
}

/// Semi-dense map seen from `reference_wc`: wall points behind every pixel
/// whose rendered-intensity gradient magnitude exceeds `gradient_floor`.
pub fn ground_truth_map(
    scene: &SyntheticScene,
    k: &CameraIntrinsics,
    reference_wc: &PoseSE3,
    gradient_floor: f64,
) -> (Vec<MapPoint>, TemplateView) {
    let img = render_intensity(scene, reference_wc, k);
    let (w, h) = (k.width as usize, k.height as usize);
    let world_to_ref = reference_wc.inverse();
    let mut map = Vec::new();
    let mut entries = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = 0.5 * (img.values[y * w + x + 1] - img.values[y * w + x - 1]);
            let gy = 0.5 * (img.values[(y + 1) * w + x] - img.values[(y - 1) * w + x]);
            if !((gx * gx + gy * gy).sqrt() > gradient_floor) {
                continue;
            }
            let px = Vector2::new(x as f64, y as f64);
            let Some(pw) = scene.intersect(reference_wc, k, &px) else {
                continue;
            };
            let depth = world_to_ref.transform(&pw).z;
            map.push(MapPoint { position: pw });
            entries.push(TemplateEntry { pixel: px, depth });
        }
    }
    (
        map,
        TemplateView {
            reference_pose: world_to_ref,
            entries,
        },
    )
}

/// Union of [`ground_truth_map`] over several keyframes, de-duplicated on a
/// wall grid of `cell` meters.
pub fn keyframe_map(
    scene: &SyntheticScene,
    k: &CameraIntrinsics,
    keyframes_wc: &[PoseSE3],
    gradient_floor: f64,
    cell: f64,
) -> Vec<MapPoint> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for kf in keyframes_wc {
        let (pts, _) = ground_truth_map(scene, k, kf, gradient_floor);
        for p in pts {
            let key = (
                (p.position.x / cell).floor() as i64,
                (p.position.y / cell).floor() as i64,
            );
            if seen.insert(key) {
                out.push(p);
            }
        }
    }
    out
}

/// Everything needed to run and score a synthetic sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub scene: SceneKind,
    pub scene_seed: u64,
    pub plane_depth: f64,
    pub trajectory: TrajectorySpec,
    pub contrast: ContrastModel,
    pub camera: CameraIntrinsics,
    pub rate_hz: f64,
    pub gradient_floor: f64,
    /// Spacing of the keyframes whose views make up the map, seconds.
    pub map_keyframe_interval_s: f64,
}

impl SimulationConfig {
    pub fn new(scene: SceneKind, trajectory: TrajectorySpec) -> Self {
        Self {
            scene,
            scene_seed: 0,
            plane_depth: 2.0,
            trajectory,
            contrast: ContrastModel::default(),
            camera: default_camera(),
            rate_hz: 1000.0,
            gradient_floor: 0.05,
            map_keyframe_interval_s: 0.1,
        }
    }
}

pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 200.0,
        fy: 200.0,
        cx: 120.0,
        cy: 90.0,
        width: 240,
        height: 180,
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedSequence {
    pub config: SimulationConfig,
    pub events: EventStream,
    pub ground_truth: PoseLog,
    pub map: Vec<MapPoint>,
}

pub fn simulate(config: &SimulationConfig) -> Result<SimulatedSequence> {
    config.camera.validate()?;
    let scene = SyntheticScene::new(config.scene, config.plane_depth, config.scene_seed)?;
    let (events, ground_truth) = generate_events(
        &scene,
        &config.trajectory,
        &config.contrast,
        &config.camera,
        config.rate_hz,
    )?;
    let model = TrajectoryModel::new(&config.trajectory)?;
    let n_kf = (config.trajectory.duration_s / config.map_keyframe_interval_s).floor() as usize;
    let keyframes: Vec<PoseSE3> = (0..=n_kf)
        .map(|i| model.pose_at((i as f64 * config.map_keyframe_interval_s).min(config.trajectory.duration_s)))
        .collect::<Result<_>>()?;
    let cell = config.plane_depth / config.camera.fx;
    let map = keyframe_map(&scene, &config.camera, &keyframes, config.gradient_floor, cell);
    Ok(SimulatedSequence {
        config: config.clone(),
        events,
        ground_truth,
        map,
    })
}
