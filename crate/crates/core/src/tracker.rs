//! Forward compositional 3D-2D alignment of a semi-dense map onto negative
//! event frames, the degeneracy factor, and the TS / EM / TS+EM trackers.
//!
//! The objective is `sum_x rho(I(W(x, d; theta)))` over template entries,
//! with `I` the blurred negative frame and `rho` a Huber loss. Each
//! iteration linearizes the residuals in a right-composed increment,
//! `T(theta) * T(delta)`, solves the normal equations `H delta = g` and
//! composes the increment back onto the pose.
//!
//! The per-entry Jacobian is `dI/dp * dpi/dP * R(theta) * [I | -P_r^]`,
//! where the last factor depends only on the reference-frame point and is
//! computed once per template.

use nalgebra::{Matrix6, SymmetricEigen, Vector2, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::events::{EventStream, Micros};
use crate::geometry::{
    back_project, projection_jacobian, warp_with_pose, CameraIntrinsics, MapPoint, PoseSE3,
    Tangent, TemplateView,
};
use crate::representations::{
    bilinear_sample, image_gradient, prepare_for_tracking, render_event_map, render_time_surface,
    EventFrame, RepresentationConfig, TimeSurfaceState,
};

/// A 6-DoF pose needs at least this many scalar residuals.
pub const MIN_VALID_RESIDUALS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Representation {
    Ts,
    Em,
    TsEm,
}

impl std::str::FromStr for Representation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ts" => Ok(Self::Ts),
            "em" => Ok(Self::Em),
            "tsem" => Ok(Self::TsEm),
            other => Err(Error::Config(format!("unknown representation '{other}'"))),
        }
    }
}

/// Representation a frame was actually tracked on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UsedRepresentation {
    Ts,
    Em,
}

impl std::fmt::Display for UsedRepresentation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ts => "TS",
            Self::Em => "EM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberLoss {
    pub scale: f64,
}

impl HuberLoss {
    #[inline]
    pub fn cost(&self, r: f64) -> f64 {
        let a = r.abs();
        if a <= self.scale {
            0.5 * r * r
        } else {
            self.scale * (a - 0.5 * self.scale)
        }
    }

    /// IRLS weight `rho'(r) / r`.
    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        let a = r.abs();
        if a <= self.scale {
            1.0
        } else {
            self.scale / a
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub huber: HuberLoss,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub lambda_th: f64,
    pub representation: Representation,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            huber: HuberLoss { scale: 10.0 },
            max_iterations: 50,
            step_tolerance: 1e-6,
            lambda_th: 31.0,
            representation: Representation::TsEm,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.step_tolerance > 0.0) {
            return Err(Error::Config("step tolerance must be positive".into()));
        }
        if !(self.lambda_th >= 0.0) {
            return Err(Error::Config("lambda_th must be non-negative".into()));
        }
        if !(self.huber.scale > 0.0) {
            return Err(Error::Config("Huber scale must be positive".into()));
        }
        Ok(())
    }
}

/// Gauss-Newton normal equations `h * delta = g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub h: Matrix6<f64>,
    pub g: Tangent,
    pub cost: f64,
    pub valid_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    /// Reference camera to current camera.
    pub pose: PoseSE3,
    pub representation_used: UsedRepresentation,
    pub lambda: f64,
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    pub valid_count: usize,
    /// Cost at the initial guess followed by the cost after each accepted step.
    pub cost_history: Vec<f64>,
}

/// Template entries lifted to reference-frame 3D points.
#[derive(Debug, Clone)]
pub struct AlignmentTemplate {
    points: Vec<Vector3<f64>>,
}

impl AlignmentTemplate {
    pub fn new(template: &TemplateView, k: &CameraIntrinsics) -> Self {
        let points = template
            .entries
            .iter()
            .filter_map(|e| back_project(&e.pixel, e.depth, k).ok())
            .collect();
        Self { points }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Residual and Jacobian row of one template point under `pose`.
#[inline]
pub fn residual_and_jacobian(
    frame: &EventFrame,
    p_ref: &Vector3<f64>,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
) -> Option<(f64, Tangent)> {
    let pc = pose.transform(p_ref);
    if !(pc.z > 0.0) {
        return None;
    }
    let iz = 1.0 / pc.z;
    let px = Vector2::new(k.fx * pc.x * iz + k.cx, k.fy * pc.y * iz + k.cy);
    let grad = image_gradient(frame, &px)?;
    let r = bilinear_sample(frame, &px)?;
    let b = projection_jacobian(&pc, k).transpose() * grad;
    let a = pose.rotation.transpose() * b;
    let rot = p_ref.cross(&a);
    Some((r, Tangent::new(a.x, a.y, a.z, rot.x, rot.y, rot.z)))
}

fn check_frame(frame: &EventFrame) -> Result<()> {
    if !frame.kind.is_negative() || !frame.blurred {
        return Err(Error::Kind(format!(
            "alignment needs a blurred negative frame, got {:?} (blurred={})",
            frame.kind, frame.blurred
        )));
    }
    Ok(())
}

pub fn linearize_at(
    frame: &EventFrame,
    template: &AlignmentTemplate,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    huber: &HuberLoss,
) -> Result<LinearizedSystem> {
    let mut h = Matrix6::<f64>::zeros();
    let mut g = Tangent::zeros();
    let mut cost = 0.0;
    let mut valid = 0usize;
    for p in &template.points {
        let Some((r, j)) = residual_and_jacobian(frame, p, pose, k) else {
            continue;
        };
        let w = huber.weight(r);
        // rank-one update of the upper triangle
        for c in 0..6 {
            let wjc = w * j[c];
            for rr in 0..=c {
                h[(rr, c)] += wjc * j[rr];
            }
        }
        g -= j * (w * r);
        cost += huber.cost(r);
        valid += 1;
    }
    for c in 0..6 {
        for rr in 0..c {
            h[(c, rr)] = h[(rr, c)];
        }
    }
    if valid < MIN_VALID_RESIDUALS {
        return Err(Error::InsufficientConstraints {
            valid,
            required: MIN_VALID_RESIDUALS,
        });
    }
    if !cost.is_finite() {
        return Err(Error::NumericalFailure("non-finite cost".into()));
    }
    Ok(LinearizedSystem {
        h,
        g,
        cost,
        valid_count: valid,
    })
}

pub fn linearize(
    frame: &EventFrame,
    template: &TemplateView,
    theta: &Tangent,
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
) -> Result<LinearizedSystem> {
    check_frame(frame)?;
    linearize_at(
        frame,
        &AlignmentTemplate::new(template, k),
        &PoseSE3::exp(theta),
        k,
        &cfg.huber,
    )
}

/// Smallest eigenvalue of `h`, clamped at zero.
pub fn degeneracy_factor(system: &LinearizedSystem) -> f64 {
    min_eigenvalue(&system.h)
}

pub fn min_eigenvalue(h: &Matrix6<f64>) -> f64 {
    let eig = SymmetricEigen::new(*h);
    eig.eigenvalues.min().max(0.0)
}

fn solve_step(system: &LinearizedSystem) -> Result<Tangent> {
    if !system.h.iter().chain(system.g.iter()).all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite normal equations".into()));
    }
    let damping = 1e-9 * system.h.trace() / 6.0;
    let a = system.h + Matrix6::identity() * damping;
    // H is a sum of outer products, so a failed factorization means rank loss
    let delta = a.cholesky().map(|c| c.solve(&system.g)).ok_or_else(|| {
        Error::TrackingFailure("normal equations are rank deficient".into())
    })?;
    if delta.iter().all(|v| v.is_finite()) {
        Ok(delta)
    } else {
        Err(Error::NumericalFailure("non-finite pose increment".into()))
    }
}

/// Step halvings tried before an increment is given up on.
const MAX_HALVINGS: usize = 6;

fn align_prepared(
    frame: &EventFrame,
    template: &AlignmentTemplate,
    initial: &PoseSE3,
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
    initial_system: Option<LinearizedSystem>,
    representation: UsedRepresentation,
) -> Result<TrackResult> {
    let mut pose = *initial;
    let mut system = match initial_system {
        Some(s) => s,
        None => linearize_at(frame, template, &pose, k, &cfg.huber)?,
    };
    let lambda = degeneracy_factor(&system);
    let mut history = vec![system.cost];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let delta = solve_step(&system)?;
        if delta.norm() < cfg.step_tolerance {
            converged = true;
            break;
        }
        let mut step = delta;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = pose.compose(&PoseSE3::exp(&step));
            match linearize_at(frame, template, &candidate, k, &cfg.huber) {
                Ok(s) if s.cost <= system.cost => {
                    accepted = Some((candidate, s));
                    break;
                }
                Ok(_) | Err(Error::InsufficientConstraints { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((candidate, s)) = accepted else {
            // No descent along the Gauss-Newton direction: at a minimum up
            // to the resolution of the interpolated frame.
            converged = true;
            break;
        };
        pose = candidate;
        system = s;
        history.push(system.cost);
        if step.norm() < cfg.step_tolerance {
            converged = true;
            break;
        }
    }

    Ok(TrackResult {
        pose: pose.normalized(),
        representation_used: representation,
        lambda,
        iterations,
        final_cost: system.cost,
        converged,
        valid_count: system.valid_count,
        cost_history: history,
    })
}

/// Gauss-Newton alignment starting from `theta0`. The frame must already be
/// negative and blurred. The reported representation is inferred from the
/// frame kind.
pub fn align(
    frame: &EventFrame,
    template: &TemplateView,
    theta0: &Tangent,
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
) -> Result<TrackResult> {
    check_frame(frame)?;
    let repr = match frame.kind {
        crate::representations::FrameKind::NegativeEm => UsedRepresentation::Em,
        _ => UsedRepresentation::Ts,
    };
    align_prepared(
        frame,
        &AlignmentTemplate::new(template, k),
        &PoseSE3::exp(theta0),
        k,
        cfg,
        None,
        repr,
    )
}

/// Tracks on a raw time surface (negated and blurred here).
pub fn track_ts(
    ts_frame: &EventFrame,
    template: &TemplateView,
    theta0: &Tangent,
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
    rep: &RepresentationConfig,
) -> Result<TrackResult> {
    let prepared = prepare_for_tracking(ts_frame, rep)?;
    align_prepared(
        &prepared,
        &AlignmentTemplate::new(template, k),
        &PoseSE3::exp(theta0),
        k,
        cfg,
        None,
        UsedRepresentation::Ts,
    )
}

/// Tracks on a raw event map (negated and blurred here).
pub fn track_em(
    em_frame: &EventFrame,
    template: &TemplateView,
    theta0: &Tangent,
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
    rep: &RepresentationConfig,
) -> Result<TrackResult> {
    let prepared = prepare_for_tracking(em_frame, rep)?;
    align_prepared(
        &prepared,
        &AlignmentTemplate::new(template, k),
        &PoseSE3::exp(theta0),
        k,
        cfg,
        None,
        UsedRepresentation::Em,
    )
}

/// TS tracking with an EM fallback when the TS problem is degenerate at the
/// initial guess. The EM is only built when it is needed.
pub fn track_tsem_with<F>(
    ts_frame: &EventFrame,
    em_source: F,
    template: &TemplateView,
    theta0: &Tangent,
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
    rep: &RepresentationConfig,
) -> Result<TrackResult>
where
    F: FnOnce() -> Result<EventFrame>,
{
    let prepared_ts = prepare_for_tracking(ts_frame, rep)?;
    let points = AlignmentTemplate::new(template, k);
    let initial = PoseSE3::exp(theta0);
    // a zero threshold disables switching, so TSEM behaves exactly like TS
    let ts_system = match linearize_at(&prepared_ts, &points, &initial, k, &cfg.huber) {
        Ok(s) => Some(s),
        Err(Error::InsufficientConstraints { .. }) if cfg.lambda_th > 0.0 => None,
        Err(e) => return Err(e),
    };
    let ts_lambda = ts_system.as_ref().map_or(0.0, degeneracy_factor);

    if let Some(system) = ts_system.filter(|_| ts_lambda >= cfg.lambda_th) {
        return align_prepared(
            &prepared_ts,
            &points,
            &initial,
            k,
            cfg,
            Some(system),
            UsedRepresentation::Ts,
        );
    }

    let em = em_source().map_err(|e| {
        Error::TrackingFailure(format!(
            "TS degenerate (lambda={ts_lambda:.3}) and no event map available: {e}"
        ))
    })?;
    let prepared_em = prepare_for_tracking(&em, rep)?;
    match align_prepared(
        &prepared_em,
        &points,
        &initial,
        k,
        cfg,
        None,
        UsedRepresentation::Em,
    ) {
        Ok(mut r) => {
            r.lambda = ts_lambda;
            Ok(r)
        }
        Err(Error::InsufficientConstraints { valid, .. }) => Err(Error::TrackingFailure(format!(
            "both representations under-constrained (TS lambda={ts_lambda:.3}, EM valid={valid})"
        ))),
        Err(e) => Err(e),
    }
}

pub fn track_tsem(
    ts_frame: &EventFrame,
    em_frame: &EventFrame,
    template: &TemplateView,
    theta0: &Tangent,
    k: &CameraIntrinsics,
    cfg: &TrackerConfig,
    rep: &RepresentationConfig,
) -> Result<TrackResult> {
    if em_frame.trigger_time > ts_frame.trigger_time {
        return Err(Error::Precondition(format!(
            "event map at {} us is newer than the time surface at {} us",
            em_frame.trigger_time, ts_frame.trigger_time
        )));
    }
    track_tsem_with(
        ts_frame,
        || Ok(em_frame.clone()),
        template,
        theta0,
        k,
        cfg,
        rep,
    )
}

/// Mean pixel distance between the template warped by `a` and by `b`.
pub fn mean_reprojection_distance(
    template: &TemplateView,
    a: &PoseSE3,
    b: &PoseSE3,
    k: &CameraIntrinsics,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for e in &template.entries {
        if let (Some(pa), Some(pb)) = (
            warp_with_pose(&e.pixel, e.depth, a, k),
            warp_with_pose(&e.pixel, e.depth, b, k),
        ) {
            sum += (pa - pb).norm();
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Random tangent whose warp moves the template by `target_px` on average.
pub fn random_perturbation<R: Rng>(
    template: &TemplateView,
    k: &CameraIntrinsics,
    target_px: f64,
    rng: &mut R,
) -> Tangent {
    if target_px <= 0.0 || template.is_empty() {
        return Tangent::zeros();
    }
    let mean_depth =
        template.entries.iter().map(|e| e.depth).sum::<f64>() / template.len() as f64;
    // translation and rotation scaled so both move pixels comparably
    let dir = Tangent::from_fn(|i, _| {
        let u: f64 = rng.gen_range(-1.0..1.0);
        if i < 3 {
            u * mean_depth
        } else {
            u
        }
    });
    let id = PoseSE3::identity();
    let reproj = |s: f64| mean_reprojection_distance(template, &PoseSE3::exp(&(dir * s)), &id, k);
    let (mut lo, mut hi) = (0.0, 1e-6);
    while reproj(hi) < target_px && hi < 1e3 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if reproj(mid) < target_px {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    dir * (0.5 * (lo + hi))
}

/// Outcome of one synchronous trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub trigger_time: Micros,
    /// Camera to world after this frame.
    pub pose_wc: PoseSE3,
    /// `None` when the frame failed to track; the pose is then held.
    pub result: Option<TrackResult>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput {
    pub records: Vec<FrameRecord>,
}

impl SequenceOutput {
    /// Camera-to-world poses at each trigger.
    pub fn poses(&self) -> Vec<(Micros, PoseSE3)> {
        self.records
            .iter()
            .map(|r| (r.trigger_time, r.pose_wc))
            .collect()
    }

    pub fn failed_frames(&self) -> usize {
        self.records.iter().filter(|r| r.result.is_none()).count()
    }

    pub fn em_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let em = self
            .records
            .iter()
            .filter(|r| {
                r.result
                    .as_ref()
                    .is_some_and(|t| t.representation_used == UsedRepresentation::Em)
            })
            .count();
        em as f64 / self.records.len() as f64
    }

    /// CSV with header
    /// `trigger_time,representation_used,lambda,iterations,final_cost,valid_count`.
    pub fn metrics_csv(&self) -> String {
        let mut s =
            String::from("trigger_time,representation_used,lambda,iterations,final_cost,valid_count\n");
        for r in &self.records {
            let t = crate::events::micros_to_seconds(r.trigger_time);
            match &r.result {
                Some(res) => s.push_str(&format!(
                    "{t:.6},{},{:.6},{},{:.6},{}\n",
                    res.representation_used,
                    res.lambda,
                    res.iterations,
                    res.final_cost,
                    res.valid_count
                )),
                None => s.push_str(&format!("{t:.6},FAILED,0,0,0,0\n")),
            }
        }
        s
    }
}

/// Tracks a whole event stream against a world-frame map with synchronous
/// TS triggers. Each frame starts from the previous estimate; the template
/// is the map seen from that estimate.
#[derive(Debug, Clone)]
pub struct SequenceTracker {
    pub camera: CameraIntrinsics,
    pub map: Vec<MapPoint>,
    pub tracker: TrackerConfig,
    pub representation: RepresentationConfig,
    /// Mean reprojection size of a random perturbation added to each
    /// initial guess; zero disables it.
    pub init_perturbation_px: f64,
    pub seed: u64,
}

impl SequenceTracker {
    pub fn new(
        camera: CameraIntrinsics,
        map: Vec<MapPoint>,
        tracker: TrackerConfig,
        representation: RepresentationConfig,
    ) -> Self {
        Self {
            camera,
            map,
            tracker,
            representation,
            init_perturbation_px: 0.0,
            seed: 0,
        }
    }

    /// Runs from `t_start` (where the camera is at `initial_wc`) to the last
    /// trigger at or before `t_end`.
    pub fn run(
        &self,
        stream: &EventStream,
        initial_wc: &PoseSE3,
        t_start: Micros,
        t_end: Micros,
    ) -> Result<SequenceOutput> {
        use rand::SeedableRng;
        self.tracker.validate()?;
        self.representation.validate()?;
        let k = &self.camera;
        if stream.width != k.width || stream.height != k.height {
            return Err(Error::Config(format!(
                "event stream is {}x{} but the camera is {}x{}",
                stream.width, stream.height, k.width, k.height
            )));
        }
        let period = self.representation.ts_period_us();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let mut state = TimeSurfaceState::new(k.width, k.height);
        state.update(stream.events_in_window(Micros::MIN, t_start));

        let mut records = Vec::new();
        let mut current_wc = *initial_wc;
        let mut prev_t = t_start;
        let mut t = t_start + period;
        while t <= t_end {
            state.update(stream.events_in_window(prev_t, t));
            prev_t = t;

            let world_to_ref = current_wc.inverse();
            let template = TemplateView::from_map(&self.map, &world_to_ref, k);
            let theta0 = random_perturbation(&template, k, self.init_perturbation_px, &mut rng);
            let em_source = || {
                render_event_map(
                    stream.last_n_events(t, self.representation.em_event_count),
                    k.width,
                    k.height,
                )
            };

            let outcome = render_time_surface(&state, t, &self.representation).and_then(|ts| {
                match self.tracker.representation {
                    Representation::Ts => {
                        track_ts(&ts, &template, &theta0, k, &self.tracker, &self.representation)
                    }
                    Representation::Em => track_em(
                        &em_source()?,
                        &template,
                        &theta0,
                        k,
                        &self.tracker,
                        &self.representation,
                    ),
                    Representation::TsEm => track_tsem_with(
                        &ts,
                        em_source,
                        &template,
                        &theta0,
                        k,
                        &self.tracker,
                        &self.representation,
                    ),
                }
            });

            match outcome {
                Ok(res) => {
                    let cw = res.pose.compose(&world_to_ref);
                    current_wc = cw.inverse().normalized();
                    records.push(FrameRecord {
                        trigger_time: t,
                        pose_wc: current_wc,
                        result: Some(res),
                        failure: None,
                    });
                }
                Err(e @ (Error::NumericalFailure(_) | Error::Io(_) | Error::Config(_))) => {
                    return Err(e)
                }
                Err(e) => records.push(FrameRecord {
                    trigger_time: t,
                    pose_wc: current_wc,
                    result: None,
                    failure: Some(e.to_string()),
                }),
            }
            t += period;
        }
        Ok(SequenceOutput { records })
    }
}
