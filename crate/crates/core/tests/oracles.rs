use evtrack::geometry::{PoseSE3, Tangent, TemplateEntry, TemplateView};
use evtrack::representations::{EventFrame, RepresentationConfig};
use evtrack::simulator::{ground_truth_map, sample_pose, SceneKind, SyntheticScene, TrajectorySpec};
use evtrack::tracker::{
    align, linearize, mean_reprojection_distance, random_perturbation, Representation,
    TrackerConfig,
};
use nalgebra::{Matrix6, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

/// Straight bilinear lookup on the raw grid, written out independently.
fn lookup(f: &EventFrame, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (ax, ay) = (x - x0, y - y0);
    let (i, j) = (x0 as u32, y0 as u32);
    let v = |di: u32, dj: u32| f.values[((j + dj) * f.width + i + di) as usize];
    (1.0 - ay) * ((1.0 - ax) * v(0, 0) + ax * v(1, 0)) + ay * ((1.0 - ax) * v(0, 1) + ax * v(1, 1))
}

fn huber(r: f64, k: f64) -> f64 {
    if r.abs() <= k {
        0.5 * r * r
    } else {
        k * (r.abs() - 0.5 * k)
    }
}

struct Oracle<'a> {
    frame: &'a EventFrame,
    points: Vec<Vector3<f64>>,
    k: evtrack::geometry::CameraIntrinsics,
}

impl Oracle<'_> {
    fn residual(&self, p: &Vector3<f64>, pose: &PoseSE3) -> f64 {
        let q = pose.rotation * p + pose.translation;
        let x = self.k.fx * q.x / q.z + self.k.cx;
        let y = self.k.fy * q.y / q.z + self.k.cy;
        lookup(self.frame, x, y)
    }

    fn jacobian(&self, p: &Vector3<f64>, pose: &PoseSE3) -> Tangent {
        let eps = 1e-6;
        Tangent::from_fn(|i, _| {
            let mut e = Tangent::zeros();
            e[i] = eps;
            let plus = self.residual(p, &pose.compose(&PoseSE3::exp(&e)));
            let minus = self.residual(p, &pose.compose(&PoseSE3::exp(&(-e))));
            (plus - minus) / (2.0 * eps)
        })
    }

    fn cost(&self, pose: &PoseSE3, scale: f64) -> f64 {
        self.points.iter().map(|p| huber(self.residual(p, pose), scale)).sum()
    }
}

fn random_template(rng: &mut ChaCha8Rng, n: usize) -> TemplateView {
    let entries = (0..n)
        .map(|_| TemplateEntry {
            pixel: Vector2::new(rng.gen_range(30.0..210.0), rng.gen_range(30.0..150.0)),
            depth: rng.gen_range(1.0..4.0),
        })
        .collect();
    TemplateView {
        reference_pose: PoseSE3::identity(),
        entries,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn normal_equations_match_finite_difference_oracle() {
    let k = common::camera();
    let frame = common::bilinear_frame(&k, 20.0, 0.3, 0.4, 0.002);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = TrackerConfig {
        representation: Representation::Ts,
        ..Default::default()
    };
    for _ in 0..20 {
        let template = random_template(&mut rng, 200);
        let theta = Tangent::from_fn(|i, _| {
            if i < 3 {
                rng.gen_range(-0.02..0.02)
            } else {
                rng.gen_range(-0.01..0.01)
            }
        });
        let sys = linearize(&frame, &template, &theta, &k, &cfg).unwrap();
        let pose = PoseSE3::exp(&theta);
        let oracle = Oracle {
            frame: &frame,
            points: template
                .entries
                .iter()
                .map(|e| evtrack::geometry::back_project(&e.pixel, e.depth, &k).unwrap())
                .collect(),
            k,
        };
        let scale = cfg.huber.scale;
        let mut h = Matrix6::zeros();
        let mut g = Tangent::zeros();
        for p in &oracle.points {
            let r = oracle.residual(p, &pose);
            let w = if r.abs() <= scale { 1.0 } else { scale / r.abs() };
            let j = oracle.jacobian(p, &pose);
            h += j * j.transpose() * w;
            g -= j * (w * r);
        }
        assert_eq!(sys.valid_count, oracle.points.len());
        assert!(rel(sys.cost, oracle.cost(&pose, scale)) < 1e-12);
        assert!((sys.h - h).norm() / h.norm() < 1e-3, "H mismatch");
        assert!((sys.g - g).norm() / g.norm() < 1e-3, "g mismatch");

        // g is also minus the gradient of the objective itself
        let eps = 1e-6;
        let grad = Tangent::from_fn(|i, _| {
            let mut e = Tangent::zeros();
            e[i] = eps;
            (oracle.cost(&pose.compose(&PoseSE3::exp(&e)), scale)
                - oracle.cost(&pose.compose(&PoseSE3::exp(&(-e))), scale))
                / (2.0 * eps)
        });
        assert!((sys.g + grad).norm() / grad.norm() < 1e-3, "g is not -grad");
    }
}

struct EdgeScene {
    scene: SyntheticScene,
    map_floor: f64,
    rep: RepresentationConfig,
}

impl EdgeScene {
    fn new() -> Self {
        Self {
            scene: SyntheticScene::new(SceneKind::Checkerboard, 2.0, 0).unwrap(),
            map_floor: 0.05,
            rep: RepresentationConfig::default(),
        }
    }
}

#[test]
fn align_converges_from_two_pixel_perturbations() {
    let k = common::camera();
    let es = EdgeScene::new();
    let cfg = TrackerConfig {
        representation: Representation::Ts,
        ..Default::default()
    };
    let spec = TrajectorySpec::planar(2.0, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = 0;
    let mut trials = 0;
    for i in 0..10 {
        let gt_wc = sample_pose(&spec, 0.2 * i as f64).unwrap();
        let frame = common::edge_frame(&es.scene, &gt_wc, &k, &es.rep);
        let (map, _) = ground_truth_map(&es.scene, &k, &gt_wc, es.map_floor);
        let gt_cw = gt_wc.inverse();
        let truth = TemplateView::from_map(&map, &gt_cw, &k);
        for _ in 0..10 {
            let px = rng.gen_range(0.2..2.0);
            let th = random_perturbation(&truth, &k, px, &mut rng);
            let ref_cw = PoseSE3::exp(&th).compose(&gt_cw);
            let template = TemplateView::from_map(&map, &ref_cw, &k);
            let r = align(&frame, &template, &Tangent::zeros(), &k, &cfg).unwrap();
            assert!(
                r.cost_history.windows(2).all(|w| w[1] <= w[0]),
                "cost increased: {:?}",
                r.cost_history
            );
            assert!(r.iterations <= cfg.max_iterations);
            let est_cw = r.pose.compose(&ref_cw);
            let err = mean_reprojection_distance(
                &truth,
                &est_cw.compose(&gt_wc),
                &PoseSE3::identity(),
                &k,
            );
            trials += 1;
            if err <= 0.5 {
                ok += 1;
            }
        }
    }
    assert!(ok * 100 >= 95 * trials, "{ok}/{trials} within 0.5 px");
}

#[test]
fn align_from_optimum_is_a_fixed_point() {
    let k = common::camera();
    let es = EdgeScene::new();
    let cfg = TrackerConfig {
        representation: Representation::Ts,
        ..Default::default()
    };
    let gt_wc = sample_pose(&TrajectorySpec::planar(1.0, 2), 0.4).unwrap();
    let frame = common::edge_frame(&es.scene, &gt_wc, &k, &es.rep);
    let (map, _) = ground_truth_map(&es.scene, &k, &gt_wc, es.map_floor);
    let template = TemplateView::from_map(&map, &gt_wc.inverse(), &k);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let theta0 = random_perturbation(&template, &k, 1.0, &mut rng);
    let first = align(&frame, &template, &theta0, &k, &cfg).unwrap();
    assert!(first.converged);
    let again = align(&frame, &template, &first.pose.log(), &k, &cfg).unwrap();
    assert_eq!(again.iterations, 1);
    assert!((again.pose.log() - first.pose.log()).norm() < 1e-6);
}
