#![allow(dead_code)]

use evtrack::geometry::{CameraIntrinsics, PoseSE3};
use evtrack::representations::{gaussian_blur, EventFrame, FrameKind, RepresentationConfig};
use evtrack::simulator::{default_camera, render_intensity, SyntheticScene};

pub fn camera() -> CameraIntrinsics {
    default_camera()
}

/// `a + b x + c y + d x y`, which bilinear interpolation and central
/// differences reproduce exactly. Marked as a blurred negative frame.
pub fn bilinear_frame(k: &CameraIntrinsics, a: f64, b: f64, c: f64, d: f64) -> EventFrame {
    let (w, h) = (k.width, k.height);
    let values = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x as f64, y as f64)))
        .map(|(x, y)| a + b * x + c * y + d * x * y)
        .collect();
    EventFrame::from_values(w, h, values, 0, FrameKind::NegativeTs, true).unwrap()
}

/// Smooth bowl-and-ripple frame for tests that need curvature.
pub fn smooth_frame(k: &CameraIntrinsics) -> EventFrame {
    let (w, h) = (k.width, k.height);
    let values = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x as f64, y as f64)))
        .map(|(x, y)| 127.5 + 60.0 * (x / 17.0).sin() * (y / 23.0).cos() + 0.001 * (x - 120.0) * (y - 90.0))
        .collect();
    EventFrame::from_values(w, h, values, 0, FrameKind::NegativeTs, true).unwrap()
}

/// Negative, blurred image of the intensity gradient magnitude seen from
/// `pose_wc`: dark on edges, like a well-populated time surface but without
/// any event-timing effects.
pub fn edge_frame(
    scene: &SyntheticScene,
    pose_wc: &PoseSE3,
    k: &CameraIntrinsics,
    rep: &RepresentationConfig,
) -> EventFrame {
    let img = render_intensity(scene, pose_wc, k);
    let (w, h) = (k.width as usize, k.height as usize);
    let mut g = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = 0.5 * (img.values[y * w + x + 1] - img.values[y * w + x - 1]);
            let gy = 0.5 * (img.values[(y + 1) * w + x] - img.values[(y - 1) * w + x]);
            g[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    let gmax = g.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let values = g.iter().map(|v| 255.0 * (1.0 - v / gmax)).collect();
    let frame =
        EventFrame::from_values(k.width, k.height, values, 0, FrameKind::NegativeTs, false).unwrap();
    gaussian_blur(&frame, rep).unwrap()
}
