//! Pinhole camera, SE(3) poses and the 3D-2D warp.
//!
//! Tangent vectors are ordered translation first, rotation second:
//! `theta = [rho_x, rho_y, rho_z, phi_x, phi_y, phi_z]`. The exponential map
//! is the usual SE(3) one, `T(theta) = [exp(phi^) | V(phi) rho]`, and
//! increments compose on the right: `T <- T(theta) * T(delta)`.

use std::fmt;
use std::path::Path;

use nalgebra::{
    Matrix2x3, Matrix2x6, Matrix3, Matrix3x6, Matrix4, Rotation3, UnitQuaternion, Vector2,
    Vector3, Vector6,
};

use crate::error::{Error, Result};

pub type Tangent = Vector6<f64>;

/// Below this rotation angle (radians) the exp/log maps use Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Pinhole intrinsics of a rectified, distortion-free camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64)
            || !(self.cy > 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside the {}x{} sensor",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Whether a continuous pixel lies in `[0, width-1] x [0, height-1]`.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    /// Parses the one-line calibration format `fx fy cx cy width height`.
    pub fn parse_calib(text: &str) -> Result<Self> {
        let (lineno, line) = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .find(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .ok_or_else(|| Error::Format("calibration file is empty".into()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 6 fields 'fx fy cx cy width height', got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("field {}: {e}", i + 1),
            })
        };
        let dim = |i: usize| -> Result<u32> {
            fields[i].parse::<u32>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("field {}: {e}", i + 1),
            })
        };
        Self::new(num(0)?, num(1)?, num(2)?, num(3)?, dim(4)?, dim(5)?)
    }

    pub fn read_calib(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_calib(&std::fs::read_to_string(path)?)
    }

    pub fn to_calib_line(&self) -> String {
        format!(
            "{} {} {} {} {} {}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        )
    }
}

/// Rigid transform. The tangent coordinates are obtained with [`PoseSE3::log`].
#[derive(Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl fmt::Debug for PoseSE3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let th = self.log();
        write!(
            f,
            "PoseSE3 {{ rho: [{:.6}, {:.6}, {:.6}], phi: [{:.6}, {:.6}, {:.6}] }}",
            th[0], th[1], th[2], th[3], th[4], th[5]
        )
    }
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle2 = phi.norm_squared();
    let angle = angle2.sqrt();
    let w = skew(phi);
    let (a, b) = if angle < SMALL_ANGLE {
        (1.0 - angle2 / 6.0, 0.5 - angle2 / 24.0)
    } else {
        (angle.sin() / angle, (1.0 - angle.cos()) / angle2)
    };
    Matrix3::identity() + w * a + w * w * b
}

pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = vee(&(r - r.transpose()));
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = (0.5 * v.norm()).min(1.0);
    let angle = sin.atan2(cos);
    if angle < SMALL_ANGLE {
        // R ~ I + phi^, so the antisymmetric part is phi to second order.
        return v * 0.5;
    }
    if angle > std::f64::consts::PI - 1e-3 {
        // The antisymmetric part vanishes at pi. The symmetric part is
        // cos I + (1 - cos) a a^T for any angle, which gives the axis.
        let b = ((r + r.transpose()) * 0.5 - Matrix3::identity() * cos) / (1.0 - cos);
        let i = (0..3)
            .max_by(|&p, &q| b[(p, p)].total_cmp(&b[(q, q)]))
            .unwrap_or(0);
        let mut axis: Vector3<f64> = b.column(i).into();
        axis /= b[(i, i)].max(f64::MIN_POSITIVE).sqrt();
        axis.normalize_mut();
        if v.dot(&axis) < 0.0 {
            axis = -axis;
        }
        return axis * angle;
    }
    v * (angle / (2.0 * sin))
}

/// Left Jacobian of SO(3), which maps rho to the translation in SE(3) exp.
fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle2 = phi.norm_squared();
    let angle = angle2.sqrt();
    let w = skew(phi);
    let (b, c) = if angle < SMALL_ANGLE {
        (0.5 - angle2 / 24.0, 1.0 / 6.0 - angle2 / 120.0)
    } else {
        (
            (1.0 - angle.cos()) / angle2,
            (angle - angle.sin()) / (angle2 * angle),
        )
    };
    Matrix3::identity() + w * b + w * w * c
}

fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle2 = phi.norm_squared();
    let angle = angle2.sqrt();
    let w = skew(phi);
    let c = if angle < SMALL_ANGLE {
        1.0 / 12.0 + angle2 / 720.0
    } else {
        (1.0 - angle * angle.sin() / (2.0 * (1.0 - angle.cos()))) / angle2
    };
    Matrix3::identity() - w * 0.5 + w * w * c
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts(Matrix3::identity(), t)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self::from_parts(q.to_rotation_matrix().into_inner(), t)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn exp(theta: &Tangent) -> Self {
        let rho = theta.fixed_rows::<3>(0).into_owned();
        let phi = theta.fixed_rows::<3>(3).into_owned();
        Self {
            rotation: so3_exp(&phi),
            translation: so3_left_jacobian(&phi) * rho,
        }
    }

    pub fn log(&self) -> Tangent {
        let phi = so3_log(&self.rotation);
        let rho = so3_left_jacobian_inv(&phi) * self.translation;
        Tangent::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z)
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Re-orthonormalizes the rotation block (long composition chains drift).
    pub fn normalized(&self) -> Self {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        Self::from_quaternion(&q, self.translation)
    }
}

impl std::ops::Mul for PoseSE3 {
    type Output = PoseSE3;
    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

/// Point of the semi-dense map, world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateEntry {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// The map as seen from a reference camera: `(pixel, depth)` pairs.
#[derive(Debug, Clone)]
pub struct TemplateView {
    /// World to reference camera.
    pub reference_pose: PoseSE3,
    pub entries: Vec<TemplateEntry>,
}

impl TemplateView {
    /// Projects every map point that lands inside the image in front of the
    /// reference camera `world_to_ref`.
    pub fn from_map(map: &[MapPoint], world_to_ref: &PoseSE3, k: &CameraIntrinsics) -> Self {
        let entries = map
            .iter()
            .filter_map(|m| {
                let pc = world_to_ref.transform(&m.position);
                let px = project(&pc, k).ok()?;
                k.contains(&px).then_some(TemplateEntry {
                    pixel: px,
                    depth: pc.z,
                })
            })
            .collect();
        Self {
            reference_pose: *world_to_ref,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses a map file: one `X Y Z` point per line, '#' comments allowed.
pub fn parse_map(text: &str) -> Result<Vec<MapPoint>> {
    let mut map = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad coordinate '{f}': {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(err(format!("expected 3 coordinates, got {}", v.len())));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(err("non-finite coordinate".into()));
        }
        map.push(MapPoint {
            position: Vector3::new(v[0], v[1], v[2]),
        });
    }
    Ok(map)
}

pub fn read_map(path: impl AsRef<Path>) -> Result<Vec<MapPoint>> {
    parse_map(&std::fs::read_to_string(path)?)
}

/// Shortest round-tripping decimal form, so reading back is exact.
pub fn map_to_text(map: &[MapPoint]) -> String {
    let mut s = String::with_capacity(map.len() * 40);
    for m in map {
        let p = m.position;
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    s
}

pub fn write_map(path: impl AsRef<Path>, map: &[MapPoint]) -> Result<()> {
    std::fs::write(path, map_to_text(map))?;
    Ok(())
}

pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if !(p.z > 0.0) {
        return Err(Error::Domain(format!(
            "cannot project point with non-positive depth z={}",
            p.z
        )));
    }
    Ok(Vector2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

pub fn back_project(x: &Vector2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!(
            "cannot back-project with non-positive depth d={depth}"
        )));
    }
    Ok(Vector3::new(
        (x.x - k.cx) / k.fx * depth,
        (x.y - k.cy) / k.fy * depth,
        depth,
    ))
}

/// `pi(T * pi^-1(x, d))`. `None` when the transformed point is behind the
/// camera or the depth is invalid.
pub fn warp_with_pose(
    x: &Vector2<f64>,
    depth: f64,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    let p = back_project(x, depth, k).ok()?;
    project(&pose.transform(&p), k).ok()
}

pub fn warp(
    x: &Vector2<f64>,
    depth: f64,
    theta: &Tangent,
    k: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    warp_with_pose(x, depth, &PoseSE3::exp(theta), k)
}

/// d pi / d P at a camera-frame point.
pub fn projection_jacobian(p: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz2,
    )
}

/// d (T(delta) * P) / d delta at delta = 0, i.e. `[I | -P^]`.
pub fn point_jacobian(p: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(p)));
    j
}

/// Jacobian of `W(x, d; delta)` with respect to `delta`, at `delta = 0`.
pub fn warp_jacobian(x: &Vector2<f64>, depth: f64, k: &CameraIntrinsics) -> Matrix2x6<f64> {
    let p = Vector3::new(
        (x.x - k.cx) / k.fx * depth,
        (x.y - k.cy) / k.fy * depth,
        depth,
    );
    projection_jacobian(&p, k) * point_jacobian(&p)
}
