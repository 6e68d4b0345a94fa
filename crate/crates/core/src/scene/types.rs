use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A 3-D vector in meters. Used for both positions and per-frame
/// displacements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// A position in the ego frame.
pub type Point3 = Vec3;

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance_squared(self, other: Vec3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(self, other: Vec3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// An ordered point cloud. Index `i` identifies a point across every flow
/// field and label array aligned to this cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: i64,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame_id: i64) -> Self {
        PointCloud { points, frame_id }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ensure_non_empty(&self, what: &'static str) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::Empty(what))
        } else {
            Ok(())
        }
    }

    /// Drops every point with `z < min_z`. For clouds from sources that still
    /// contain ground returns; the generator never emits ground.
    pub fn remove_below_z(&self, min_z: f64) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .copied()
                .filter(|p| p.z >= min_z)
                .collect(),
            frame_id: self.frame_id,
        }
    }
}

/// Per-point displacement vectors aligned to a source cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub vectors: Vec<Vec3>,
}

impl FlowField {
    pub fn new(vectors: Vec<Vec3>) -> Self {
        FlowField { vectors }
    }

    pub fn zeros(len: usize) -> Self {
        FlowField {
            vectors: vec![Vec3::ZERO; len],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.vectors.len() != expected {
            return Err(Error::LengthMismatch {
                what: "flow field",
                got: self.vectors.len(),
                expected,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointClass {
    Background,
    Foreground,
}

impl PointClass {
    pub fn to_u8(self) -> u8 {
        match self {
            PointClass::Background => 0,
            PointClass::Foreground => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(PointClass::Background),
            1 => Some(PointClass::Foreground),
            _ => None,
        }
    }
}

/// Proper rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl RigidMotion {
    pub fn identity() -> Self {
        RigidMotion {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: Vec3::ZERO,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        RigidMotion {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation by `yaw` radians about the vertical axis through `pivot`,
    /// followed by a translation of `shift`.
    pub fn yaw_about(pivot: Vec3, yaw: f64, shift: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let mut m = RigidMotion {
            rotation,
            translation: Vec3::ZERO,
        };
        let rotated_pivot = m.rotate(pivot);
        m.translation = pivot - rotated_pivot + shift;
        m
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        self.rotate(p) + self.translation
    }

    /// Displacement of `p` under this motion.
    pub fn flow_at(&self, p: Point3) -> Vec3 {
        self.apply(p) - p
    }

    /// Checks orthonormality and unit determinant within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > tol {
                    return false;
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        (det - 1.0).abs() <= tol
    }
}

/// A moving (or parked) rigid object in a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDescriptor {
    /// Box center at time `t` (z is half the height; boxes rest on the ground).
    pub center: Vec3,
    /// Length, width, height in meters.
    pub size: Vec3,
    pub yaw: f64,
    /// Speed of the box center in m/s.
    pub speed: f64,
    /// Motion from `t` to `t+1`.
    pub motion: RigidMotion,
    pub points_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub layout_seed: u64,
    pub sequence_step: u32,
    pub objects: Vec<ObjectDescriptor>,
}

/// A frame pair with exact ground truth. `gt_flow` and `classes` are aligned
/// to `cloud_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub cloud_t: PointCloud,
    pub cloud_t1: PointCloud,
    pub gt_flow: FlowField,
    pub classes: Vec<PointClass>,
    pub dt_seconds: f64,
    pub meta: SceneMeta,
}

impl SceneSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.cloud_t.len();
        self.gt_flow.check_len(n)?;
        if self.classes.len() != n {
            return Err(Error::LengthMismatch {
                what: "classes",
                got: self.classes.len(),
                expected: n,
            });
        }
        if !(self.dt_seconds > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt_seconds must be positive, got {}",
                self.dt_seconds
            )));
        }
        Ok(())
    }
}

/// Pointwise `cloud + flow`.
pub fn apply_flow(cloud: &PointCloud, flow: &FlowField) -> Result<PointCloud> {
    flow.check_len(cloud.len())?;
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .zip(&flow.vectors)
            .map(|(&p, &v)| p + v)
            .collect(),
        frame_id: cloud.frame_id,
    })
}

/// True when `p` lies in the axis-aligned BEV box `|x|, |y| ≤ half_extent`.
pub fn in_area(p: Point3, half_extent: f64) -> bool {
    p.x.abs() <= half_extent && p.y.abs() <= half_extent
}

/// Keeps points with `|x| ≤ half_extent` and `|y| ≤ half_extent`. Both clouds
/// are cropped independently; flow and classes follow `cloud_t`.
pub fn crop_to_area(sample: &SceneSample, half_extent: f64) -> Result<SceneSample> {
    if !(half_extent > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "crop half extent must be positive, got {half_extent}"
        )));
    }
    let keep: Vec<usize> = (0..sample.cloud_t.len())
        .filter(|&i| in_area(sample.cloud_t.points[i], half_extent))
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty("cloud_t after crop"));
    }
    Ok(SceneSample {
        cloud_t: PointCloud::new(
            keep.iter().map(|&i| sample.cloud_t.points[i]).collect(),
            sample.cloud_t.frame_id,
        ),
        cloud_t1: PointCloud::new(
            sample
                .cloud_t1
                .points
                .iter()
                .copied()
                .filter(|&p| in_area(p, half_extent))
                .collect(),
            sample.cloud_t1.frame_id,
        ),
        gt_flow: FlowField::new(keep.iter().map(|&i| sample.gt_flow.vectors[i]).collect()),
        classes: keep.iter().map(|&i| sample.classes[i]).collect(),
        dt_seconds: sample.dt_seconds,
        meta: sample.meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_flow_adds_pointwise() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)], 0);
        let flow = FlowField::new(vec![Vec3::new(0.1, 0.0, -0.2)]);
        let out = apply_flow(&cloud, &flow).unwrap();
        assert_eq!(out.points[0], Vec3::new(1.1, 2.0, 2.8));
    }

    #[test]
    fn apply_zero_flow_is_identity() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, -2.0, 0.5), Vec3::new(4.0, 0.0, 1.0)], 3);
        let out = apply_flow(&cloud, &FlowField::zeros(2)).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn apply_flow_rejects_length_mismatch() {
        let cloud = PointCloud::new(vec![Vec3::ZERO; 3], 0);
        assert!(matches!(
            apply_flow(&cloud, &FlowField::zeros(2)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn yaw_motion_is_proper_and_fixes_pivot() {
        let pivot = Vec3::new(3.0, -1.0, 0.7);
        let m = RigidMotion::yaw_about(pivot, 0.3, Vec3::new(1.0, 0.5, 0.0));
        assert!(m.is_proper(1e-9));
        let moved = m.apply(pivot);
        assert!((moved - pivot - Vec3::new(1.0, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn remove_below_z_filters() {
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, -0.1), Vec3::new(0.0, 0.0, 0.3)], 0);
        assert_eq!(
            cloud.remove_below_z(0.0).points,
            vec![Vec3::new(0.0, 0.0, 0.3)]
        );
    }
}
