//! Synthetic rigid scenes with analytically exact flow.
//!
//! Scenes are generated directly in the ego-compensated frame and contain no
//! ground returns. Static structures (boxes and poles) are surface-sampled
//! independently at `t` and `t+1`; each object is a box moving rigidly, also
//! resampled independently per frame, so no point has an exact correspondent
//! in the next frame.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::types::{
    in_area, FlowField, ObjectDescriptor, PointClass, PointCloud, RigidMotion, SceneMeta,
    SceneSample, Vec3,
};
use crate::{Error, Result, DEFAULT_DT};

/// Height of the simulated sensor above the ground, used for self-occlusion.
const SENSOR_HEIGHT: f64 = 1.8;
const MAX_PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::InvalidConfig(format!(
                "{name}: range [{}, {}] is empty or non-finite",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Box dimensions range: length, width, height in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeRange {
    pub length: Range,
    pub width: Range,
    pub height: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Half side of the square BEV area, meters.
    pub area_half_extent: f64,
    /// Background points sampled per frame.
    pub n_background_points: usize,
    /// Static boxes and poles carrying the background points.
    pub n_static_structures: usize,
    pub n_objects: usize,
    /// Surface samples per object per frame (before area clipping).
    pub object_points: usize,
    pub object_size_range: SizeRange,
    /// Speed of moving objects, m/s.
    pub object_speed_range: Range,
    /// Probability that an object is parked (zero motion).
    pub parked_fraction: f64,
    /// Maximum absolute yaw rate of moving objects, rad/s.
    pub max_yaw_rate: f64,
    pub lidar_noise_sigma: f64,
    /// Sample only surfaces facing the sensor.
    pub occlusion_enabled: bool,
    pub seed: u64,
    /// When set, structures and objects come from this seed while point
    /// sampling uses `seed`; pairs sharing a layout form one sequence.
    pub layout_seed: Option<u64>,
    /// Frames the shared layout's objects have advanced before `t`.
    pub sequence_step: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            area_half_extent: 51.2,
            n_background_points: 2000,
            n_static_structures: 24,
            n_objects: 6,
            object_points: 300,
            object_size_range: SizeRange {
                length: Range::new(3.5, 5.0),
                width: Range::new(1.6, 2.2),
                height: Range::new(1.4, 2.0),
            },
            object_speed_range: Range::new(2.0, 15.0),
            parked_fraction: 0.25,
            max_yaw_rate: 0.0,
            lidar_noise_sigma: 0.01,
            occlusion_enabled: false,
            seed: 0,
            layout_seed: None,
            sequence_step: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_half_extent > 0.0 && self.area_half_extent.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "area_half_extent must be positive, got {}",
                self.area_half_extent
            )));
        }
        self.object_speed_range.check("object_speed_range")?;
        if self.object_speed_range.min < 0.0 {
            return Err(Error::InvalidConfig(
                "object_speed_range must be non-negative".into(),
            ));
        }
        let s = &self.object_size_range;
        for (name, r) in [
            ("length", s.length),
            ("width", s.width),
            ("height", s.height),
        ] {
            r.check(name)?;
            if r.min <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "object {name} must be positive"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.parked_fraction) {
            return Err(Error::InvalidConfig(format!(
                "parked_fraction must lie in [0, 1], got {}",
                self.parked_fraction
            )));
        }
        if !(self.lidar_noise_sigma >= 0.0 && self.lidar_noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(
                "lidar_noise_sigma must be >= 0".into(),
            ));
        }
        if !(self.max_yaw_rate >= 0.0 && self.max_yaw_rate.is_finite()) {
            return Err(Error::InvalidConfig("max_yaw_rate must be >= 0".into()));
        }
        if self.n_background_points > 0 && self.n_static_structures == 0 {
            return Err(Error::InvalidConfig(
                "background points need at least one static structure".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Box resting on the ground; `center.z` is half the height.
    Cuboid { center: Vec3, size: Vec3, yaw: f64 },
    Pole {
        center: Vec3,
        radius: f64,
        height: f64,
    },
}

struct Face {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    normal: Vec3,
}

impl Shape {
    fn faces(&self) -> Vec<Face> {
        let Shape::Cuboid { center, size, yaw } = *self else {
            return Vec::new();
        };
        let (s, c) = yaw.sin_cos();
        let ax = Vec3::new(c, s, 0.0);
        let ay = Vec3::new(-s, c, 0.0);
        let az = Vec3::new(0.0, 0.0, 1.0);
        let (hl, hw, hh) = (size.x / 2.0, size.y / 2.0, size.z / 2.0);
        let mut faces = Vec::with_capacity(5);
        for sign in [-1.0, 1.0] {
            // faces normal to the length axis
            faces.push(Face {
                origin: center + ax * (sign * hl) - ay * hw - az * hh,
                u: ay * size.y,
                v: az * size.z,
                normal: ax * sign,
            });
            faces.push(Face {
                origin: center + ay * (sign * hw) - ax * hl - az * hh,
                u: ax * size.x,
                v: az * size.z,
                normal: ay * sign,
            });
        }
        faces.push(Face {
            origin: center + az * hh - ax * hl - ay * hw,
            u: ax * size.x,
            v: ay * size.y,
            normal: az,
        });
        faces
    }

    fn sample_surface(&self, n: usize, occlusion: bool, rng: &mut impl Rng) -> Vec<Vec3> {
        if n == 0 {
            return Vec::new();
        }
        let sensor = Vec3::new(0.0, 0.0, SENSOR_HEIGHT);
        match *self {
            Shape::Cuboid { .. } => {
                let faces: Vec<Face> = self
                    .faces()
                    .into_iter()
                    .filter(|f| {
                        let mid = f.origin + f.u * 0.5 + f.v * 0.5;
                        !occlusion || f.normal.dot(sensor - mid) > 0.0
                    })
                    .collect();
                if faces.is_empty() {
                    return Vec::new();
                }
                let areas: Vec<f64> = faces.iter().map(|f| f.u.norm() * f.v.norm()).collect();
                let pick = WeightedIndex::new(&areas).expect("box faces have positive area");
                (0..n)
                    .map(|_| {
                        let f = &faces[pick.sample(rng)];
                        let a: f64 = rng.random();
                        let b: f64 = rng.random();
                        f.origin + f.u * a + f.v * b
                    })
                    .collect()
            }
            Shape::Pole {
                center,
                radius,
                height,
            } => {
                let facing = (sensor.y - center.y).atan2(sensor.x - center.x);
                (0..n)
                    .map(|_| {
                        let theta = if occlusion {
                            facing + rng.random_range(-PI / 2.0..PI / 2.0)
                        } else {
                            rng.random_range(0.0..2.0 * PI)
                        };
                        let z: f64 = rng.random_range(0.0..height);
                        Vec3::new(
                            center.x + radius * theta.cos(),
                            center.y + radius * theta.sin(),
                            z,
                        )
                    })
                    .collect()
            }
        }
    }

    fn surface_area(&self) -> f64 {
        match *self {
            Shape::Cuboid { .. } => self.faces().iter().map(|f| f.u.norm() * f.v.norm()).sum(),
            Shape::Pole { radius, height, .. } => 2.0 * PI * radius * height,
        }
    }

    fn moved(&self, motion: &RigidMotion, yaw_delta: f64) -> Shape {
        match *self {
            Shape::Cuboid { center, size, yaw } => Shape::Cuboid {
                center: motion.apply(center),
                size,
                yaw: yaw + yaw_delta,
            },
            Shape::Pole {
                center,
                radius,
                height,
            } => Shape::Pole {
                center: motion.apply(center),
                radius,
                height,
            },
        }
    }
}

struct MovingObject {
    shape: Shape,
    speed: f64,
    yaw_rate: f64,
    velocity: Vec3,
}

impl MovingObject {
    /// Motion over one frame interval starting from the current pose.
    fn frame_motion(&self, dt: f64) -> RigidMotion {
        let center = match self.shape {
            Shape::Cuboid { center, .. } | Shape::Pole { center, .. } => center,
        };
        RigidMotion::yaw_about(center, self.yaw_rate * dt, self.velocity * dt)
    }
}

struct Layout {
    structures: Vec<Shape>,
    objects: Vec<MovingObject>,
}

fn uniform_in(rng: &mut impl Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..half)
    } else {
        0.0
    }
}

fn build_layout(cfg: &SceneConfig, rng: &mut impl Rng, dt: f64) -> Layout {
    let a = cfg.area_half_extent;
    let structures = (0..cfg.n_static_structures)
        .map(|i| {
            if i % 3 == 2 {
                let radius = rng.random_range(0.1..0.3);
                let height = rng.random_range(3.0..6.0);
                let lim = a - radius;
                Shape::Pole {
                    center: Vec3::new(uniform_in(rng, lim), uniform_in(rng, lim), 0.0),
                    radius,
                    height,
                }
            } else {
                let size = Vec3::new(
                    rng.random_range(2.0..10.0),
                    rng.random_range(0.5..4.0),
                    rng.random_range(2.0..6.0),
                );
                let half_diag = 0.5 * (size.x * size.x + size.y * size.y).sqrt();
                let lim = a - half_diag;
                Shape::Cuboid {
                    center: Vec3::new(uniform_in(rng, lim), uniform_in(rng, lim), size.z / 2.0),
                    size,
                    yaw: rng.random_range(0.0..PI),
                }
            }
        })
        .collect();

    let objects = (0..cfg.n_objects)
        .map(|_| {
            let sr = &cfg.object_size_range;
            let size = Vec3::new(
                sr.length.sample(rng),
                sr.width.sample(rng),
                sr.height.sample(rng),
            );
            let yaw = rng.random_range(0.0..2.0 * PI);
            let parked = rng.random::<f64>() < cfg.parked_fraction;
            let speed = if parked {
                0.0
            } else {
                cfg.object_speed_range.sample(rng)
            };
            let yaw_rate = if parked || cfg.max_yaw_rate == 0.0 {
                0.0
            } else {
                rng.random_range(-cfg.max_yaw_rate..cfg.max_yaw_rate)
            };
            let velocity = Vec3::new(yaw.cos(), yaw.sin(), 0.0) * speed;
            let half_diag = 0.5 * (size.x * size.x + size.y * size.y).sqrt();
            let lim = (a - half_diag).max(0.0);
            let shift = velocity * dt;
            let mut center = Vec3::new(0.0, 0.0, size.z / 2.0);
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                center.x = uniform_in(rng, lim);
                center.y = uniform_in(rng, lim);
                let next = center + shift;
                if next.x.abs() <= lim && next.y.abs() <= lim {
                    break;
                }
            }
            MovingObject {
                shape: Shape::Cuboid { center, size, yaw },
                speed,
                yaw_rate,
                velocity,
            }
        })
        .collect();

    Layout {
        structures,
        objects,
    }
}

/// Generates a frame pair; a pure function of `cfg`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let dt = DEFAULT_DT;
    let a = cfg.area_half_extent;
    let layout_seed = cfg.layout_seed.unwrap_or(cfg.seed);

    let mut layout_rng = ChaCha8Rng::seed_from_u64(layout_seed);
    let mut layout = build_layout(cfg, &mut layout_rng, dt);
    for obj in &mut layout.objects {
        for _ in 0..cfg.sequence_step {
            let m = obj.frame_motion(dt);
            obj.shape = obj.shape.moved(&m, obj.yaw_rate * dt);
            obj.velocity = m.rotate(obj.velocity);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, cfg.lidar_noise_sigma)
        .map_err(|e| Error::InvalidConfig(format!("lidar_noise_sigma: {e}")))?;
    let observe = |p: Vec3, rng: &mut ChaCha8Rng| -> Vec3 {
        if cfg.lidar_noise_sigma == 0.0 {
            p
        } else {
            p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
        }
    };

    let mut background_counts = vec![0usize; layout.structures.len()];
    if !layout.structures.is_empty() {
        let areas: Vec<f64> = layout.structures.iter().map(Shape::surface_area).collect();
        let pick = WeightedIndex::new(&areas)
            .map_err(|e| Error::InvalidConfig(format!("structure areas: {e}")))?;
        for _ in 0..cfg.n_background_points {
            background_counts[pick.sample(&mut rng)] += 1;
        }
    }

    let frame_t = i64::from(cfg.sequence_step);
    let mut points_t = Vec::new();
    let mut flow_t = Vec::new();
    let mut classes = Vec::new();
    let mut points_t1 = Vec::new();

    // Background at t and at t+1, sampled independently.
    for pass in 0..2 {
        for (shape, &count) in layout.structures.iter().zip(&background_counts) {
            for p in shape.sample_surface(count, cfg.occlusion_enabled, &mut rng) {
                let obs = observe(p, &mut rng);
                if !in_area(obs, a) {
                    continue;
                }
                if pass == 0 {
                    points_t.push(obs);
                    flow_t.push(Vec3::ZERO);
                    classes.push(PointClass::Background);
                } else {
                    points_t1.push(obs);
                }
            }
        }
    }

    let mut descriptors = Vec::with_capacity(layout.objects.len());
    for obj in &layout.objects {
        let motion = obj.frame_motion(dt);
        let mut kept = 0;
        for p in obj
            .shape
            .sample_surface(cfg.object_points, cfg.occlusion_enabled, &mut rng)
        {
            let obs = observe(p, &mut rng);
            if !in_area(obs, a) {
                continue;
            }
            kept += 1;
            points_t.push(obs);
            // Flow is defined on the observed point; noise never enters it.
            flow_t.push(motion.flow_at(obs));
            classes.push(PointClass::Foreground);
        }
        let next = obj.shape.moved(&motion, obj.yaw_rate * dt);
        for p in next.sample_surface(cfg.object_points, cfg.occlusion_enabled, &mut rng) {
            let obs = observe(p, &mut rng);
            if in_area(obs, a) {
                points_t1.push(obs);
            }
        }
        let Shape::Cuboid { center, size, yaw } = obj.shape else {
            unreachable!("objects are boxes")
        };
        descriptors.push(ObjectDescriptor {
            center,
            size,
            yaw,
            speed: obj.speed,
            motion,
            points_t: kept,
        });
    }

    if points_t.is_empty() {
        return Err(Error::Empty("generated cloud_t"));
    }

    Ok(SceneSample {
        cloud_t: PointCloud::new(points_t, frame_t),
        cloud_t1: PointCloud::new(points_t1, frame_t + 1),
        gt_flow: FlowField::new(flow_t),
        classes,
        dt_seconds: dt,
        meta: SceneMeta {
            seed: cfg.seed,
            layout_seed,
            sequence_step: cfg.sequence_step,
            objects: descriptors,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{apply_flow, crop_to_area};

    fn small() -> SceneConfig {
        SceneConfig {
            area_half_extent: 20.0,
            n_background_points: 400,
            n_static_structures: 6,
            n_objects: 3,
            object_points: 100,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn static_scene_has_zero_flow_and_background_only() {
        let s = generate_scene(&SceneConfig {
            n_objects: 0,
            ..small()
        })
        .unwrap();
        assert!(s.classes.iter().all(|&c| c == PointClass::Background));
        assert!(s.gt_flow.vectors.iter().all(|&v| v == Vec3::ZERO));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SceneConfig { seed: 7, ..small() };
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let other = generate_scene(&SceneConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(generate_scene(&cfg).unwrap(), other);
    }

    #[test]
    fn pure_translation_gives_constant_foreground_flow() {
        let cfg = SceneConfig {
            n_objects: 1,
            parked_fraction: 0.0,
            object_speed_range: Range::new(10.0, 10.0),
            ..small()
        };
        let s = generate_scene(&cfg).unwrap();
        let obj = &s.meta.objects[0];
        let expected = Vec3::new(obj.yaw.cos(), obj.yaw.sin(), 0.0) * 1.0;
        for (i, c) in s.classes.iter().enumerate() {
            if *c == PointClass::Foreground {
                let p = s.cloud_t.points[i];
                let oracle = obj.motion.apply(p) - p;
                assert!((s.gt_flow.vectors[i] - oracle).norm() < 1e-12);
                assert!((s.gt_flow.vectors[i] - expected).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_matches_rigid_motion() {
        let cfg = SceneConfig {
            max_yaw_rate: 0.8,
            ..small()
        };
        let s = generate_scene(&cfg).unwrap();
        let moved = apply_flow(&s.cloud_t, &s.gt_flow).unwrap();
        let mut offset = s
            .classes
            .iter()
            .filter(|&&c| c == PointClass::Background)
            .count();
        for obj in &s.meta.objects {
            assert!(obj.motion.is_proper(1e-9));
            for i in offset..offset + obj.points_t {
                let want = obj.motion.apply(s.cloud_t.points[i]);
                assert!((moved.points[i] - want).norm() <= 1e-9);
            }
            offset += obj.points_t;
        }
    }

    #[test]
    fn speeds_lie_in_configured_range() {
        let cfg = SceneConfig {
            n_objects: 8,
            parked_fraction: 0.0,
            object_speed_range: Range::new(3.0, 9.0),
            ..small()
        };
        let s = generate_scene(&cfg).unwrap();
        for (v, c) in s.gt_flow.vectors.iter().zip(&s.classes) {
            let speed = v.norm() / s.dt_seconds;
            match c {
                PointClass::Background => assert_eq!(speed, 0.0),
                PointClass::Foreground => assert!((3.0 - 1e-9..=9.0 + 1e-9).contains(&speed)),
            }
        }
    }

    #[test]
    fn clouds_lie_within_area() {
        let cfg = SceneConfig {
            area_half_extent: 8.0,
            occlusion_enabled: true,
            ..small()
        };
        let s = generate_scene(&cfg).unwrap();
        for p in s.cloud_t.points.iter().chain(&s.cloud_t1.points) {
            assert!(in_area(*p, 8.0));
        }
        assert_eq!(crop_to_area(&s, 8.0).unwrap(), s);
    }

    #[test]
    fn shared_layout_keeps_structures() {
        let base = SceneConfig {
            layout_seed: Some(11),
            lidar_noise_sigma: 0.0,
            ..small()
        };
        let a = generate_scene(&SceneConfig {
            seed: 1,
            ..base.clone()
        })
        .unwrap();
        let b = generate_scene(&SceneConfig {
            seed: 2,
            sequence_step: 3,
            ..base
        })
        .unwrap();
        for (oa, ob) in a.meta.objects.iter().zip(&b.meta.objects) {
            assert_eq!(oa.size, ob.size);
            assert!(((ob.center - oa.center).norm() - 3.0 * oa.speed * 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_empty_scene() {
        let cfg = SceneConfig {
            n_objects: 0,
            n_background_points: 0,
            ..small()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn rejects_invalid_configs() {
        for bad in [
            SceneConfig {
                area_half_extent: 0.0,
                ..small()
            },
            SceneConfig {
                object_speed_range: Range::new(-1.0, 2.0),
                ..small()
            },
            SceneConfig {
                parked_fraction: 1.5,
                ..small()
            },
        ] {
            assert!(matches!(generate_scene(&bad), Err(Error::InvalidConfig(_))));
        }
    }
}
