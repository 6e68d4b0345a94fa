//! Points, clouds, flow fields, the synthetic scene generator and dataset
//! files.

mod generator;
pub mod io;
mod types;

pub use generator::{generate_scene, Range, SceneConfig, SizeRange};
pub use io::Dataset;
pub use types::{
    apply_flow, crop_to_area, in_area, FlowField, ObjectDescriptor, Point3, PointClass, PointCloud,
    RigidMotion, SceneMeta, SceneSample, Vec3,
};
