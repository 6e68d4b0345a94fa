//! Scene-flow distillation toolkit.
//!
//! An optimization-based teacher (coordinate MLPs fit per frame pair under a
//! truncated Chamfer objective with cycle consistency) labels unannotated
//! frame pairs; a pillar-based feedforward student is trained on those
//! pseudo-labels and evaluated with endpoint-error metrics against the exact
//! ground truth of a synthetic rigid-scene generator.
//!
//! Module map:
//!
//! - [`scene`]: points, clouds, flow fields, the rigid-scene generator and the
//!   on-disk dataset format.
//! - [`nn`]: a small reverse-mode autodiff tape, MLP / convolution layers,
//!   Adam and the checkpoint format.
//! - [`neighbors`]: k-d tree, truncated Chamfer distance and the
//!   nearest-neighbor flow baseline.
//! - [`teacher`]: the test-time optimization teacher and dataset labeling.
//! - [`student`]: pillar encoder, U-Net backbone, per-point decoder, weighted
//!   loss and training loop.
//! - [`eval`]: EPE / Threeway EPE, residual heatmaps, runtime and variance
//!   reports, scaling curves.
//! - [`pipeline`]: hash-cached end-to-end experiments.

pub mod error;
pub mod eval;
pub mod neighbors;
pub mod nn;
pub mod pipeline;
pub mod scene;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
pub use scene::{
    apply_flow, crop_to_area, generate_scene, FlowField, Point3, PointClass, PointCloud,
    RigidMotion, SceneConfig, SceneSample, Vec3,
};

/// Frame interval of the 10 Hz sensor, in seconds.
pub const DEFAULT_DT: f64 = 0.1;
