//! Shared fixtures for the benchmarks in `benches/`.

use flowdistill::scene::{generate_scene, SceneConfig};
use flowdistill::SceneSample;

/// A desk-scale frame pair of roughly `points` points.
pub fn desk_scene(points: usize, seed: u64) -> SceneSample {
    let cfg = SceneConfig {
        area_half_extent: 12.8,
        n_background_points: points * 4 / 5,
        n_static_structures: 12,
        n_objects: 4,
        object_points: points / 20,
        seed,
        ..SceneConfig::default()
    };
    generate_scene(&cfg).expect("bench scene")
}
