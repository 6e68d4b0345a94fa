//! Nearest-neighbor search, truncated Chamfer distance and the
//! nearest-neighbor flow baseline.

mod chamfer;
mod kdtree;

use std::time::Instant;

pub use chamfer::{chamfer_on_graph, directional, truncated_chamfer, ChamferConfig};
pub use kdtree::KdTree;

use crate::scene::{FlowField, PointCloud, Vec3};
use crate::teacher::{PseudoLabel, TeacherKind};
use crate::Result;

/// Flow to each point's nearest neighbor in `cloud_t1`, or zero when that
/// neighbor is farther than `truncation_radius`.
pub fn nn_flow(
    cloud_t: &PointCloud,
    cloud_t1: &PointCloud,
    truncation_radius: f64,
) -> Result<FlowField> {
    cloud_t.ensure_non_empty("cloud_t")?;
    cloud_t1.ensure_non_empty("cloud_t1")?;
    let tree = KdTree::build(&cloud_t1.points);
    let vectors = cloud_t
        .points
        .iter()
        .map(|&p| {
            let (j, d2) = tree.nearest_squared(p)?;
            Ok(if d2.sqrt() <= truncation_radius {
                cloud_t1.points[j] - p
            } else {
                Vec3::ZERO
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowField::new(vectors))
}

/// Nearest-neighbor pseudo-label truncated like the Chamfer objective. The
/// reported loss is the truncated Chamfer of the warped cloud.
pub fn nn_flow_teacher(
    cloud_t: &PointCloud,
    cloud_t1: &PointCloud,
    cfg: &ChamferConfig,
) -> Result<PseudoLabel> {
    let start = Instant::now();
    let flow = nn_flow(cloud_t, cloud_t1, cfg.truncation_radius)?;
    let warped = crate::scene::apply_flow(cloud_t, &flow)?;
    let final_loss = truncated_chamfer(&warped.points, &cloud_t1.points, cfg)?;
    Ok(PseudoLabel {
        flow,
        teacher: TeacherKind::Nn,
        final_loss,
        iters_run: 0,
        wall_time_ms: start.elapsed().as_millis() as u64,
        cycle_loss: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Point3;

    #[test]
    fn identical_clouds_give_zero_flow() {
        let c = PointCloud::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(3.0, 1.0, 0.0)],
            0,
        );
        let label = nn_flow_teacher(&c, &c, &ChamferConfig::default()).unwrap();
        assert!(label.flow.vectors.iter().all(|&v| v == Vec3::ZERO));
        assert_eq!(label.teacher, TeacherKind::Nn);
    }

    #[test]
    fn shifted_cloud_recovers_shift() {
        let pts: Vec<Point3> = (0..20)
            .map(|i| Point3::new(i as f64 * 2.0, (i % 3) as f64 * 3.0, 0.5))
            .collect();
        let shifted: Vec<Point3> = pts.iter().map(|&p| p + Vec3::new(0.3, 0.0, 0.0)).collect();
        let flow = nn_flow(&PointCloud::new(pts, 0), &PointCloud::new(shifted, 1), 2.0).unwrap();
        for v in &flow.vectors {
            assert!((v.x - 0.3).abs() < 1e-12 && v.y == 0.0 && v.z == 0.0);
        }
    }

    #[test]
    fn isolated_point_gets_zero_flow() {
        let t = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)], 0);
        let t1 = PointCloud::new(vec![Point3::new(2.5, 0.0, 0.0)], 1);
        assert_eq!(nn_flow(&t, &t1, 2.0).unwrap().vectors[0], Vec3::ZERO);
    }
}
