use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use crate::nn::{Graph, Tensor, Var};
use crate::scene::Point3;
use crate::{Error, Result};

/// Per-point distances above `truncation_radius` contribute nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChamferConfig {
    /// Meters, compared against the unsquared distance.
    pub truncation_radius: f64,
    /// Square surviving per-point distances.
    pub squared: bool,
    /// Add the `B → A` direction to the `A → B` direction.
    pub bidirectional: bool,
}

impl Default for ChamferConfig {
    fn default() -> Self {
        ChamferConfig {
            truncation_radius: 2.0,
            squared: true,
            bidirectional: true,
        }
    }
}

impl ChamferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.truncation_radius > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "truncation_radius must be positive, got {}",
                self.truncation_radius
            )));
        }
        Ok(())
    }

    /// Contribution of one nearest-neighbor squared distance.
    #[inline]
    pub fn term(&self, d2: f64) -> f64 {
        if d2.sqrt() > self.truncation_radius {
            0.0
        } else if self.squared {
            d2
        } else {
            d2.sqrt()
        }
    }
}

/// Mean truncated term over `from` against the tree's points.
pub fn directional(from: &[Point3], to: &KdTree, cfg: &ChamferConfig) -> Result<f64> {
    if from.is_empty() {
        return Err(Error::Empty("chamfer source cloud"));
    }
    let mut sum = 0.0;
    for &p in from {
        let (_, d2) = to.nearest_squared(p)?;
        sum += cfg.term(d2);
    }
    Ok(sum / from.len() as f64)
}

/// Truncated Chamfer distance between two clouds.
pub fn truncated_chamfer(a: &[Point3], b: &[Point3], cfg: &ChamferConfig) -> Result<f64> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer input cloud"));
    }
    let tree_b = KdTree::build(b);
    let mut total = directional(a, &tree_b, cfg)?;
    if cfg.bidirectional {
        total += directional(b, &KdTree::build(a), cfg)?;
    }
    Ok(total)
}

fn points_tensor(points: &[Point3]) -> Tensor {
    Tensor::matrix(
        points.len(),
        3,
        points.iter().flat_map(|p| p.to_array()).collect(),
    )
    .expect("n x 3")
}

pub(crate) fn var_points(g: &Graph, v: Var) -> Vec<Point3> {
    g.value(v)
        .data()
        .chunks(3)
        .map(|c| Point3::new(c[0], c[1], c[2]))
        .collect()
}

/// Masked mean of per-row distances between `lhs` and `rhs` (both `[N, 3]`).
fn masked_mean_term(
    g: &mut Graph,
    lhs: Var,
    rhs: Var,
    mask: Vec<f64>,
    cfg: &ChamferConfig,
) -> Result<Var> {
    let diff = g.sub(lhs, rhs)?;
    let sq = g.square(diff);
    let mut rows = g.sum_rows(sq)?;
    if !cfg.squared {
        rows = g.sqrt(rows);
    }
    let mask = g.constant(Tensor::vector(mask));
    let masked = g.mul(rows, mask)?;
    g.reduce_mean(masked)
}

/// Truncated Chamfer between the `[N, 3]` node `a` and the fixed cloud `b`,
/// differentiable in `a`. Nearest neighbors are taken at the current
/// values; truncated terms carry no gradient.
pub fn chamfer_on_graph(
    g: &mut Graph,
    a: Var,
    b: &[Point3],
    tree_b: &KdTree,
    cfg: &ChamferConfig,
) -> Result<Var> {
    if g.shape(a).len() != 2 || g.shape(a)[1] != 3 {
        return Err(Error::ShapeMismatch {
            op: "chamfer_on_graph",
            lhs: g.shape(a).to_vec(),
            rhs: vec![0, 3],
        });
    }
    let a_pts = var_points(g, a);
    if a_pts.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer input cloud"));
    }
    // A diverged optimizer can produce non-finite points; report that as a
    // non-finite loss and let the caller decide.
    if a_pts.iter().any(|p| !p.is_finite()) {
        return Ok(g.constant(Tensor::scalar(f64::NAN)));
    }

    let mut targets = Vec::with_capacity(a_pts.len());
    let mut mask = Vec::with_capacity(a_pts.len());
    for &p in &a_pts {
        let (j, d2) = tree_b.nearest_squared(p)?;
        let keep = d2.sqrt() <= cfg.truncation_radius;
        targets.push(if keep { b[j] } else { p });
        mask.push(if keep { 1.0 } else { 0.0 });
    }
    let targets = g.constant(points_tensor(&targets));
    let forward = masked_mean_term(g, a, targets, mask, cfg)?;
    if !cfg.bidirectional {
        return Ok(forward);
    }

    let tree_a = KdTree::build(&a_pts);
    let mut index = Vec::with_capacity(b.len());
    let mut mask = Vec::with_capacity(b.len());
    for &q in b {
        let (i, d2) = tree_a.nearest_squared(q)?;
        index.push(i);
        mask.push(if d2.sqrt() <= cfg.truncation_radius {
            1.0
        } else {
            0.0
        });
    }
    let gathered = g.gather_rows(a, &index)?;
    let fixed = g.constant(points_tensor(b));
    let backward = masked_mean_term(g, gathered, fixed, mask, cfg)?;
    g.add(forward, backward)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    #[test]
    fn identical_clouds_are_zero() {
        let a = vec![p(0.0, 0.0, 0.0), p(1.0, 2.0, 3.0)];
        assert_eq!(
            truncated_chamfer(&a, &a, &ChamferConfig::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn unit_offset_counts_both_directions() {
        let v = truncated_chamfer(
            &[p(0.0, 0.0, 0.0)],
            &[p(1.0, 0.0, 0.0)],
            &ChamferConfig::default(),
        )
        .unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn beyond_radius_is_truncated() {
        let v = truncated_chamfer(
            &[p(0.0, 0.0, 0.0)],
            &[p(3.0, 0.0, 0.0)],
            &ChamferConfig::default(),
        )
        .unwrap();
        assert_eq!(v, 0.0);
        // Exactly at the radius the term survives.
        let v = truncated_chamfer(
            &[p(0.0, 0.0, 0.0)],
            &[p(2.0, 0.0, 0.0)],
            &ChamferConfig::default(),
        )
        .unwrap();
        assert_eq!(v, 8.0);
    }

    #[test]
    fn config_variants() {
        let a = [p(0.0, 0.0, 0.0)];
        let b = [p(1.5, 0.0, 0.0), p(1.5, 0.5, 0.0)];
        let one_way = ChamferConfig {
            bidirectional: false,
            ..ChamferConfig::default()
        };
        assert_eq!(truncated_chamfer(&a, &b, &one_way).unwrap(), 2.25);
        let abs = ChamferConfig {
            squared: false,
            ..ChamferConfig::default()
        };
        let expected = 1.5 + (1.5 + (1.5f64 * 1.5 + 0.25).sqrt()) / 2.0;
        assert!((truncated_chamfer(&a, &b, &abs).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_input_errors() {
        assert!(truncated_chamfer(&[], &[p(0.0, 0.0, 0.0)], &ChamferConfig::default()).is_err());
        assert!(truncated_chamfer(&[p(0.0, 0.0, 0.0)], &[], &ChamferConfig::default()).is_err());
    }

    #[test]
    fn graph_value_matches_plain_value() {
        let a = vec![p(0.0, 0.0, 0.0), p(1.0, 0.3, -0.2), p(5.0, 5.0, 5.0)];
        let b = vec![p(0.2, 0.1, 0.0), p(1.1, 0.0, 0.0), p(-4.0, 0.0, 0.0)];
        for cfg in [
            ChamferConfig::default(),
            ChamferConfig {
                squared: false,
                ..ChamferConfig::default()
            },
        ] {
            let mut g = Graph::new();
            let av = g.param(points_tensor(&a));
            let loss = chamfer_on_graph(&mut g, av, &b, &KdTree::build(&b), &cfg).unwrap();
            let plain = truncated_chamfer(&a, &b, &cfg).unwrap();
            assert!((g.value(loss).item() - plain).abs() < 1e-14);
        }
    }
}
