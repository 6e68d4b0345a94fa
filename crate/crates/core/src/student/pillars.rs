//! Pillar assignment and per-point pillar features.

use super::PillarConfig;
use crate::scene::{PointCloud, Vec3};
use crate::{Error, Result};

/// Row and column of the pillar containing `p`. Points on the upper boundary
/// belong to the last cell.
pub fn pillar_cell(p: Vec3, cfg: &PillarConfig, index: usize) -> Result<(usize, usize)> {
    let h = cfg.area_half_extent;
    if !(p.x.abs() <= h && p.y.abs() <= h) {
        return Err(Error::OutOfArea {
            index,
            x: p.x,
            y: p.y,
            half_extent: h,
        });
    }
    let last = cfg.grid_cells() - 1;
    let cell = |v: f64| (((v + h) / cfg.pillar_size).floor() as usize).min(last);
    Ok((cell(p.y), cell(p.x)))
}

/// Flat cell index `row · grid + col` of every point.
pub fn pillar_cells(cloud: &PointCloud, cfg: &PillarConfig) -> Result<Vec<usize>> {
    let grid = cfg.grid_cells();
    cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, &p)| pillar_cell(p, cfg, i).map(|(r, c)| r * grid + c))
        .collect()
}

/// `[x − cx, y − cy, z, 1]` per point, with `(cx, cy)` the pillar center.
pub fn pillar_features(cloud: &PointCloud, cells: &[usize], cfg: &PillarConfig) -> Vec<f64> {
    let grid = cfg.grid_cells();
    let h = cfg.area_half_extent;
    let ps = cfg.pillar_size;
    let mut out = Vec::with_capacity(4 * cloud.len());
    for (p, &cell) in cloud.points.iter().zip(cells) {
        let (row, col) = (cell / grid, cell % grid);
        let cx = -h + (col as f64 + 0.5) * ps;
        let cy = -h + (row as f64 + 0.5) * ps;
        out.extend_from_slice(&[p.x - cx, p.y - cy, p.z, 1.0]);
    }
    out
}

/// Pooled pillar features of one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Pseudoimage {
    pub grid: usize,
    pub channels: usize,
    /// Row-major `[grid, grid, channels]`.
    pub data: Vec<f64>,
    /// Flat cell index of each input point.
    pub cells: Vec<usize>,
}

impl Pseudoimage {
    pub fn feature(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.grid + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn is_empty_cell(&self, row: usize, col: usize) -> bool {
        !self.cells.contains(&(row * self.grid + col))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_cell() {
        let cfg = PillarConfig::default();
        assert_eq!(
            pillar_cell(Vec3::new(0.05, 0.05, 1.0), &cfg, 0).unwrap(),
            (256, 256)
        );
        assert_eq!(
            pillar_cell(Vec3::new(-51.2, -51.2, 0.0), &cfg, 0).unwrap(),
            (0, 0)
        );
        assert_eq!(
            pillar_cell(Vec3::new(51.2, 51.2, 0.0), &cfg, 0).unwrap(),
            (511, 511)
        );
        assert_eq!(
            pillar_cell(Vec3::new(1.0, -0.3, 0.0), &cfg, 0).unwrap(),
            (254, 261)
        );
    }

    #[test]
    fn outside_area_is_an_error() {
        let cfg = PillarConfig::default();
        let err = pillar_cell(Vec3::new(51.3, 0.0, 0.0), &cfg, 7).unwrap_err();
        assert!(matches!(err, Error::OutOfArea { index: 7, .. }));
    }

    #[test]
    fn features_are_offsets_from_center() {
        let cfg = PillarConfig::default();
        let cloud = PointCloud::new(vec![Vec3::new(0.05, 0.15, 1.0)], 0);
        let cells = pillar_cells(&cloud, &cfg).unwrap();
        let f = pillar_features(&cloud, &cells, &cfg);
        // Cell (256, 256) spans [0, 0.2) in both axes, center 0.1.
        assert!((f[0] + 0.05).abs() < 1e-12);
        assert!((f[1] - 0.05).abs() < 1e-12);
        assert_eq!(&f[2..], &[1.0, 1.0]);
    }
}
