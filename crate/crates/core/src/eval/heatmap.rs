//! Residual endpoint histograms of moving points.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scene::io::write_file;
use crate::scene::FlowField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapScale {
    Log10,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapSpec {
    /// Side length of the plotted square, meters, centered on zero residual.
    pub extent: f64,
    pub bins: usize,
    pub scale: HeatmapScale,
    /// Express each residual in a frame where the ground-truth vector points
    /// along +y.
    pub rotated: bool,
    /// Only points with ground-truth speed above this, m/s, are counted.
    pub speed_threshold: f64,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec {
            extent: 4.0,
            bins: 200,
            scale: HeatmapScale::Log10,
            rotated: true,
            speed_threshold: 0.5,
        }
    }
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0) || self.bins == 0 || self.bins % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "heatmap needs extent > 0 and an even bin count, got {} and {}",
                self.extent, self.bins
            )));
        }
        Ok(())
    }

    /// `<method>_<rotated|unrotated>_<log|abs>`.
    pub fn file_stem(&self, method: &str) -> String {
        format!(
            "{method}_{}_{}",
            if self.rotated { "rotated" } else { "unrotated" },
            match self.scale {
                HeatmapScale::Log10 => "log",
                HeatmapScale::Absolute => "abs",
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub spec: HeatmapSpec,
    /// Row-major `[bins, bins]`; row indexes the y residual, from −extent/2
    /// upward, column the x residual.
    pub counts: Vec<u64>,
    pub moving_points: u64,
    pub out_of_extent: u64,
}

impl Heatmap {
    pub fn new(spec: HeatmapSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.bins * spec.bins;
        Ok(Heatmap {
            spec,
            counts: vec![0; n],
            moving_points: 0,
            out_of_extent: 0,
        })
    }

    /// No moving point was seen.
    pub fn is_empty(&self) -> bool {
        self.moving_points == 0
    }

    pub fn in_extent(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.spec.bins + col]
    }

    /// Bin of a residual at zero, `(bins/2, bins/2)`.
    pub fn central_bin(&self) -> (usize, usize) {
        (self.spec.bins / 2, self.spec.bins / 2)
    }

    /// Bin holding residual `(x, y)`, or `None` outside the extent.
    pub fn bin_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let half = self.spec.extent / 2.0;
        let width = self.spec.extent / self.spec.bins as f64;
        let index = |v: f64| {
            if v >= -half && v < half {
                Some((((v + half) / width).floor() as usize).min(self.spec.bins - 1))
            } else {
                None
            }
        };
        Some((index(y)?, index(x)?))
    }

    pub fn add(&mut self, pred: &FlowField, gt: &FlowField, dt: f64) -> Result<()> {
        pred.check_len(gt.len())?;
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {dt}"
            )));
        }
        for (p, g) in pred.vectors.iter().zip(&gt.vectors) {
            if g.norm() / dt <= self.spec.speed_threshold {
                continue;
            }
            self.moving_points += 1;
            let (rx, ry) = (p.x - g.x, p.y - g.y);
            let bev = g.x.hypot(g.y);
            let (x, y) = if self.spec.rotated && bev > 0.0 {
                let (ux, uy) = (g.x / bev, g.y / bev);
                (rx * uy - ry * ux, rx * ux + ry * uy)
            } else {
                (rx, ry)
            };
            match self.bin_of(x, y) {
                Some((r, c)) => self.counts[r * self.spec.bins + c] += 1,
                None => self.out_of_extent += 1,
            }
        }
        Ok(())
    }

    /// Pixel intensities 0–255, top row = largest y residual.
    pub fn image(&self) -> Vec<u8> {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let bins = self.spec.bins;
        let mut out = Vec::with_capacity(bins * bins);
        for row in (0..bins).rev() {
            for col in 0..bins {
                let c = self.count(row, col);
                let v = if max == 0 {
                    0.0
                } else {
                    match self.spec.scale {
                        HeatmapScale::Log10 => {
                            (1.0 + c as f64).log10() / (1.0 + max as f64).log10()
                        }
                        HeatmapScale::Absolute => c as f64 / max as f64,
                    }
                };
                out.push((v * 255.0).round() as u8);
            }
        }
        out
    }

    /// Binary 8-bit PGM of [`Heatmap::image`].
    pub fn to_pgm(&self) -> Vec<u8> {
        let bins = self.spec.bins;
        let mut out = format!("P5\n{bins} {bins}\n255\n").into_bytes();
        out.extend(self.image());
        out
    }

    /// Raw counts, one CSV line per image row, top row first.
    pub fn to_csv(&self) -> String {
        let bins = self.spec.bins;
        let mut s = String::new();
        for row in (0..bins).rev() {
            let line: Vec<String> = (0..bins).map(|c| self.count(row, c).to_string()).collect();
            writeln!(s, "{}", line.join(",")).expect("string write");
        }
        s
    }

    /// Writes `<stem>.pgm` and `<stem>.csv` into `dir`; returns both paths.
    pub fn write(&self, dir: &Path, method: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = self.spec.file_stem(method);
        let pgm = dir.join(format!("{stem}.pgm"));
        let csv = dir.join(format!("{stem}.csv"));
        write_file(&pgm, &self.to_pgm())?;
        write_file(&csv, self.to_csv().as_bytes())?;
        Ok((pgm, csv))
    }
}

pub fn residual_heatmap(
    pred: &FlowField,
    gt: &FlowField,
    dt: f64,
    spec: &HeatmapSpec,
) -> Result<Heatmap> {
    let mut h = Heatmap::new(spec.clone())?;
    h.add(pred, gt, dt)?;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Vec3;

    fn gt() -> FlowField {
        FlowField::new(vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, -0.8, 0.1),
            Vec3::new(0.3, 0.4, 0.0),
            Vec3::new(0.01, 0.0, 0.0),
        ])
    }

    #[test]
    fn perfect_prediction_is_a_central_dot() {
        let g = gt();
        let h = residual_heatmap(&g, &g, 0.1, &HeatmapSpec::default()).unwrap();
        let (r, c) = h.central_bin();
        assert_eq!(h.moving_points, 3);
        assert_eq!(h.count(r, c), 3);
        assert_eq!(h.in_extent(), 3);
    }

    #[test]
    fn zero_flow_lands_behind_center_when_rotated() {
        let g = FlowField::new(vec![Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, -0.5, 0.0)]);
        let h = residual_heatmap(&FlowField::zeros(2), &g, 0.1, &HeatmapSpec::default()).unwrap();
        let want = h.bin_of(0.0, -0.5).unwrap();
        assert_eq!(h.count(want.0, want.1), 2);
    }

    #[test]
    fn out_of_extent_counted_separately() {
        let g = FlowField::new(vec![Vec3::new(3.0, 0.0, 0.0)]);
        let h = residual_heatmap(&FlowField::zeros(1), &g, 0.1, &HeatmapSpec::default()).unwrap();
        assert_eq!(h.out_of_extent, 1);
        assert_eq!(h.in_extent(), 0);
    }

    #[test]
    fn no_moving_points_is_flagged_empty() {
        let g = FlowField::zeros(3);
        let h = residual_heatmap(&g, &g, 0.1, &HeatmapSpec::default()).unwrap();
        assert!(h.is_empty());
        assert!(h.image().iter().all(|&p| p == 0));
    }

    #[test]
    fn file_outputs() {
        let g = gt();
        let spec = HeatmapSpec {
            bins: 4,
            scale: HeatmapScale::Absolute,
            rotated: false,
            ..HeatmapSpec::default()
        };
        let h = residual_heatmap(&g, &g, 0.1, &spec).unwrap();
        let pgm = h.to_pgm();
        assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(pgm.len(), b"P5\n4 4\n255\n".len() + 16);
        assert_eq!(h.to_csv(), "0,0,0,0\n0,0,3,0\n0,0,0,0\n0,0,0,0\n");
        assert_eq!(spec.file_stem("student"), "student_unrotated_abs");
        assert!(HeatmapSpec { bins: 3, ..spec }.validate().is_err());
    }
}
