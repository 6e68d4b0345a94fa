//! Endpoint error and its three-bucket average.

use serde::{Deserialize, Serialize};

use crate::scene::{in_area, FlowField, PointClass, SceneSample, Vec3};
use crate::{Error, Result};

/// Speed separating static from dynamic foreground, m/s.
pub const DYNAMIC_SPEED: f64 = 0.5;

fn check_aligned(pred: &FlowField, gt: &FlowField) -> Result<()> {
    pred.check_len(gt.len())
}

/// Mean L2 residual norm, optionally restricted to `mask`.
pub fn epe(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
    check_aligned(pred, gt)?;
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(Error::LengthMismatch {
                what: "epe mask",
                got: m.len(),
                expected: gt.len(),
            });
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (p, g)) in pred.vectors.iter().zip(&gt.vectors).enumerate() {
        if mask.is_none_or(|m| m[i]) {
            sum += (*p - *g).norm();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("epe point selection"));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Background,
    ForegroundStatic,
    ForegroundDynamic,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [
        Bucket::Background,
        Bucket::ForegroundStatic,
        Bucket::ForegroundDynamic,
    ];

    pub fn of(class: PointClass, gt: Vec3, dt: f64) -> Bucket {
        match class {
            PointClass::Background => Bucket::Background,
            PointClass::Foreground if gt.norm() / dt > DYNAMIC_SPEED => Bucket::ForegroundDynamic,
            PointClass::Foreground => Bucket::ForegroundStatic,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreewayReport {
    /// Mean of the non-empty bucket EPEs.
    pub threeway_epe: f64,
    /// `None` when the bucket has no points.
    pub fg_dynamic_epe: Option<f64>,
    pub fg_static_epe: Option<f64>,
    pub bg_epe: Option<f64>,
    pub bg_count: usize,
    pub fg_static_count: usize,
    pub fg_dynamic_count: usize,
}

impl ThreewayReport {
    pub fn bucket_epe(&self, bucket: Bucket) -> Option<f64> {
        match bucket {
            Bucket::Background => self.bg_epe,
            Bucket::ForegroundStatic => self.fg_static_epe,
            Bucket::ForegroundDynamic => self.fg_dynamic_epe,
        }
    }

    pub fn empty_buckets(&self) -> Vec<Bucket> {
        Bucket::ALL
            .into_iter()
            .filter(|b| self.bucket_epe(*b).is_none())
            .collect()
    }
}

/// Pools residuals per bucket across samples, in the order they are added.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThreewayAccumulator {
    sums: [f64; 3],
    counts: [usize; 3],
}

impl ThreewayAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        pred: &FlowField,
        gt: &FlowField,
        classes: &[PointClass],
        dt: f64,
    ) -> Result<()> {
        check_aligned(pred, gt)?;
        if classes.len() != gt.len() {
            return Err(Error::LengthMismatch {
                what: "classes",
                got: classes.len(),
                expected: gt.len(),
            });
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt must be positive, got {dt}"
            )));
        }
        for ((p, g), &c) in pred.vectors.iter().zip(&gt.vectors).zip(classes) {
            let slot = Bucket::of(c, *g, dt).slot();
            self.sums[slot] += (*p - *g).norm();
            self.counts[slot] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ThreewayAccumulator) {
        for i in 0..3 {
            self.sums[i] += other.sums[i];
            self.counts[i] += other.counts[i];
        }
    }

    pub fn finish(&self) -> Result<ThreewayReport> {
        let bucket = |b: Bucket| {
            let s = b.slot();
            (self.counts[s] > 0).then(|| self.sums[s] / self.counts[s] as f64)
        };
        let present: Vec<f64> = Bucket::ALL.into_iter().filter_map(bucket).collect();
        if present.is_empty() {
            return Err(Error::Empty("threeway evaluation points"));
        }
        Ok(ThreewayReport {
            threeway_epe: present.iter().sum::<f64>() / present.len() as f64,
            bg_epe: bucket(Bucket::Background),
            fg_static_epe: bucket(Bucket::ForegroundStatic),
            fg_dynamic_epe: bucket(Bucket::ForegroundDynamic),
            bg_count: self.counts[Bucket::Background.slot()],
            fg_static_count: self.counts[Bucket::ForegroundStatic.slot()],
            fg_dynamic_count: self.counts[Bucket::ForegroundDynamic.slot()],
        })
    }
}

pub fn threeway_epe(
    pred: &FlowField,
    gt: &FlowField,
    classes: &[PointClass],
    dt: f64,
) -> Result<ThreewayReport> {
    let mut acc = ThreewayAccumulator::new();
    acc.add(pred, gt, classes, dt)?;
    acc.finish()
}

/// Pooled Threeway EPE of `predict` over `samples`, folded in order. With
/// `crop_half_extent`, only points of `cloud_t` inside that square count;
/// predictions are still made on the full clouds.
pub fn evaluate_samples<F>(
    samples: &[SceneSample],
    crop_half_extent: Option<f64>,
    mut predict: F,
) -> Result<ThreewayReport>
where
    F: FnMut(&SceneSample) -> Result<FlowField>,
{
    let mut acc = ThreewayAccumulator::new();
    for s in samples {
        let pred = predict(s)?;
        match crop_half_extent {
            None => acc.add(&pred, &s.gt_flow, &s.classes, s.dt_seconds)?,
            Some(h) => {
                pred.check_len(s.gt_flow.len())?;
                let keep: Vec<usize> = (0..s.cloud_t.len())
                    .filter(|&i| in_area(s.cloud_t.points[i], h))
                    .collect();
                let pick =
                    |f: &FlowField| FlowField::new(keep.iter().map(|&i| f.vectors[i]).collect());
                let classes: Vec<PointClass> = keep.iter().map(|&i| s.classes[i]).collect();
                acc.add(&pick(&pred), &pick(&s.gt_flow), &classes, s.dt_seconds)?;
            }
        }
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(v: &[[f64; 3]]) -> FlowField {
        FlowField::new(v.iter().map(|a| Vec3::from_array(*a)).collect())
    }

    #[test]
    fn epe_examples() {
        let gt = field(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert_eq!(epe(&gt, &gt, None).unwrap(), 0.0);
        let pred = field(&[[1.3, 0.4, 0.0], [0.3, 2.4, 0.0]]);
        assert!((epe(&pred, &gt, None).unwrap() - 0.5).abs() < 1e-12);
        assert!(epe(&pred, &gt, Some(&[false, false])).is_err());
        assert!(epe(&pred, &field(&[[0.0; 3]]), None).is_err());
    }

    #[test]
    fn hand_computed_threeway() {
        let gt = field(&[[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let pred = field(&[[0.0, 0.0, 0.0], [0.11, 0.0, 0.0], [1.4, 0.0, 0.0]]);
        let classes = [
            PointClass::Background,
            PointClass::Foreground,
            PointClass::Foreground,
        ];
        let r = threeway_epe(&pred, &gt, &classes, 0.1).unwrap();
        assert_eq!(r.bg_epe, Some(0.0));
        assert!((r.fg_static_epe.unwrap() - 0.1).abs() < 1e-12);
        assert!((r.fg_dynamic_epe.unwrap() - 0.4).abs() < 1e-12);
        assert!((r.threeway_epe - 0.5 / 3.0).abs() < 1e-12);
        assert!(r.empty_buckets().is_empty());
    }

    #[test]
    fn empty_buckets_are_excluded() {
        let gt = field(&[[1.0, 0.0, 0.0]]);
        let pred = field(&[[1.0, 0.5, 0.0]]);
        let r = threeway_epe(&pred, &gt, &[PointClass::Foreground], 0.1).unwrap();
        assert_eq!(r.threeway_epe, 0.5);
        assert_eq!(
            r.empty_buckets(),
            vec![Bucket::Background, Bucket::ForegroundStatic]
        );
        assert!(threeway_epe(&field(&[]), &field(&[]), &[], 0.1).is_err());
    }

    #[test]
    fn threshold_is_inclusive_for_static() {
        // 0.05 m per 0.1 s frame is exactly 0.5 m/s.
        assert_eq!(
            Bucket::of(PointClass::Foreground, Vec3::new(0.05, 0.0, 0.0), 0.1),
            Bucket::ForegroundStatic
        );
        assert_eq!(
            Bucket::of(PointClass::Foreground, Vec3::new(0.0501, 0.0, 0.0), 0.1),
            Bucket::ForegroundDynamic
        );
    }
}
