//! Per-point weighting and the weighted endpoint loss.

use serde::{Deserialize, Serialize};

use crate::nn::{Graph, Tensor, Var};
use crate::scene::{FlowField, PointClass, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Uniform,
    Semantic,
    SpeedInterp,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightScheme::Uniform),
            "semantic" => Ok(WeightScheme::Semantic),
            "speed_interp" => Ok(WeightScheme::SpeedInterp),
            other => Err(Error::InvalidConfig(format!(
                "unknown weight scheme {other:?} (expected uniform, semantic or speed_interp)"
            ))),
        }
    }
}

pub const BACKGROUND_WEIGHT: f64 = 0.1;

/// Speed weight: 0.1 below 0.4 m/s, 1.0 above 1.0 m/s, and the line
/// `1.8 s − 0.8` clamped to `[0.1, 1.0]` in between.
pub fn speed_weight(speed: f64) -> f64 {
    if speed < 0.4 {
        0.1
    } else if speed > 1.0 {
        1.0
    } else {
        // Same line as 1.8 s − 0.8, written to round exactly at tenths.
        ((18.0 * speed - 8.0) / 10.0).clamp(0.1, 1.0)
    }
}

pub fn weight(
    scheme: WeightScheme,
    class: Option<PointClass>,
    label_flow: Vec3,
    dt: f64,
) -> Result<f64> {
    match scheme {
        WeightScheme::Uniform => Ok(1.0),
        WeightScheme::Semantic => match class {
            Some(PointClass::Foreground) => Ok(1.0),
            Some(PointClass::Background) => Ok(BACKGROUND_WEIGHT),
            None => Err(Error::InvalidConfig(
                "semantic weighting needs class labels".into(),
            )),
        },
        WeightScheme::SpeedInterp => {
            if !(dt > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "dt must be positive, got {dt}"
                )));
            }
            Ok(speed_weight(label_flow.norm() / dt))
        }
    }
}

/// Weights for every point of a labeled pair.
pub fn point_weights(
    scheme: WeightScheme,
    classes: Option<&[PointClass]>,
    label: &FlowField,
    dt: f64,
) -> Result<Vec<f64>> {
    if let Some(c) = classes {
        if c.len() != label.len() {
            return Err(Error::LengthMismatch {
                what: "classes",
                got: c.len(),
                expected: label.len(),
            });
        }
    }
    label
        .vectors
        .iter()
        .enumerate()
        .map(|(i, &v)| weight(scheme, classes.map(|c| c[i]), v, dt))
        .collect()
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            what: "weights",
            got: weights.len(),
            expected: n,
        });
    }
    if n == 0 {
        return Err(Error::Empty("student loss points"));
    }
    Ok(())
}

/// Mean of `weight · ‖pred − label‖₂`.
pub fn student_loss(pred: &FlowField, label: &FlowField, weights: &[f64]) -> Result<f64> {
    pred.check_len(label.len())?;
    check_weights(weights, label.len())?;
    let sum: f64 = pred
        .vectors
        .iter()
        .zip(&label.vectors)
        .zip(weights)
        .map(|((p, l), w)| w * (*p - *l).norm())
        .sum();
    Ok(sum / label.len() as f64)
}

/// [`student_loss`] on a `[N, 3]` prediction node.
pub fn student_loss_on_graph(
    g: &mut Graph,
    pred: Var,
    label: &FlowField,
    weights: &[f64],
) -> Result<Var> {
    let n = label.len();
    if g.shape(pred) != [n, 3] {
        return Err(Error::ShapeMismatch {
            op: "student_loss",
            lhs: g.shape(pred).to_vec(),
            rhs: vec![n, 3],
        });
    }
    check_weights(weights, n)?;
    let target = g.constant(Tensor::matrix(
        n,
        3,
        label.vectors.iter().flat_map(|v| v.to_array()).collect(),
    )?);
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    let norm2 = g.sum_rows(sq)?;
    let norm = g.sqrt(norm2);
    let w = g.constant(Tensor::vector(weights.to_vec()));
    let weighted = g.mul(norm, w)?;
    g.reduce_mean(weighted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(v: &[[f64; 3]]) -> FlowField {
        FlowField::new(v.iter().map(|a| Vec3::from_array(*a)).collect())
    }

    #[test]
    fn speed_weight_table() {
        let speeds = [0.0, 0.3, 0.4, 0.5, 0.75, 0.9, 1.0, 1.5];
        let expected = [0.1, 0.1, 0.1, 0.1, 0.55, 0.82, 1.0, 1.0];
        for (s, w) in speeds.iter().zip(expected) {
            assert_eq!(speed_weight(*s), w, "speed {s}");
        }
    }

    #[test]
    fn speed_weight_is_monotone_and_bounded() {
        let mut prev = 0.0;
        for i in 0..=300 {
            let w = speed_weight(i as f64 * 0.01);
            assert!((0.1..=1.0).contains(&w));
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn weight_schemes() {
        let v = Vec3::new(0.09, 0.0, 0.0);
        assert_eq!(weight(WeightScheme::Uniform, None, v, 0.1).unwrap(), 1.0);
        assert_eq!(
            weight(WeightScheme::Semantic, Some(PointClass::Background), v, 0.1).unwrap(),
            0.1
        );
        assert_eq!(
            weight(WeightScheme::Semantic, Some(PointClass::Foreground), v, 0.1).unwrap(),
            1.0
        );
        assert!(weight(WeightScheme::Semantic, None, v, 0.1).is_err());
        assert!((weight(WeightScheme::SpeedInterp, None, v, 0.1).unwrap() - 0.82).abs() < 1e-12);
        assert!(weight(WeightScheme::SpeedInterp, None, v, 0.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let label = field(&[[0.0; 3], [0.0; 3]]);
        let pred = field(&[[1.0, 0.0, 0.0], [0.0, 3.0, 0.0]]);
        assert_eq!(student_loss(&label, &label, &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(student_loss(&pred, &label, &[1.0, 1.0]).unwrap(), 2.0);
        assert!((student_loss(&pred, &label, &[0.1, 1.0]).unwrap() - 1.55).abs() < 1e-12);
        assert!(student_loss(&pred, &label, &[1.0]).is_err());
    }

    #[test]
    fn constant_offset_gives_its_norm() {
        let label = field(&[[0.3, -1.0, 2.0], [5.0, 0.0, 0.1], [0.0, 0.0, 0.0]]);
        let c = Vec3::new(0.3, 0.4, 0.0);
        let pred = FlowField::new(label.vectors.iter().map(|&v| v + c).collect());
        let l = student_loss(&pred, &label, &[1.0; 3]).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn graph_loss_matches_plain() {
        let label = field(&[[0.0, 1.0, 0.0], [0.5, 0.5, 0.5]]);
        let pred = field(&[[1.0, 0.0, 0.0], [0.5, 0.5, 0.5]]);
        let mut g = Graph::new();
        let p = g.param(
            Tensor::matrix(
                2,
                3,
                pred.vectors.iter().flat_map(|v| v.to_array()).collect(),
            )
            .unwrap(),
        );
        let l = student_loss_on_graph(&mut g, p, &label, &[0.5, 1.0]).unwrap();
        assert_eq!(
            g.value(l).item(),
            student_loss(&pred, &label, &[0.5, 1.0]).unwrap()
        );
        // Zero residual rows get zero gradient rather than NaN.
        let grads = g.backward(l).unwrap();
        assert!(grads.get(p).unwrap().data()[3..].iter().all(|&x| x == 0.0));
    }
}
