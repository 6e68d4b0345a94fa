//! Distillation training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{point_weights, student_loss_on_graph, WeightScheme};
use super::StudentModel;
use crate::eval::{evaluate_samples, ThreewayReport};
use crate::nn::{AdamState, Graph, Tensor};
use crate::scene::{FlowField, SceneSample};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub scheme: WeightScheme,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-6,
            batch_size: 8,
            epochs: 50,
            scheme: WeightScheme::Uniform,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "lr must be > 0 and batch_size >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A training frame pair and the flow it is supervised with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub sample: SceneSample,
    pub label: FlowField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Held-out metrics after the epoch; `None` without a held-out split.
    pub threeway: Option<ThreewayReport>,
    /// Mean per-sample loss over the epoch, measured before each update.
    pub train_loss: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,threeway_epe,fg_dynamic,fg_static,bg,train_loss";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let t = self.threeway.as_ref();
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            opt(t.map(|r| r.threeway_epe)),
            opt(t.and_then(|r| r.fg_dynamic_epe)),
            opt(t.and_then(|r| r.fg_static_epe)),
            opt(t.and_then(|r| r.bg_epe)),
            self.train_loss
        )
    }
}

pub fn write_epoch_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{EPOCH_LOG_HEADER}").expect("vec write");
    for r in records {
        writeln!(out, "{}", r.csv_row()).expect("vec write");
    }
    crate::scene::io::write_file(path, &out)
}

/// Loss of one pair and its parameter gradients.
pub fn pair_loss_and_grads(
    model: &StudentModel,
    pair: &TrainPair,
    weights: &[f64],
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let pred = model.forward_on_graph(&mut g, &p, &pair.sample.cloud_t, &pair.sample.cloud_t1)?;
    let loss = student_loss_on_graph(&mut g, pred, &pair.label, weights)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    Ok((value, p.gradients(&grads, model.params())))
}

/// Held-out pairs scored after every epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct Validation<'a> {
    pub samples: &'a [SceneSample],
    /// Score only points inside this half extent.
    pub crop_half_extent: Option<f64>,
}

/// Trains in place and returns one record per epoch. `on_epoch` sees each
/// record as soon as it is complete.
pub fn train_student(
    model: &mut StudentModel,
    train: &[TrainPair],
    val: Validation<'_>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if cfg.epochs > 0 && train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let weights = train
        .iter()
        .map(|t| {
            t.label.check_len(t.sample.cloud_t.len())?;
            point_weights(
                cfg.scheme,
                Some(&t.sample.classes),
                &t.label,
                t.sample.dt_seconds,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.lr, model.params().values());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut total: Option<Vec<Tensor>> = None;
            for &i in chunk {
                let (loss, grads) = pair_loss_and_grads(model, &train[i], &weights[i])?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch });
                }
                loss_sum += loss;
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g);
                        }
                    }
                }
            }
            let mut grads = total.expect("non-empty batch");
            let inv = 1.0 / chunk.len() as f64;
            for t in &mut grads {
                t.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            adam.step(model.params_mut().values_mut(), &grads)?;
        }
        let threeway = if val.samples.is_empty() {
            None
        } else {
            Some(evaluate_samples(val.samples, val.crop_half_extent, |s| {
                model.forward(&s.cloud_t, &s.cloud_t1)
            })?)
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            threeway,
            train_loss: loss_sum / train.len() as f64,
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}
