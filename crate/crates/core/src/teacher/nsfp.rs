//! Test-time optimization of two coordinate MLPs per frame pair.
//!
//! The forward network maps each point of `P_t` to its flow; the backward
//! network maps each warped point back toward `P_t`. Both minimize
//! `CD(P_t + f⁺, P_{t+1}) + CD(P_t + f⁺ + f⁻, P_t)` jointly under Adam, with
//! the truncated Chamfer distance `CD`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PseudoLabel, TeacherKind};
use crate::neighbors::{chamfer_on_graph, truncated_chamfer, ChamferConfig, KdTree};
use crate::nn::{Activation, AdamState, Graph, Mlp, ParamStore, Tensor};
use crate::scene::{FlowField, PointCloud, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub mlp_widths: Vec<usize>,
    pub activation: Activation,
    pub max_iters: usize,
    pub lr: f64,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub chamfer: ChamferConfig,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            mlp_widths: vec![3, 64, 64, 64, 3],
            activation: Activation::Relu,
            max_iters: 1000,
            lr: 1e-3,
            early_stop_patience: 50,
            early_stop_min_delta: 1e-4,
            chamfer: ChamferConfig::default(),
            seed: 0,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::InvalidConfig(
                "early_stop_patience must be >= 1".into(),
            ));
        }
        if self.mlp_widths.len() < 2
            || self.mlp_widths.first() != Some(&3)
            || self.mlp_widths.last() != Some(&3)
        {
            return Err(Error::InvalidConfig(format!(
                "teacher mlp_widths must start and end at 3, got {:?}",
                self.mlp_widths
            )));
        }
        if !(self.lr > 0.0) || !(self.early_stop_min_delta >= 0.0) {
            return Err(Error::InvalidConfig(
                "teacher lr must be > 0 and min_delta >= 0".into(),
            ));
        }
        self.chamfer.validate()
    }
}

/// Per-iteration trace of a teacher run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NsfpTrace {
    pub losses: Vec<f64>,
}

struct Best {
    loss: f64,
    flow: Vec<f64>,
    cycle: f64,
}

/// The two-network joint objective at the current parameters, on a fresh
/// graph. Returns the graph, the loss var, the forward flow var and the cycle
/// term var.
pub struct Objective<'a> {
    pub forward: &'a Mlp,
    pub backward: &'a Mlp,
    pub cloud_t: &'a [Vec3],
    pub cloud_t1: &'a [Vec3],
    pub tree_t: &'a KdTree,
    pub tree_t1: &'a KdTree,
    pub chamfer: &'a ChamferConfig,
}

pub struct Evaluated {
    pub graph: Graph,
    pub loss: crate::nn::Var,
    pub flow: crate::nn::Var,
    pub cycle: crate::nn::Var,
    pub bound: crate::nn::Bound,
}

impl Objective<'_> {
    pub fn evaluate(&self, store: &ParamStore) -> Result<Evaluated> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(points_tensor(self.cloud_t));
        let flow = self.forward.forward(&mut g, &p, x)?;
        let warped = g.add(x, flow)?;
        let back_flow = self.backward.forward(&mut g, &p, warped)?;
        let back = g.add(warped, back_flow)?;
        let fit = chamfer_on_graph(&mut g, warped, self.cloud_t1, self.tree_t1, self.chamfer)?;
        let cycle = chamfer_on_graph(&mut g, back, self.cloud_t, self.tree_t, self.chamfer)?;
        let loss = g.add(fit, cycle)?;
        Ok(Evaluated {
            graph: g,
            loss,
            flow,
            cycle,
            bound: p,
        })
    }
}

fn points_tensor(points: &[Vec3]) -> Tensor {
    Tensor::matrix(
        points.len(),
        3,
        points.iter().flat_map(|p| p.to_array()).collect(),
    )
    .expect("n x 3")
}

/// Builds the seeded forward and backward networks.
pub fn init_networks(cfg: &TeacherConfig) -> Result<(ParamStore, Mlp, Mlp)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let forward = Mlp::new(
        &mut store,
        "forward",
        &cfg.mlp_widths,
        cfg.activation,
        &mut rng,
    )?;
    let backward = Mlp::new(
        &mut store,
        "backward",
        &cfg.mlp_widths,
        cfg.activation,
        &mut rng,
    )?;
    Ok((store, forward, backward))
}

/// Fits the teacher to one frame pair and returns the forward flow of the
/// lowest-loss iterate.
pub fn nsfp_optimize(
    cloud_t: &PointCloud,
    cloud_t1: &PointCloud,
    cfg: &TeacherConfig,
) -> Result<PseudoLabel> {
    nsfp_optimize_traced(cloud_t, cloud_t1, cfg).map(|(label, _)| label)
}

pub fn nsfp_optimize_traced(
    cloud_t: &PointCloud,
    cloud_t1: &PointCloud,
    cfg: &TeacherConfig,
) -> Result<(PseudoLabel, NsfpTrace)> {
    cfg.validate()?;
    cloud_t.ensure_non_empty("cloud_t")?;
    cloud_t1.ensure_non_empty("cloud_t1")?;
    let start = Instant::now();
    let n = cloud_t.len();

    let (mut store, forward, backward) = init_networks(cfg)?;
    let mut adam = AdamState::new(cfg.lr, store.values());
    let tree_t = KdTree::build(&cloud_t.points);
    let tree_t1 = KdTree::build(&cloud_t1.points);
    let objective = Objective {
        forward: &forward,
        backward: &backward,
        cloud_t: &cloud_t.points,
        cloud_t1: &cloud_t1.points,
        tree_t: &tree_t,
        tree_t1: &tree_t1,
        chamfer: &cfg.chamfer,
    };

    // At zero flow the cycle term vanishes and the fit term is CD(P_t, P_t+1).
    let mut best = Best {
        loss: truncated_chamfer(&cloud_t.points, &cloud_t1.points, &cfg.chamfer)?,
        flow: vec![0.0; 3 * n],
        cycle: 0.0,
    };
    let mut trace = NsfpTrace::default();
    // Patience is measured against the iterates alone so that a random init
    // worse than zero flow still gets time to descend.
    let mut iterate_best = f64::INFINITY;
    let mut stall = 0;
    let mut iters_run = 0;

    for iteration in 0..cfg.max_iters {
        let ev = objective.evaluate(&store)?;
        let loss = ev.graph.value(ev.loss).item();
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration, loss });
        }
        iters_run = iteration + 1;
        trace.losses.push(loss);

        if loss < iterate_best - cfg.early_stop_min_delta {
            stall = 0;
        } else {
            stall += 1;
        }
        iterate_best = iterate_best.min(loss);
        if loss < best.loss {
            best = Best {
                loss,
                flow: ev.graph.value(ev.flow).data().to_vec(),
                cycle: ev.graph.value(ev.cycle).item(),
            };
        }
        if stall >= cfg.early_stop_patience || iters_run == cfg.max_iters {
            break;
        }

        let grads = ev.graph.backward(ev.loss)?;
        let grads = ev.bound.gradients(&grads, &store);
        adam.step(store.values_mut(), &grads)?;
    }

    let flow = FlowField::new(
        best.flow
            .chunks(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect(),
    );
    Ok((
        PseudoLabel {
            flow,
            teacher: TeacherKind::Nsfp,
            final_loss: best.loss,
            iters_run: iters_run as u32,
            wall_time_ms: start.elapsed().as_millis() as u64,
            cycle_loss: Some(best.cycle),
        },
        trace,
    ))
}
