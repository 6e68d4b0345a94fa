//! Feedforward flow student: pillar pseudoimages, a U-Net that encodes each
//! frame separately and decodes them jointly, and a per-point flow head.

mod config;
mod loss;
mod model;
mod pillars;
mod train;

pub use config::PillarConfig;
pub use loss::{
    point_weights, speed_weight, student_loss, student_loss_on_graph, weight, WeightScheme,
    BACKGROUND_WEIGHT,
};
pub use model::{sidecar_path, student_forward, StudentModel};
pub use pillars::{pillar_cell, pillar_cells, pillar_features, Pseudoimage};
pub use train::{
    pair_loss_and_grads, train_student, write_epoch_log, EpochRecord, TrainConfig, TrainPair,
    Validation, EPOCH_LOG_HEADER,
};

#[cfg(test)]
mod tests;
