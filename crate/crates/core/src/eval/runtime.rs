//! Per-pair wall-clock timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::scene::{FlowField, SceneSample};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub mean_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
    pub timed_runs: usize,
}

/// Runs `estimator` on every sample `repeats` times. The first run of each
/// sample is a warm-up and is not timed into the result.
pub fn bench_runtime<F>(
    mut estimator: F,
    samples: &[SceneSample],
    repeats: usize,
) -> Result<RuntimeStats>
where
    F: FnMut(&SceneSample) -> Result<FlowField>,
{
    if repeats < 3 {
        return Err(Error::InvalidConfig(format!(
            "repeats must be >= 3, got {repeats}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Empty("benchmark samples"));
    }
    let mut times = Vec::with_capacity(samples.len() * (repeats - 1));
    for s in samples {
        for r in 0..repeats {
            let start = Instant::now();
            std::hint::black_box(estimator(s)?);
            let ms = start.elapsed().as_secs_f64() * 1e3;
            if r > 0 {
                times.push(ms);
            }
        }
    }
    Ok(stats(&times))
}

fn stats(times: &[f64]) -> RuntimeStats {
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    RuntimeStats {
        mean_ms: mean,
        std_ms: var.sqrt(),
        timed_runs: times.len(),
    }
}
