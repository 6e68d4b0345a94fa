//! Coarse progress lines: `PROG <stage> <percent>% (<done>/<total>)`, at
//! most one per 5% step.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

type Sink = Arc<dyn Fn(&str) + Send + Sync>;

#[derive(Clone)]
pub struct Progress {
    sink: Option<Sink>,
}

impl std::fmt::Debug for Progress {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Progress")
            .field("enabled", &self.sink.is_some())
            .finish()
    }
}

impl Progress {
    pub fn silent() -> Self {
        Progress { sink: None }
    }

    pub fn new(sink: impl Fn(&str) + Send + Sync + 'static) -> Self {
        Progress {
            sink: Some(Arc::new(sink)),
        }
    }

    pub fn stage(&self, stage: &str, total: usize) -> StageProgress {
        let p = StageProgress {
            sink: self.sink.clone(),
            stage: stage.to_string(),
            total,
            last_step: AtomicUsize::new(usize::MAX),
        };
        p.tick(0);
        p
    }
}

pub struct StageProgress {
    sink: Option<Sink>,
    stage: String,
    total: usize,
    last_step: AtomicUsize,
}

impl StageProgress {
    /// Reports `done` completed units; emits a line when a new 5% step is
    /// reached.
    pub fn tick(&self, done: usize) {
        let Some(sink) = &self.sink else { return };
        let pct = if self.total == 0 {
            100
        } else {
            (done.min(self.total) * 100) / self.total
        };
        let step = pct / 5;
        let prev = self.last_step.load(Ordering::SeqCst);
        if prev != usize::MAX && step <= prev {
            return;
        }
        if self
            .last_step
            .compare_exchange(prev, step, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
        {
            sink(&format!(
                "PROG {} {}% ({}/{})",
                self.stage,
                step * 5,
                done,
                self.total
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn one_line_per_five_percent() {
        let lines = Arc::new(Mutex::new(Vec::new()));
        let l = lines.clone();
        let p = Progress::new(move |s| l.lock().unwrap().push(s.to_string()));
        let s = p.stage("train", 200);
        for i in 1..=200 {
            s.tick(i);
        }
        let lines = lines.lock().unwrap();
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[0], "PROG train 0% (0/200)");
        assert_eq!(lines[20], "PROG train 100% (200/200)");
    }
}
