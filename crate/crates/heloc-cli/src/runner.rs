use std::thread;

use heloc_core::hcl::{
    grad_one_graph, BatchRunner, GraphGrad, GraphJob, SequentialRunner, StepContext, TrainError,
};

/// Evaluates the graphs of a batch on up to `threads` OS threads. Job seeds
/// are drawn by the trainer before dispatch and gradients reduce in job
/// order, so results are identical to the sequential runner.
pub struct ThreadedRunner {
    pub threads: usize,
}

impl ThreadedRunner {
    /// Thread count from `HELOC_THREADS`, defaulting to the machine's
    /// available parallelism.
    pub fn from_env() -> Self {
        let threads = std::env::var("HELOC_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or_else(|| {
                thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
            .max(1);
        Self { threads }
    }
}

impl BatchRunner for ThreadedRunner {
    fn run(&self, ctx: &StepContext<'_>, jobs: &[GraphJob]) -> Result<Vec<GraphGrad>, TrainError> {
        let workers = self.threads.min(jobs.len());
        if workers <= 1 {
            return SequentialRunner.run(ctx, jobs);
        }
        let chunk = jobs.len().div_ceil(workers);
        let mut slots: Vec<Option<Result<GraphGrad, TrainError>>> =
            (0..jobs.len()).map(|_| None).collect();
        thread::scope(|scope| {
            let mut pending = Vec::new();
            for (w, (job_chunk, slot_chunk)) in
                jobs.chunks(chunk).zip(slots.chunks_mut(chunk)).enumerate()
            {
                let _ = w;
                pending.push(scope.spawn(move || {
                    for (job, slot) in job_chunk.iter().zip(slot_chunk.iter_mut()) {
                        *slot = Some(grad_one_graph(ctx, job));
                    }
                }));
            }
            for handle in pending {
                handle.join().expect("worker panicked");
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("all slots filled"))
            .collect()
    }
}
