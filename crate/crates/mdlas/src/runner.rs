//! Multi-threaded decoding.

use std::num::NonZeroUsize;
use std::thread;

use mdlas_core::eval::{decode_and_score, Job, Runner, UttResult};
use mdlas_core::model::LasModel;

use crate::error::{Error, Result};

/// Environment variable capping the number of decoding threads.
pub const THREADS_ENV: &str = "MDLAS_THREADS";

/// Decodes jobs on a pool of scoped threads over a frozen model. Results
/// are identical to sequential decoding and come back in job order.
#[derive(Debug, Clone, Copy)]
pub struct Parallel {
    threads: usize,
}

impl Parallel {
    pub fn new(threads: usize) -> Self {
        Parallel { threads: threads.max(1) }
    }

    /// Thread count from `MDLAS_THREADS`, defaulting to the available
    /// parallelism.
    pub fn from_env() -> Result<Self> {
        let available = thread::available_parallelism().map_or(1, NonZeroUsize::get);
        match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(Parallel::new(n)),
                _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
            },
            Err(_) => Ok(Parallel::new(available)),
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }
}

impl Runner for Parallel {
    fn run(&self, model: &LasModel, jobs: &[Job<'_>], beam: usize) -> mdlas_core::Result<Vec<UttResult>> {
        if self.threads <= 1 || jobs.len() < 2 {
            return jobs.iter().map(|j| decode_and_score(model, j, beam)).collect();
        }
        let chunk = jobs.len().div_ceil(self.threads);
        thread::scope(|s| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|j| decode_and_score(model, j, beam))
                            .collect::<mdlas_core::Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut out = Vec::with_capacity(jobs.len());
            for h in handles {
                out.extend(h.join().expect("decoding thread panicked")?);
            }
            Ok(out)
        })
    }
}
