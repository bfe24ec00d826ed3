use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::count::param_count;
use crate::models::{Architecture, Model};

pub const DEFAULT_BATCH: usize = 8192;
pub const DEFAULT_REPEATS: usize = 100;
pub const DEFAULT_WARMUP: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_kind: String,
    pub config: Architecture,
    pub param_count: usize,
    pub instances_per_second: f64,
    pub batch_size: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub threads: usize,
}

/// Mean wall-clock seconds per call of `f` over `repeats` calls, after
/// `warmup` untimed calls.
pub fn time_per_call(repeats: usize, warmup: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let start = Instant::now();
    for _ in 0..repeats {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / repeats as f64)
}

/// Eval-mode forward throughput on the fixed batch `x`, on a pool of
/// `threads` workers (1 for stable timings).
pub fn throughput_bench(
    model: &Model,
    x: &Matrix,
    repeats: usize,
    warmup: usize,
    threads: usize,
) -> Result<BenchReport> {
    if x.rows() == 0 {
        return Err(Error::Config("benchmark batch must be non-empty".into()));
    }
    let secs = crate::par::with_threads(threads, || {
        time_per_call(repeats, warmup, || model.predict(x).map(drop))
    })?;
    let config = model.architecture();
    Ok(BenchReport {
        model_kind: model.kind().name().to_string(),
        param_count: param_count(&config),
        config,
        instances_per_second: x.rows() as f64 / secs.max(f64::MIN_POSITIVE),
        batch_size: x.rows(),
        repeats,
        warmup,
        threads,
    })
}
