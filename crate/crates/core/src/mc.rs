//! Deterministic parallel Monte Carlo reduction.
//!
//! Paths are split into fixed-size chunks; every chunk is accumulated
//! sequentially and the chunk summaries are merged in index order, so the
//! result does not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHUNK: usize = 1024;

/// Running mean and centered second moment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        Moments {
            n,
            mean: self.mean + d * w,
            m2: self.m2 + other.m2 + d * d * self.n as f64 * w,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { estimate: self.mean, stderr: self.stderr(), n_paths: self.n as usize }
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl Estimate {
    /// `|a - b| / sqrt(se_a² + se_b²)`.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let se = self.stderr.hypot(other.stderr);
        let d = (self.estimate - other.estimate).abs();
        if se == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }
}

/// Evaluate `sample(path_index, out)` for every path and return per-slot
/// moments of the `dims` values each path writes.
pub fn reduce_paths<F>(n_paths: usize, dims: usize, sample: F) -> Result<Vec<Moments>>
where
    F: Fn(u64, &mut [f64]) -> Result<()> + Sync,
{
    let n_chunks = n_paths.div_ceil(CHUNK);
    let chunks: Vec<Result<Vec<Moments>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Moments::default(); dims];
            let mut buf = vec![0.0; dims];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                buf.iter_mut().for_each(|x| *x = 0.0);
                sample(idx as u64, &mut buf)?;
                for (a, &x) in acc.iter_mut().zip(&buf) {
                    a.push(x);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![Moments::default(); dims];
    for chunk in chunks {
        let chunk = chunk?;
        for (t, c) in total.iter_mut().zip(&chunk) {
            *t = t.merge(c);
        }
    }
    Ok(total)
}

/// Run `f` on a dedicated pool of `workers` threads (`None`: global pool).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidConfig("worker count must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
