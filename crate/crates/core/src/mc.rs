//! Deterministic parallel Monte Carlo plumbing.

use rayon::prelude::*;
use serde::Serialize;

/// Evaluates `f(path_index)` for every path on a pool of `threads` workers
/// (all cores when `None`) and returns the results in path order.
pub fn map_paths<T, F>(n_paths: usize, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    match builder.build() {
        Ok(pool) => pool.install(|| (0..n_paths as u64).into_par_iter().map(&f).collect()),
        Err(_) => (0..n_paths as u64).map(f).collect(),
    }
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    /// Two-pass mean and variance, summed in input order. The mean is
    /// accumulated relative to the first sample, so constant samples give
    /// that constant exactly.
    pub fn from_samples<I>(samples: I) -> Self
    where
        I: IntoIterator<Item = f64>,
        I::IntoIter: Clone,
    {
        let it = samples.into_iter();
        let Some(first) = it.clone().next() else {
            return Self { mean: f64::NAN, se: f64::NAN, n: 0 };
        };
        let (n, shifted) = it.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + (x - first)));
        let mean = if first.is_finite() { first + shifted / n as f64 } else { first + shifted };
        if n < 2 || !mean.is_finite() {
            return Self { mean, se: if mean.is_finite() { 0.0 } else { f64::NAN }, n };
        }
        let ss: f64 = it.map(|x| (x - mean) * (x - mean)).sum();
        Self { mean, se: (ss / (n as f64 - 1.0) / n as f64).sqrt(), n }
    }

    /// `|mean − target| ≤ k·se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}
