//! Synthetic experiment engine behind the `egofit` command-line tool.

pub mod config;
pub mod dataset;
pub mod demo;
pub mod digest;
pub mod error;
pub mod eval;
pub mod fitting;
pub mod sampler;
pub mod table3;
pub mod undistort_cmd;

use rayon::prelude::*;

pub use error::{HarnessError, Result};

/// Order-preserving map, on a dedicated pool of `jobs` threads when `jobs > 1`.
pub fn par_map<T, U, F>(items: &[T], jobs: Option<usize>, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match jobs {
        Some(n) if n > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(|| items.par_iter().map(&f).collect()),
        _ => items.iter().map(f).collect(),
    }
}
