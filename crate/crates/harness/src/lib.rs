//! Experiment harness for Fisher-information-ratio batch active learning.
//!
//! * [`data`]: CSV and binary matrix files, synthetic Gaussian blobs.
//! * [`baselines`]: random, k-means and entropy selectors.
//! * [`config`]: `key = value` experiment configuration.
//! * [`experiment`]: the multi-round driver and its JSON report.
//! * [`verify`]: seeded oracle suites.
//! * [`bench`]: single-threaded size sweeps.

pub mod baselines;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod verify;

pub use error::{HarnessError, Result};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "FIRALKIT_THREADS";

/// Sizes the global rayon pool: the explicit count wins, then
/// `FIRALKIT_THREADS`, then rayon's default.
pub fn init_threads(explicit: Option<usize>) -> Result<()> {
    let n =
        match explicit {
            Some(n) => Some(n),
            None => match std::env::var(THREADS_ENV) {
                Ok(v) => Some(v.trim().parse().map_err(|_| {
                    HarnessError::config(THREADS_ENV, format!("cannot parse `{v}`"))
                })?),
                Err(_) => None,
            },
        };
    if let Some(n) = n {
        if n == 0 {
            return Err(HarnessError::config("threads", "must be at least 1"));
        }
        // a second initialization in the same process is harmless to ignore
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}
