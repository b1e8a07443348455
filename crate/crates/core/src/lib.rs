//! Click-through-rate prediction with temporally aligned exposure context.
//!
//! Pipeline, bottom up:
//!
//! - [`feedlog`]: parse JSON-lines impression logs, group them into per-user
//!   streams and cut supervised samples.
//! - [`stm`]: offline search of the unclicked impressions nearest in time to
//!   every click.
//! - [`diffcore`]: a small dense reverse-mode engine, Adam, and checkpoints.
//! - [`model`]: embedding layer, exposure attention, projection enhancement,
//!   pluggable interest extraction, prediction head and loss.
//! - [`harness`]: metrics, synthetic data, training loop and experiment
//!   runners behind the `tem4ctr` CLI.

pub mod diffcore;
pub mod error;
pub mod feedlog;
pub mod harness;
pub mod model;
pub mod stm;

pub use error::{Error, Result};

/// Worker thread cap read from `TEM4CTR_THREADS`. `None` means rayon's default.
pub fn thread_cap() -> Option<usize> {
    std::env::var("TEM4CTR_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Run `f` inside a rayon pool honouring `TEM4CTR_THREADS`.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match thread_cap() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// Derive an independent 64-bit seed for sub-stream `stream` of `seed`
/// (splitmix64 finalizer), so per-user work can run in any order.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
