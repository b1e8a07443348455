//! Dense numerical kernel: tensors and parameters, a reverse-mode tape,
//! three-layer perceptrons, Adam, finite-difference checking and
//! checkpoints.
//!
//! The free functions here are the value-level primitives shared by the tape
//! and by tests.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod mlp;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, restore_params, save_checkpoint, write_checkpoint, CheckpointFormat};
pub use gradcheck::{finite_diff_check, finite_diff_check_tol, GradCheckReport};
pub use graph::{Graph, NodeGrads, Var};
pub use mlp::{glorot, mlp3_forward, Mlp3};
pub use tensor::{GradBuffer, ParamId, ParamStore, Tensor};

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::{Error, Result};

/// Norms below this are treated as zero by [`project`].
pub const EPS_NORM: f64 = 1e-12;

/// `[q, k, q - k, q * k]` with an elementwise product in the last block.
pub fn interaction_features(q: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if q.len() != k.len() {
        return Err(Error::Shape(format!(
            "interaction features need equal lengths, got {} and {}",
            q.len(),
            k.len()
        )));
    }
    let mut out = Vec::with_capacity(4 * q.len());
    out.extend_from_slice(q);
    out.extend_from_slice(k);
    out.extend(q.iter().zip(k).map(|(a, b)| a - b));
    out.extend(q.iter().zip(k).map(|(a, b)| a * b));
    Ok(out)
}

/// Softmax over the entries where `mask` is true; masked entries get exactly
/// zero. Returns the weights and whether the mask had no valid entry (in
/// which case every weight is zero).
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> (Vec<f64>, bool) {
    assert_eq!(logits.len(), mask.len(), "logits and mask lengths differ");
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (vec![0.0; logits.len()], true);
    }
    let mut weights: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (weights, false)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

static ZERO_NORM_PROJECTIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of projections onto a zero-norm vector seen so far. Only counted in
/// debug builds.
pub fn zero_norm_projections() -> usize {
    ZERO_NORM_PROJECTIONS.load(Ordering::Relaxed)
}

/// Component of `c` along `e`: `(<e, c> / |e|^2) e`. Zero when `|e|` is
/// below [`EPS_NORM`].
pub fn project(e: &[f64], c: &[f64]) -> Vec<f64> {
    let norm_sq = dot(e, e);
    if norm_sq.sqrt() < EPS_NORM {
        if cfg!(debug_assertions) {
            ZERO_NORM_PROJECTIONS.fetch_add(1, Ordering::Relaxed);
        }
        return vec![0.0; e.len()];
    }
    let s = dot(e, c) / norm_sq;
    e.iter().map(|x| s * x).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}
