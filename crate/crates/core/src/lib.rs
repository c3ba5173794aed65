//! Infinite-width neural tangent and NNGP kernels, with the tooling needed to
//! use them and to check them against real finite-width networks.
//!
//! * [`analytic`]: closed-form ReLU dual activations and the layer-wise
//!   covariance recursion for fully-connected and 1-D convolutional nets,
//!   plus tiled Gram assembly.
//! * [`dynamics`]: exact linearized training under square loss, GP moments,
//!   stability diagnostics and width/generalization certificates.
//! * [`empirical`]: a small finite-width network engine with hand-written
//!   reverse mode, empirical kernels, kernel velocity and weight-space
//!   training.
//! * [`corrections`]: the higher-order kernel hierarchy, first-order 1/n
//!   corrected dynamics and label-aware kernels.
//! * [`solvers`]: direct ridge, block multiclass, Nyström with conjugate
//!   gradients, numeric function-space dynamics and matrix completion.
//! * [`spectral`]: zonal spectra on the circle, power-law fits, Fourier
//!   embeddings and learning-order diagnostics.
//! * [`io`] and [`bench`]: binary formats, CSV datasets and the scaling
//!   harness used by the command line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bench;
pub mod corrections;
pub mod dynamics;
pub mod empirical;
pub mod error;
pub mod flops;
pub mod io;
pub mod linalg;
pub mod solvers;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};

/// Crate version, stamped into every numeric output row.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `module@version` tag identifying which part of the engine produced a row.
pub fn fingerprint(module: &str) -> String {
    format!("{module}@{VERSION}")
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Seed of the `k`-th member of a family rooted at `root` (splitmix64).
pub fn derive_seed(root: u64, k: u64) -> u64 {
    let mut z = root.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
