//! Exact infinite-width kernels by layer-wise covariance propagation.

mod arch;
mod conv;
mod expectations;
mod fc;
mod gram;

pub use arch::{fnv1a, ArchSpec, LayerKind, Padding, Readout};
pub use conv::{
    conv1d_initial, conv1d_layer_step, conv1d_ntk_with_pool, conv1d_readout, PixelCov,
    PixelPairState,
};
pub use expectations::{relu_deriv_expectation, relu_prod_expectation, Cov2, DualActivation, Relu};
pub use fc::{fc_initial, fc_layer_step, fc_ntk, PairState};
pub use gram::{
    cross_gram, gram, gram_with, AnalyticKernel, GramMatrix, GramOptions, KernelKind,
    DEFAULT_TILE,
};
