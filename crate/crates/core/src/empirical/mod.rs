//! Finite-width networks and their empirical kernels.

mod kernel;
mod net;
mod scalar;
mod train;

pub use kernel::{
    activation_pattern_gram, empirical_ntk, empirical_ntk_cross, empirical_ntk_layers, empirical_ntk_vector_product,
    kernel_distance, mc_kernel_estimate, Jacobian,
};
pub use net::{Activation, FiniteNet, LayerGrad, NetSpec, Parameterization};
pub use scalar::{Dual, HyperDual3, Scalar};
pub use train::{gradient_flow_train, piecewise_linearized_train, Loss, PiecewiseTrajectory, Segment, TrainOptions, Trajectory};
