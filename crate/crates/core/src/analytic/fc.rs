use super::expectations::{Cov2, DualActivation};
use crate::flops::{tally, FlopCounter, EXPECTATION_COST};
use crate::linalg::dot;
use crate::{Error, Result};

/// Kernel propagation state for one input pair of a dense net after
/// `layer` weight layers: the covariance triple and the accumulated tangent
/// kernel Θ_{:layer}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairState {
    pub cov: Cov2,
    pub theta: f64,
    pub layer: usize,
}

/// State after the first layer: q₁ = xᵀx', Θ_{:1} = q₁.
pub fn fc_initial(x: &[f64], y: &[f64]) -> Result<PairState> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("input lengths {} vs {}", x.len(), y.len())));
    }
    let q12 = dot(x, y);
    let cov = Cov2 { q11: dot(x, x), q22: dot(y, y), q12 };
    Ok(PairState { cov, theta: q12, layer: 1 })
}

/// Adds one nonlinearity and weight layer.
pub fn fc_layer_step(state: &PairState, act: &dyn DualActivation) -> Result<PairState> {
    let c = state.cov;
    let q11 = act.prod(&Cov2::diag(c.q11))?;
    let q22 = act.prod(&Cov2::diag(c.q22))?;
    let q12 = act.prod(&c)?;
    let slope = act.deriv(&c)?;
    Ok(PairState {
        cov: Cov2 { q11, q22, q12 },
        theta: q12 + state.theta * slope,
        layer: state.layer + 1,
    })
}

pub(crate) fn fc_ntk_counted(
    x: &[f64],
    y: &[f64],
    depth: usize,
    act: &dyn DualActivation,
    want_theta: bool,
    counter: Option<&FlopCounter>,
) -> Result<(f64, f64)> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    let mut s = fc_initial(x, y)?;
    tally(counter, 6 * x.len() as u64);
    for _ in 1..depth {
        if want_theta {
            s = fc_layer_step(&s, act)?;
            tally(counter, 4 * EXPECTATION_COST + 2);
        } else {
            let c = s.cov;
            s.cov = Cov2 {
                q11: act.prod(&Cov2::diag(c.q11))?,
                q22: act.prod(&Cov2::diag(c.q22))?,
                q12: act.prod(&c)?,
            };
            s.layer += 1;
            tally(counter, 3 * EXPECTATION_COST);
        }
    }
    Ok((s.theta, s.cov.q12))
}

/// Limit NTK and NNGP of a depth-`depth` bias-free ReLU net with linear
/// readout. Returns `(theta, nngp)`.
pub fn fc_ntk(x: &[f64], y: &[f64], depth: usize) -> Result<(f64, f64)> {
    fc_ntk_counted(x, y, depth, &super::Relu, true, None)
}
