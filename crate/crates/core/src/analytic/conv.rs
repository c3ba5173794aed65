use super::arch::{ArchSpec, Padding, Readout};
use super::expectations::{Cov2, DualActivation};
use crate::flops::{tally, FlopCounter, EXPECTATION_COST};
use crate::{Error, Result};

/// Pixel-indexed covariances of a pair of inputs, each a row-major d×d
/// matrix: `xy[s * d + t]` is the covariance of pixel s at x with pixel t
/// at x'.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelCov {
    pub d: usize,
    pub xx: Vec<f64>,
    pub xy: Vec<f64>,
    pub yy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelPairState {
    pub cov: PixelCov,
    /// Accumulated tangent kernel Θ_{:layer}, d×d.
    pub theta: Vec<f64>,
    pub layer: usize,
}

/// out[s][t] = Σ_r m[s+r][t+r].
fn pool_taps(m: &[f64], d: usize, offsets: &[isize], padding: Padding) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for s in 0..d {
        for t in 0..d {
            let mut acc = 0.0;
            for &r in offsets {
                if let (Some(p), Some(q)) = (padding.resolve(s, r, d), padding.resolve(t, r, d)) {
                    acc += m[p * d + q];
                }
            }
            out[s * d + t] = acc;
        }
    }
    out
}

/// Gaussian expectations for every pixel pair: E[p][q] uses the marginal
/// (var_a[p], var_b[q], cross[p][q]).
fn dual_matrix(
    var_a: &[f64],
    var_b: &[f64],
    cross: &[f64],
    act: &dyn DualActivation,
    deriv: bool,
) -> Result<Vec<f64>> {
    let d = var_a.len();
    let mut out = vec![0.0; d * d];
    for p in 0..d {
        for q in 0..d {
            let c = Cov2 { q11: var_a[p], q22: var_b[q], q12: cross[p * d + q] };
            out[p * d + q] = if deriv { act.deriv(&c)? } else { act.prod(&c)? };
        }
    }
    Ok(out)
}

fn diagonal(m: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|s| m[s * d + s]).collect()
}

fn first_layer(
    a: &[f64],
    b: &[f64],
    channels: usize,
    d: usize,
    offsets: &[isize],
    padding: Padding,
) -> Vec<f64> {
    let mut raw = vec![0.0; d * d];
    for p in 0..d {
        for q in 0..d {
            let mut acc = 0.0;
            for j in 0..channels {
                acc += a[p * channels + j] * b[q * channels + j];
            }
            raw[p * d + q] = acc / channels as f64;
        }
    }
    pool_taps(&raw, d, offsets, padding)
}

fn check_shapes(x: &[f64], y: &[f64], channels: usize) -> Result<usize> {
    if channels == 0 || !x.len().is_multiple_of(channels) || x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!(
            "conv inputs of lengths {} and {} with {channels} channels",
            x.len(),
            y.len()
        )));
    }
    Ok(x.len() / channels)
}

/// State after the first convolution: q₁ and Θ_{:1} = q₁.
pub fn conv1d_initial(
    x: &[f64],
    y: &[f64],
    channels: usize,
    offsets: &[isize],
    padding: Padding,
) -> Result<PixelPairState> {
    let d = check_shapes(x, y, channels)?;
    let xy = first_layer(x, y, channels, d, offsets, padding);
    let cov = PixelCov {
        d,
        xx: first_layer(x, x, channels, d, offsets, padding),
        yy: first_layer(y, y, channels, d, offsets, padding),
        xy: xy.clone(),
    };
    Ok(PixelPairState { cov, theta: xy, layer: 1 })
}

/// Adds one nonlinearity and convolution with the given footprint.
///
/// In the infinite-width limit the weight average (1/n)Σ_k W^{kr}W^{kr'}
/// vanishes unless r = r', so Θ picks up only matching taps.
pub fn conv1d_layer_step(
    state: &PixelPairState,
    offsets: &[isize],
    padding: Padding,
    act: &dyn DualActivation,
) -> Result<PixelPairState> {
    let d = state.cov.d;
    let vx = diagonal(&state.cov.xx, d);
    let vy = diagonal(&state.cov.yy, d);
    let exx = dual_matrix(&vx, &vx, &state.cov.xx, act, false)?;
    let eyy = dual_matrix(&vy, &vy, &state.cov.yy, act, false)?;
    let (xy, theta) = pair_step(&vx, &vy, &state.cov.xy, &state.theta, offsets, padding, act, true, None)?;
    Ok(PixelPairState {
        cov: PixelCov {
            d,
            xx: pool_taps(&exx, d, offsets, padding),
            yy: pool_taps(&eyy, d, offsets, padding),
            xy,
        },
        theta,
        layer: state.layer + 1,
    })
}

#[allow(clippy::too_many_arguments)]
fn pair_step(
    vx: &[f64],
    vy: &[f64],
    xy: &[f64],
    theta: &[f64],
    offsets: &[isize],
    padding: Padding,
    act: &dyn DualActivation,
    want_theta: bool,
    counter: Option<&FlopCounter>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = vx.len();
    let dd = (d * d) as u64;
    let k = offsets.len() as u64;
    let exy = dual_matrix(vx, vy, xy, act, false)?;
    let new_xy = pool_taps(&exy, d, offsets, padding);
    tally(counter, dd * (EXPECTATION_COST + k));
    if !want_theta {
        return Ok((new_xy, Vec::new()));
    }
    let mut weighted = dual_matrix(vx, vy, xy, act, true)?;
    for (w, t) in weighted.iter_mut().zip(theta) {
        *w *= t;
    }
    let mut new_theta = pool_taps(&weighted, d, offsets, padding);
    for (t, q) in new_theta.iter_mut().zip(&new_xy) {
        *t += q;
    }
    tally(counter, dd * (EXPECTATION_COST + k + 2));
    Ok((new_xy, new_theta))
}

/// Self-covariances q_l(x, x) for l = 1..=L.
pub(crate) fn self_chain(x: &[f64], arch: &ArchSpec, act: &dyn DualActivation) -> Result<Vec<Vec<f64>>> {
    let d = check_shapes(x, x, arch.input_dim)?;
    let mut chain = vec![first_layer(x, x, arch.input_dim, d, arch.offsets(0), arch.padding)];
    for l in 1..arch.depth() {
        let prev = chain.last().unwrap();
        let v = diagonal(prev, d);
        let e = dual_matrix(&v, &v, prev, act, false)?;
        chain.push(pool_taps(&e, d, arch.offsets(l), arch.padding));
    }
    Ok(chain)
}

/// Pair kernel given precomputed self-covariance chains of both inputs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_pair(
    x: &[f64],
    y: &[f64],
    chain_x: &[Vec<f64>],
    chain_y: &[Vec<f64>],
    arch: &ArchSpec,
    act: &dyn DualActivation,
    want_theta: bool,
    counter: Option<&FlopCounter>,
) -> Result<(f64, f64)> {
    let d = check_shapes(x, y, arch.input_dim)?;
    let mut xy = first_layer(x, y, arch.input_dim, d, arch.offsets(0), arch.padding);
    tally(counter, (d * d * (arch.input_dim * 2 + arch.offsets(0).len())) as u64);
    let mut theta = if want_theta { xy.clone() } else { Vec::new() };
    for l in 1..arch.depth() {
        let vx = diagonal(&chain_x[l - 1], d);
        let vy = diagonal(&chain_y[l - 1], d);
        let (nxy, nt) = pair_step(&vx, &vy, &xy, &theta, arch.offsets(l), arch.padding, act, want_theta, counter)?;
        xy = nxy;
        theta = nt;
    }
    let vx = diagonal(&chain_x[arch.depth() - 1], d);
    let vy = diagonal(&chain_y[arch.depth() - 1], d);
    tally(counter, (4 * d * d) as u64);
    pool_readout(&vx, &vy, &xy, &theta, arch.readout, act, want_theta)
}

fn pool_readout(
    vx: &[f64],
    vy: &[f64],
    xy: &[f64],
    theta: &[f64],
    readout: Readout,
    act: &dyn DualActivation,
    want_theta: bool,
) -> Result<(f64, f64)> {
    let d = vx.len();
    let norm = 1.0 / (d * d) as f64;
    match readout {
        Readout::AvgPool => {
            let t = if want_theta { theta.iter().sum::<f64>() * norm } else { 0.0 };
            Ok((t, xy.iter().sum::<f64>() * norm))
        }
        Readout::AvgPoolRelu => {
            let e = dual_matrix(vx, vy, xy, act, false)?;
            let t = if want_theta {
                let ed = dual_matrix(vx, vy, xy, act, true)?;
                ed.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() * norm
            } else {
                0.0
            };
            Ok((t, e.iter().sum::<f64>() * norm))
        }
        Readout::Linear => Err(Error::InvalidArgument("conv nets need a pooling readout".into())),
    }
}

/// Final contraction of a propagated state: `(theta, nngp)`.
pub fn conv1d_readout(state: &PixelPairState, readout: Readout, act: &dyn DualActivation) -> Result<(f64, f64)> {
    let d = state.cov.d;
    pool_readout(
        &diagonal(&state.cov.xx, d),
        &diagonal(&state.cov.yy, d),
        &state.cov.xy,
        &state.theta,
        readout,
        act,
        true,
    )
}

/// Limit NTK and NNGP of an average-pooled 1-D conv ReLU net.
/// Returns `(theta, nngp)`.
pub fn conv1d_ntk_with_pool(x: &[f64], y: &[f64], arch: &ArchSpec) -> Result<(f64, f64)> {
    arch.validate()?;
    if !arch.is_conv() {
        return Err(Error::InvalidArgument("architecture is not convolutional".into()));
    }
    if x.len() != arch.input_len() {
        return Err(Error::Shape(format!("input length {} vs {}", x.len(), arch.input_len())));
    }
    let act = super::Relu;
    let cx = self_chain(x, arch, &act)?;
    let cy = self_chain(y, arch, &act)?;
    conv_pair(x, y, &cx, &cy, arch, &act, true, None)
}
