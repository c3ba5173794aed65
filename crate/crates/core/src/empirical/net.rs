use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scalar::{Dual, HyperDual3, Scalar};
use crate::analytic::{fnv1a, ArchSpec, Readout};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// ln(1 + e^{βz}) / β, a smooth stand-in for ReLU.
    Softplus { beta: f64 },
    Tanh,
    Identity,
}

impl Activation {
    pub const SMOOTH_RELU: Activation = Activation::Softplus { beta: 20.0 };

    /// φ(z) and its first four derivatives. ReLU uses φ'(0) = 0.
    pub fn derivs(&self, z: f64) -> [f64; 5] {
        match *self {
            Activation::Relu => {
                if z > 0.0 {
                    [z, 1.0, 0.0, 0.0, 0.0]
                } else {
                    [0.0; 5]
                }
            }
            Activation::Identity => [z, 1.0, 0.0, 0.0, 0.0],
            Activation::Tanh => {
                let t = z.tanh();
                let u = 1.0 - t * t;
                [t, u, -2.0 * t * u, u * (6.0 * t * t - 2.0), 8.0 * t * u * (2.0 - 3.0 * t * t)]
            }
            Activation::Softplus { beta } => {
                let bz = beta * z;
                let value = z.max(0.0) + (-bz.abs()).exp().ln_1p() / beta;
                let s = 1.0 / (1.0 + (-bz).exp());
                let v = s * (1.0 - s);
                [
                    value,
                    s,
                    beta * v,
                    beta * beta * v * (1.0 - 2.0 * s),
                    beta.powi(3) * v * (1.0 - 6.0 * s + 6.0 * s * s),
                ]
            }
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            _ => self.derivs(z)[0],
        }
    }

    #[inline]
    fn apply<T: Scalar>(&self, z: T) -> T {
        let d = self.derivs(z.re());
        z.lift([d[0], d[1], d[2], d[3]])
    }

    #[inline]
    fn slope<T: Scalar>(&self, z: T) -> T {
        let d = self.derivs(z.re());
        z.lift([d[1], d[2], d[3], d[4]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Unit-variance weights, 1/√fan-in applied in the forward pass.
    Ntk,
    /// Variance 1/fan-in baked into the weights, no forward scaling.
    Standard,
}

/// Width and output configuration of a finite network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSpec {
    pub width: usize,
    pub outputs: usize,
    pub param: Parameterization,
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(width: usize) -> Self {
        Self { width, outputs: 1, param: Parameterization::Ntk, activation: Activation::Relu }
    }

    pub fn param(mut self, p: Parameterization) -> Self {
        self.param = p;
        self
    }

    pub fn activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    pub fn outputs(mut self, k: usize) -> Self {
        self.outputs = k;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offsets: Vec<isize>,
    pub start: usize,
    pub forward_scale: f64,
    pub init_std: f64,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out * self.offsets.len()
    }
}

/// Gradient of one output with respect to one layer's weights.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad<T> {
    /// Rank-one gradient left ⊗ right of a dense layer.
    Outer { left: Vec<T>, right: Vec<T> },
    Full(Vec<T>),
}

impl<T: Scalar> LayerGrad<T> {
    pub fn flatten_into(&self, out: &mut Vec<T>) {
        match self {
            LayerGrad::Outer { left, right } => {
                for &a in left {
                    out.extend(right.iter().map(|&b| a * b));
                }
            }
            LayerGrad::Full(g) => out.extend_from_slice(g),
        }
    }
}

pub(crate) trait Weights<T: Scalar>: Sync {
    fn w(&self, idx: usize) -> T;
}

pub(crate) struct Plain<'a>(pub &'a [f64]);
impl Weights<f64> for Plain<'_> {
    #[inline]
    fn w(&self, idx: usize) -> f64 {
        self.0[idx]
    }
}

pub(crate) struct Tangent<'a> {
    pub p: &'a [f64],
    pub dir: &'a [f64],
}
impl Weights<Dual> for Tangent<'_> {
    #[inline]
    fn w(&self, idx: usize) -> Dual {
        Dual::new(self.p[idx], self.dir[idx])
    }
}

pub(crate) struct Tangent3<'a> {
    pub p: &'a [f64],
    pub dirs: [&'a [f64]; 3],
}
impl Weights<HyperDual3> for Tangent3<'_> {
    #[inline]
    fn w(&self, idx: usize) -> HyperDual3 {
        HyperDual3::seed(self.p[idx], [self.dirs[0][idx], self.dirs[1][idx], self.dirs[2][idx]])
    }
}

pub(crate) struct Trace<T> {
    /// acts[l] is the input of layer l.
    pub acts: Vec<Vec<T>>,
    /// pre[l] is the output of layer l before the nonlinearity.
    pub pre: Vec<Vec<T>>,
    pub out: Vec<T>,
}

/// A concrete bias-free network: dense or 1-D conv layers with a common
/// hidden width, activation between layers, readout per the architecture.
///
/// The first dense layer carries no fan-in scaling, so the first-layer
/// covariance is xᵀx'. Every other layer (and the first conv layer) uses
/// 1/√fan-in, in the forward pass under NTK parameterization and in the
/// initialization variance under standard parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteNet {
    pub arch: ArchSpec,
    pub spec: NetSpec,
    pub seed: u64,
    pub(crate) layers: Vec<LayerShape>,
    pub params: Vec<f64>,
}

impl FiniteNet {
    pub fn new(arch: &ArchSpec, spec: NetSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        if spec.width == 0 || spec.outputs == 0 {
            return Err(Error::InvalidArgument("width and outputs must be positive".into()));
        }
        let depth = arch.depth();
        let mut layers = Vec::with_capacity(depth);
        let mut start = 0;
        for l in 0..depth {
            let fan_in = if l == 0 { arch.input_dim } else { spec.width };
            let fan_out = if l + 1 == depth { spec.outputs } else { spec.width };
            let unscaled = l == 0 && !arch.is_conv();
            let s = if unscaled { 1.0 } else { 1.0 / (fan_in as f64).sqrt() };
            let (forward_scale, init_std) = match spec.param {
                Parameterization::Ntk => (s, 1.0),
                Parameterization::Standard => (1.0, s),
            };
            let shape = LayerShape { fan_in, fan_out, offsets: arch.offsets(l).to_vec(), start, forward_scale, init_std };
            start += shape.len();
            layers.push(shape);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(start);
        for shape in &layers {
            for _ in 0..shape.len() {
                let z: f64 = StandardNormal.sample(&mut rng);
                params.push(shape.init_std * z);
            }
        }
        Ok(Self { arch: arch.clone(), spec, seed, layers, params })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn outputs(&self) -> usize {
        self.spec.outputs
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Flat index range of layer `l`'s weights.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let s = &self.layers[l];
        s.start..s.start + s.len()
    }

    /// Replaces the readout weights by their signs (±1).
    pub fn with_sign_readout(mut self) -> Self {
        let r = self.layer_range(self.depth() - 1);
        for w in &mut self.params[r] {
            *w = if *w >= 0.0 { 1.0 } else { -1.0 };
        }
        self
    }

    /// Identifies architecture, widths and parameterization (not weights).
    pub fn fingerprint(&self) -> u64 {
        let text = format!("{}|{:?}|{}", self.arch.fingerprint(), self.spec, self.params.len());
        fnv1a(text.as_bytes())
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_len() {
            return Err(Error::Shape(format!(
                "input of length {} for a net expecting {}",
                x.len(),
                self.arch.input_len()
            )));
        }
        Ok(())
    }

    fn check_dir(&self, dir: &[f64]) -> Result<()> {
        if dir.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "direction of length {} for {} parameters",
                dir.len(),
                self.n_params()
            )));
        }
        Ok(())
    }

    fn layer_forward<T: Scalar, W: Weights<T>>(&self, l: usize, w: &W, input: &[T]) -> Vec<T> {
        let sh = &self.layers[l];
        let d = self.arch.pixels;
        let taps = sh.offsets.len();
        let mut out = vec![T::zero(); d * sh.fan_out];
        for p in 0..d {
            for o in 0..sh.fan_out {
                let mut acc = T::zero();
                for (r, &off) in sh.offsets.iter().enumerate() {
                    let Some(q) = self.arch.padding.resolve(p, off, d) else { continue };
                    let x = &input[q * sh.fan_in..(q + 1) * sh.fan_in];
                    let base = sh.start + o * sh.fan_in * taps + r;
                    for (i, &xi) in x.iter().enumerate() {
                        acc += w.w(base + i * taps) * xi;
                    }
                }
                out[p * sh.fan_out + o] = acc.scale(sh.forward_scale);
            }
        }
        out
    }

    pub(crate) fn trace<T: Scalar, W: Weights<T>>(&self, w: &W, x: &[f64]) -> Trace<T> {
        let depth = self.depth();
        let act = self.spec.activation;
        let mut acts: Vec<Vec<T>> = vec![x.iter().map(|&v| T::cst(v)).collect()];
        let mut pre = Vec::with_capacity(depth);
        for l in 0..depth {
            let h = self.layer_forward(l, w, acts.last().unwrap());
            if l + 1 < depth {
                acts.push(h.iter().map(|&z| act.apply(z)).collect());
            }
            pre.push(h);
        }
        let last = pre.last().unwrap();
        let k = self.spec.outputs;
        let d = self.arch.pixels;
        let out = match self.arch.readout {
            Readout::Linear => last.clone(),
            Readout::AvgPool | Readout::AvgPoolRelu => (0..k)
                .map(|o| {
                    let mut acc = T::zero();
                    for p in 0..d {
                        let z = last[p * k + o];
                        acc += if self.arch.readout == Readout::AvgPool { z } else { act.apply(z) };
                    }
                    acc.scale(1.0 / d as f64)
                })
                .collect(),
        };
        Trace { acts, pre, out }
    }

    /// Reverse-mode gradient of cotᵀ·output with respect to every layer.
    pub(crate) fn backward<T: Scalar, W: Weights<T>>(&self, w: &W, tr: &Trace<T>, cot: &[f64]) -> Vec<LayerGrad<T>> {
        let depth = self.depth();
        let act = self.spec.activation;
        let d = self.arch.pixels;
        let k = self.spec.outputs;
        let last = &tr.pre[depth - 1];
        let mut delta: Vec<T> = match self.arch.readout {
            Readout::Linear => cot.iter().map(|&c| T::cst(c)).collect(),
            Readout::AvgPool => (0..d * k).map(|i| T::cst(cot[i % k] / d as f64)).collect(),
            Readout::AvgPoolRelu => (0..d * k).map(|i| act.slope(last[i]).scale(cot[i % k] / d as f64)).collect(),
        };
        let mut grads = Vec::with_capacity(depth);
        for l in (0..depth).rev() {
            let sh = &self.layers[l];
            let input = &tr.acts[l];
            let taps = sh.offsets.len();
            let s = sh.forward_scale;
            if d == 1 && taps == 1 {
                grads.push(LayerGrad::Outer { left: delta.iter().map(|&v| v.scale(s)).collect(), right: input.clone() });
            } else {
                let mut g = vec![T::zero(); sh.len()];
                for p in 0..d {
                    for (r, &off) in sh.offsets.iter().enumerate() {
                        let Some(q) = self.arch.padding.resolve(p, off, d) else { continue };
                        for o in 0..sh.fan_out {
                            let dv = delta[p * sh.fan_out + o].scale(s);
                            for i in 0..sh.fan_in {
                                g[(o * sh.fan_in + i) * taps + r] += dv * input[q * sh.fan_in + i];
                            }
                        }
                    }
                }
                grads.push(LayerGrad::Full(g));
            }
            if l == 0 {
                break;
            }
            let mut da = vec![T::zero(); d * sh.fan_in];
            for p in 0..d {
                for (r, &off) in sh.offsets.iter().enumerate() {
                    let Some(q) = self.arch.padding.resolve(p, off, d) else { continue };
                    for o in 0..sh.fan_out {
                        let dv = delta[p * sh.fan_out + o].scale(s);
                        let base = sh.start + o * sh.fan_in * taps + r;
                        for i in 0..sh.fan_in {
                            da[q * sh.fan_in + i] += w.w(base + i * taps) * dv;
                        }
                    }
                }
            }
            let prev = &tr.pre[l - 1];
            delta = da.iter().zip(prev).map(|(&a, &z)| a * act.slope(z)).collect();
        }
        grads.reverse();
        grads
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(&Plain(&self.params), x).out)
    }

    /// Per-layer gradient blocks of output `j` at `x`.
    pub fn gradient_blocks(&self, x: &[f64], j: usize) -> Result<Vec<LayerGrad<f64>>> {
        self.check_input(x)?;
        let mut cot = vec![0.0; self.spec.outputs];
        cot[j] = 1.0;
        let w = Plain(&self.params);
        let tr = self.trace(&w, x);
        Ok(self.backward(&w, &tr, &cot))
    }

    /// Flat gradient of cotᵀ f(x), together with the outputs f(x).
    pub fn vjp(&self, x: &[f64], cot: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        if cot.len() != self.spec.outputs {
            return Err(Error::Shape(format!(
                "cotangent of length {} for {} outputs",
                cot.len(),
                self.spec.outputs
            )));
        }
        let w = Plain(&self.params);
        let tr = self.trace(&w, x);
        let mut flat = Vec::with_capacity(self.n_params());
        for b in &self.backward(&w, &tr, cot) {
            b.flatten_into(&mut flat);
        }
        Ok((flat, tr.out))
    }

    /// Flat gradient of output `j`.
    pub fn gradient(&self, x: &[f64], j: usize) -> Result<Vec<f64>> {
        let mut cot = vec![0.0; self.spec.outputs];
        cot[j] = 1.0;
        Ok(self.vjp(x, &cot)?.0)
    }

    /// Directional derivative of every output along `dir` in weight space.
    pub fn jvp(&self, x: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_dir(dir)?;
        let tr = self.trace(&Tangent { p: &self.params, dir }, x);
        Ok(tr.out.iter().map(|v| v.d).collect())
    }

    /// Hessian of output `j` at `x` applied to `dir`.
    pub fn hvp(&self, x: &[f64], j: usize, dir: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_dir(dir)?;
        let w = Tangent { p: &self.params, dir };
        let tr = self.trace(&w, x);
        let mut cot = vec![0.0; self.spec.outputs];
        cot[j] = 1.0;
        let mut flat = Vec::with_capacity(self.n_params());
        for b in self.backward(&w, &tr, &cot) {
            b.flatten_into(&mut flat);
        }
        Ok(flat.iter().map(|v| v.d).collect())
    }

    /// D³f_j(x)[u, v, w].
    pub fn third_derivative(&self, x: &[f64], j: usize, u: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        for dir in [u, v, w] {
            self.check_dir(dir)?;
        }
        let tr = self.trace(&Tangent3 { p: &self.params, dirs: [u, v, w] }, x);
        Ok(tr.out[j].e123())
    }
}
