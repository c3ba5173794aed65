use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{kernel_distance, Jacobian};
use super::net::{FiniteNet, Parameterization};
use crate::dynamics::decay_integral;
use crate::linalg::SpectralDecomposition;
use crate::{par_map, Error, Result};

/// Pointwise training losses on network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// ½(f − y)².
    Square,
    /// Sigmoid cross-entropy on a logit, labels in {0, 1}.
    Logistic,
}

impl Loss {
    pub fn value(self, f: f64, y: f64) -> f64 {
        match self {
            Loss::Square => 0.5 * (f - y) * (f - y),
            // log(1 + e^f) − y f, written to avoid overflow
            Loss::Logistic => f.max(0.0) + (-f.abs()).exp().ln_1p() - y * f,
        }
    }

    /// ∂ℓ/∂f.
    pub fn derivative(self, f: f64, y: f64) -> f64 {
        match self {
            Loss::Square => f - y,
            Loss::Logistic => 1.0 / (1.0 + (-f).exp()) - y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub eta: f64,
    pub steps: usize,
    pub loss: Loss,
    /// Record the kernel every this many steps; 0 disables recording.
    pub record_every: usize,
}

/// Result of a weight-space training run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Total loss before each step and after the last one.
    pub losses: Vec<f64>,
    /// Steps at which kernels were recorded.
    pub record_steps: Vec<usize>,
    /// Recorded empirical NTK Grams, divided by the width under standard
    /// parameterization.
    pub kernels: Vec<DMatrix<f64>>,
    /// Distance between consecutive recorded kernels.
    pub velocities: Vec<f64>,
    pub net: FiniteNet,
}

impl Trajectory {
    pub fn max_velocity(&self) -> f64 {
        self.velocities.iter().cloned().fold(0.0, f64::max)
    }
}

fn check_data(net: &FiniteNet, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<()> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Shape(format!("{} inputs and {} targets", xs.len(), ys.len())));
    }
    if ys.iter().any(|y| y.len() != net.outputs()) {
        return Err(Error::Shape("target width differs from network outputs".into()));
    }
    Ok(())
}

fn normalized_kernel(net: &FiniteNet, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let jac = Jacobian::of(net, xs)?;
    let k = jac.contract(&jac);
    Ok(match net.spec.param {
        Parameterization::Ntk => k,
        Parameterization::Standard => k / net.width() as f64,
    })
}

/// Total loss and its gradient in parameter space.
fn loss_and_gradient(net: &FiniteNet, xs: &[Vec<f64>], ys: &[Vec<f64>], loss: Loss) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<Result<(f64, Vec<f64>)>> = par_map(xs.len(), |i| {
        let out = net.forward(&xs[i])?;
        let cot: Vec<f64> = out.iter().zip(&ys[i]).map(|(&f, &y)| loss.derivative(f, y)).collect();
        let l: f64 = out.iter().zip(&ys[i]).map(|(&f, &y)| loss.value(f, y)).sum();
        Ok((l, net.vjp(&xs[i], &cot)?.0))
    });
    let mut total = 0.0;
    let mut grad = vec![0.0; net.n_params()];
    for p in parts {
        let (l, g) = p?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Full-batch gradient descent θ ← θ − η Σ_i ∇_θ ℓ(f(x_i), y_i).
///
/// Fails with [`Error::Diverged`] once the loss exceeds 10⁶ times its initial
/// value or stops being finite.
pub fn gradient_flow_train(net: &FiniteNet, xs: &[Vec<f64>], ys: &[Vec<f64>], opts: TrainOptions) -> Result<Trajectory> {
    check_data(net, xs, ys)?;
    if !(opts.eta >= 0.0) {
        return Err(Error::InvalidArgument("learning rate must be nonnegative".into()));
    }
    let mut net = net.clone();
    let mut tr = Trajectory { losses: Vec::new(), record_steps: Vec::new(), kernels: Vec::new(), velocities: Vec::new(), net: net.clone() };
    let record = |net: &FiniteNet, step: usize, tr: &mut Trajectory| -> Result<()> {
        let k = normalized_kernel(net, xs)?;
        if let Some(prev) = tr.kernels.last() {
            tr.velocities.push(kernel_distance(prev, &k)?);
        }
        tr.kernels.push(k);
        tr.record_steps.push(step);
        Ok(())
    };
    let mut initial = None;
    for step in 0..=opts.steps {
        if opts.record_every > 0 && (step % opts.record_every == 0 || step == opts.steps) {
            record(&net, step, &mut tr)?;
        }
        let (l, g) = loss_and_gradient(&net, xs, ys, opts.loss)?;
        let l0 = *initial.get_or_insert(l);
        if !l.is_finite() || l > 1e6 * l0.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { step, loss: l });
        }
        tr.losses.push(l);
        if step == opts.steps {
            break;
        }
        for (p, gi) in net.params.iter_mut().zip(&g) {
            *p -= opts.eta * gi;
        }
    }
    tr.net = net;
    Ok(tr)
}

/// A snapshot of the piecewise-linearized run at the start of a segment.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t: f64,
    pub params: Vec<f64>,
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct PiecewiseTrajectory {
    pub segments: Vec<Segment>,
    pub final_params: Vec<f64>,
    pub final_loss: f64,
}

/// Weight-space square-loss training where each segment follows the exact
/// solution of the model linearized at the segment start:
/// θ_{s+τ} = θ_s + Z_s g(H_s)(y − u_s) with g(λ) = (1 − e^{−ητλ})/λ.
/// Jacobian and kernel are recomputed at every refresh time.
///
/// The map g is applied through the eigendecomposition of H, so singular
/// kernels need no ridge: null modes contribute ητ, the small-λ limit.
pub fn piecewise_linearized_train(
    net: &FiniteNet,
    xs: &[Vec<f64>],
    ys: &[f64],
    eta: f64,
    refresh_times: &[f64],
    horizon: f64,
) -> Result<PiecewiseTrajectory> {
    if net.outputs() != 1 {
        return Err(Error::InvalidArgument("piecewise training supports one output".into()));
    }
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Shape(format!("{} inputs and {} targets", xs.len(), ys.len())));
    }
    if !(eta > 0.0) || !(horizon >= 0.0) {
        return Err(Error::InvalidArgument("eta must be positive and the horizon nonnegative".into()));
    }
    let mut cuts: Vec<f64> = refresh_times.iter().cloned().filter(|&t| t > 0.0 && t < horizon).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.push(horizon);

    let mut net = net.clone();
    let mut segments = Vec::new();
    let mut t = 0.0;
    let loss = |net: &FiniteNet| -> Result<(Vec<f64>, f64)> {
        let u: Vec<f64> = xs.iter().map(|x| net.forward(x).map(|o| o[0])).collect::<Result<_>>()?;
        let l = u.iter().zip(ys).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
        Ok((u, l))
    };
    for &end in &cuts {
        let (u, l) = loss(&net)?;
        segments.push(Segment { t, params: net.params.clone(), train_loss: l });
        let tau = end - t;
        let jac = Jacobian::of(&net, xs)?;
        let h = jac.contract(&jac);
        let decomp = SpectralDecomposition::of(&h)?;
        let r = DVector::from_iterator(ys.len(), ys.iter().zip(&u).map(|(y, f)| y - f));
        let c = decomp.apply(&r, |lam| decay_integral(lam, eta * tau));
        let mut step = vec![0.0; net.n_params()];
        for (i, x) in xs.iter().enumerate() {
            let (g, _) = net.vjp(x, &[c[i]])?;
            for (a, b) in step.iter_mut().zip(&g) {
                *a += b;
            }
        }
        for (p, s) in net.params.iter_mut().zip(&step) {
            *p += s;
        }
        t = end;
    }
    let (_, final_loss) = loss(&net)?;
    Ok(PiecewiseTrajectory { segments, final_params: net.params, final_loss })
}
