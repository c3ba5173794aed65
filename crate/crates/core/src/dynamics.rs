//! Linearized training under square loss and related diagnostics.
//!
//! Everything here works from a [`SpectralDecomposition`] of the kernel Gram
//! matrix: matrix exponentials are applied mode by mode, so one
//! decomposition serves every time point.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

pub use crate::linalg::SpectralDecomposition;
use crate::analytic::GramMatrix;
use crate::{Error, Result};

/// (1 - e^{-λt}) / λ with the λ → 0 limit t.
pub(crate) fn decay_integral(lambda: f64, t: f64) -> f64 {
    if t.is_infinite() {
        return if lambda > 0.0 { 1.0 / lambda } else { f64::INFINITY };
    }
    if lambda == 0.0 {
        t
    } else {
        -(-lambda * t).exp_m1() / lambda
    }
}

/// 1 - e^{-λt}, with modes at or below the null threshold frozen.
fn gain(lambda: f64, t: f64, null: bool) -> f64 {
    if null {
        0.0
    } else if t.is_infinite() {
        1.0
    } else {
        -(-lambda * t).exp_m1()
    }
}

pub fn decompose(gram: &GramMatrix) -> Result<SpectralDecomposition> {
    SpectralDecomposition::of(&gram.matrix())
}

fn check_len(what: &str, v: &[f64], m: usize) -> Result<()> {
    if v.len() != m {
        return Err(Error::Shape(format!("{what} has length {} but the Gram is {m}x{m}", v.len())));
    }
    Ok(())
}

/// Predictions and residual at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSolution {
    pub t: f64,
    pub train_predictions: Vec<f64>,
    pub residual: Vec<f64>,
}

/// Gradient flow on the linearized model with a constant kernel.
#[derive(Debug, Clone)]
pub struct ExactDynamics {
    pub decomp: SpectralDecomposition,
    y: DVector<f64>,
    f0: DVector<f64>,
    null: Vec<bool>,
}

impl ExactDynamics {
    pub fn new(gram: &GramMatrix, y: &[f64], f0: &[f64]) -> Result<Self> {
        Self::from_decomposition(decompose(gram)?, y, f0)
    }

    pub fn from_decomposition(decomp: SpectralDecomposition, y: &[f64], f0: &[f64]) -> Result<Self> {
        let m = decomp.dim();
        check_len("y", y, m)?;
        check_len("f0", f0, m)?;
        let null = decomp.null_modes();
        Ok(Self { decomp, y: DVector::from_column_slice(y), f0: DVector::from_column_slice(f0), null })
    }

    /// Indices of modes frozen at their initial value.
    pub fn frozen_modes(&self) -> Vec<usize> {
        self.null.iter().enumerate().filter(|(_, &n)| n).map(|(k, _)| k).collect()
    }

    /// f_t = f₀ − (I − e^{−Θt})(f₀ − y). `t` may be infinite.
    pub fn train_predictions(&self, t: f64) -> Result<DynamicsSolution> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::InvalidArgument(format!("time {t} must be nonnegative")));
        }
        let mut c = self.decomp.project(&(&self.f0 - &self.y));
        for (k, ck) in c.iter_mut().enumerate() {
            *ck *= gain(self.decomp.lambdas[k], t, self.null[k]);
        }
        let f = &self.f0 - self.decomp.expand(&c);
        let residual = &self.y - &f;
        Ok(DynamicsSolution { t, train_predictions: f.as_slice().to_vec(), residual: residual.as_slice().to_vec() })
    }

    /// f_t(x) = f₀(x) − Θ(x, X)Θ⁻¹(I − e^{−Θt})(f₀ − y).
    pub fn test_prediction(&self, theta_row: &[f64], f0_test: f64, t: f64) -> Result<f64> {
        check_len("kernel row", theta_row, self.decomp.dim())?;
        self.decomp.require_invertible("test prediction")?;
        let w = self.decomp.apply(&(&self.f0 - &self.y), |l| decay_integral(l, t));
        let row = DVector::from_column_slice(theta_row);
        Ok(f0_test - row.dot(&w))
    }
}

pub fn exact_train_predictions(gram: &GramMatrix, y: &[f64], f0: &[f64], t: f64) -> Result<Vec<f64>> {
    Ok(ExactDynamics::new(gram, y, f0)?.train_predictions(t)?.train_predictions)
}

pub fn exact_test_prediction(
    theta_row: &[f64],
    gram: &GramMatrix,
    y: &[f64],
    f0_train: &[f64],
    f0_test: f64,
    t: f64,
) -> Result<f64> {
    ExactDynamics::new(gram, y, f0_train)?.test_prediction(theta_row, f0_test, t)
}

/// Per-mode gradient-descent state after a number of discrete steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDynamics {
    /// u_{t,k} = v_kᵀ f_t.
    pub coefficients: Vec<f64>,
    /// v_kᵀ y.
    pub targets: Vec<f64>,
    /// Modes with η ≥ 2/λ_k, which do not converge.
    pub unstable: Vec<bool>,
    /// Predictions V u_t.
    pub predictions: Vec<f64>,
}

/// u_{t,k} = yᵀv_k + (1 − ηλ_k)^t (u_{0,k} − yᵀv_k).
pub fn discrete_mode_dynamics(
    decomp: &SpectralDecomposition,
    y: &[f64],
    u0: &[f64],
    eta: f64,
    steps: u64,
) -> Result<ModeDynamics> {
    let m = decomp.dim();
    check_len("y", y, m)?;
    check_len("u0", u0, m)?;
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {eta} must be positive")));
    }
    let ty = decomp.project(&DVector::from_column_slice(y));
    let tu = decomp.project(&DVector::from_column_slice(u0));
    let mut coefficients = Vec::with_capacity(m);
    let mut unstable = Vec::with_capacity(m);
    for k in 0..m {
        let factor = 1.0 - eta * decomp.lambdas[k];
        let p = if steps == 0 { 1.0 } else { factor.powf(steps as f64) };
        coefficients.push(ty[k] + p * (tu[k] - ty[k]));
        unstable.push(eta * decomp.lambdas[k] >= 2.0);
    }
    let predictions = decomp.expand(&DVector::from_vec(coefficients.clone()));
    Ok(ModeDynamics {
        coefficients,
        targets: ty.as_slice().to_vec(),
        unstable,
        predictions: predictions.as_slice().to_vec(),
    })
}

/// Largest learning rate for which gradient descent converges: 2/λ₁.
pub fn max_stable_lr(decomp: &SpectralDecomposition) -> Result<f64> {
    let l1 = decomp.largest();
    if l1 <= 0.0 {
        return Err(Error::Singular("zero kernel has no stability limit".into()));
    }
    Ok(2.0 / l1)
}

/// κ = λ_min / λ_max ∈ [0, 1]; small values mean slow training.
pub fn trainability_condition_number(decomp: &SpectralDecomposition) -> f64 {
    let l1 = decomp.largest();
    if l1 <= 0.0 {
        0.0
    } else {
        decomp.smallest() / l1
    }
}

/// Mean vector and covariance matrix over a set of test points.
#[derive(Debug, Clone, PartialEq)]
pub struct GpMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GpMoments {
    pub fn variances(&self) -> Vec<f64> {
        self.cov.diagonal().as_slice().to_vec()
    }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Exact Bayesian posterior of a GP with kernel K given noiseless training
/// targets (`ridge` adds observation noise variance).
///
/// `k_cross` is test × train.
pub fn nngp_posterior(
    k_train: &DMatrix<f64>,
    k_cross: &DMatrix<f64>,
    k_test: &DMatrix<f64>,
    y: &[f64],
    ridge: f64,
) -> Result<GpMoments> {
    let m = k_train.nrows();
    check_len("y", y, m)?;
    if k_cross.ncols() != m || k_test.nrows() != k_cross.nrows() || k_test.ncols() != k_cross.nrows() {
        return Err(Error::Shape("GP kernel blocks do not line up".into()));
    }
    let mut shifted = k_train.clone();
    for i in 0..m {
        shifted[(i, i)] += ridge;
    }
    let d = SpectralDecomposition::of(&shifted)?;
    d.require_invertible("NNGP posterior")?;
    let inv = d.matrix(|l| 1.0 / l);
    let a = k_cross * &inv;
    let mean = &a * DVector::from_column_slice(y);
    let cov = symmetrize(&(k_test - &a * k_cross.transpose()));
    Ok(GpMoments { mean, cov })
}

/// Kernel blocks for the NTK-GP moments. Cross blocks are test × train.
#[derive(Debug, Clone, Copy)]
pub struct GpBlocks<'a> {
    pub theta_train: &'a DMatrix<f64>,
    pub nngp_train: &'a DMatrix<f64>,
    pub theta_cross: &'a DMatrix<f64>,
    pub nngp_cross: &'a DMatrix<f64>,
    pub nngp_test: &'a DMatrix<f64>,
}

/// Mean and covariance at time t of the outputs of an infinitely wide net
/// trained by gradient flow from a random initialization:
///
/// μ_t = A_t y and K_t = K(x,x') + A_t K A_tᵀ − A_t K(X,x') − (A_t K(X,x))ᵀ,
/// with A_t = Θ(x, X)Θ⁻¹(I − e^{−Θt}). `t` may be infinite.
pub fn ntk_gp_moments(blocks: &GpBlocks, y: &[f64], t: f64) -> Result<GpMoments> {
    let m = blocks.theta_train.nrows();
    check_len("y", y, m)?;
    let p = blocks.theta_cross.nrows();
    if blocks.nngp_train.shape() != (m, m)
        || blocks.theta_cross.shape() != (p, m)
        || blocks.nngp_cross.shape() != (p, m)
        || blocks.nngp_test.shape() != (p, p)
    {
        return Err(Error::Shape("GP kernel blocks do not line up".into()));
    }
    let d = SpectralDecomposition::of(blocks.theta_train)?;
    if t > 0.0 {
        d.require_invertible("NTK-GP moments")?;
    }
    let a = blocks.theta_cross * d.matrix(|l| if t == 0.0 { 0.0 } else { decay_integral(l, t) });
    let mean = &a * DVector::from_column_slice(y);
    let cross = &a * blocks.nngp_cross.transpose();
    let cov = blocks.nngp_test + &a * blocks.nngp_train * a.transpose() - &cross - cross.transpose();
    Ok(GpMoments { mean, cov: symmetrize(&cov) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateVariant {
    /// Width polynomial in 1/δ: C m⁶ / (λ₀⁴ δ³).
    CubicDelta,
    /// Width logarithmic in 1/δ: C m⁴ / λ₀⁴ · ln³(m/δ).
    LogDelta,
}

/// Width above which gradient descent on a two-layer ReLU net keeps its
/// Gram matrix above λ₀/2 with probability ≥ 1 − δ. Returns the maximum
/// of the two terms of the chosen bound.
pub fn width_certificate(m: usize, lambda0: f64, delta: f64, c: f64, c0: f64, variant: CertificateVariant) -> Result<f64> {
    if m == 0 || !(lambda0 > 0.0) || !(delta > 0.0 && delta < 1.0) || !(c > 0.0) || !(c0 > 0.0) {
        return Err(Error::Domain(format!(
            "need m ≥ 1, λ₀ > 0, δ ∈ (0,1), C, C0 > 0; got m={m}, λ₀={lambda0}, δ={delta}, C={c}, C0={c0}"
        )));
    }
    let mf = m as f64;
    let main = match variant {
        CertificateVariant::CubicDelta => c * mf.powi(6) / (lambda0.powi(4) * delta.powi(3)),
        CertificateVariant::LogDelta => c * mf.powi(4) / lambda0.powi(4) * (mf / delta).ln().powi(3),
    };
    let conc = c0 * mf * mf / (lambda0 * lambda0) * (2.0 * mf / delta).ln();
    Ok(main.max(conc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationBound {
    pub bound: f64,
    /// (y − u₀)ᵀH⁻¹(y − u₀), the squared weight displacement.
    pub b: f64,
    pub sqrt_b: f64,
    /// 1 + B, the radius entering the complexity term.
    pub b_hat: f64,
    pub j_hat: u64,
    pub complexity_term: f64,
    pub confidence_term: f64,
}

/// Risk bound for a trained two-layer ReLU net with frozen output weights:
/// R̂ + B̂/√m·√(1/2 + √(ln(1/δ)/(2n))) + √(ln(1/δ̃_ĵ)/(2m)), where
/// δ̃_j = δ̃·6/(π²j²) and ĵ = max(1, ⌈B⌉). `n` is the hidden width.
#[allow(clippy::too_many_arguments)]
pub fn generalization_bound(
    h_gram: &DMatrix<f64>,
    y: &[f64],
    u0: &[f64],
    n: usize,
    delta: f64,
    delta_tilde: f64,
    empirical_risk: f64,
) -> Result<GeneralizationBound> {
    let m = h_gram.nrows();
    check_len("y", y, m)?;
    check_len("u0", u0, m)?;
    if n == 0 || !(delta > 0.0 && delta < 1.0) || !(delta_tilde > 0.0 && delta_tilde < 1.0) {
        return Err(Error::Domain("need n ≥ 1 and δ, δ̃ ∈ (0,1)".into()));
    }
    let d = SpectralDecomposition::of(h_gram)?;
    d.require_invertible("generalization bound")?;
    let r = DVector::from_column_slice(y) - DVector::from_column_slice(u0);
    let b = r.dot(&d.apply(&r, |l| 1.0 / l)).max(0.0);
    let b_hat = 1.0 + b;
    let j_hat = (b.ceil() as u64).max(1);
    let mf = m as f64;
    let complexity_term = b_hat / mf.sqrt() * (0.5 + ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt()).sqrt();
    let delta_j = delta_tilde * 6.0 / (PI * PI * (j_hat as f64).powi(2));
    let confidence_term = ((1.0 / delta_j).ln() / (2.0 * mf)).sqrt();
    Ok(GeneralizationBound {
        bound: empirical_risk + complexity_term + confidence_term,
        b,
        sqrt_b: b.sqrt(),
        b_hat,
        j_hat,
        complexity_term,
        confidence_term,
    })
}
