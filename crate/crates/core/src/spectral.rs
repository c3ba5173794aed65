//! Spectra of zonal kernels on the circle and Fourier-feature embeddings.
//!
//! A zonal kernel K(zᵀz') on the unit circle expands as
//! K(cos θ) = λ₀/(4π²) + (1/π²) Σ_{k≥1} λ_k cos(kθ).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::stats::{loglog_fit, LinearFit};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalSpectrum {
    /// λ_k for k = 0..=k_max.
    pub lambdas: Vec<f64>,
    /// Quadrature nodes used.
    pub nodes: usize,
}

impl ZonalSpectrum {
    pub fn k_max(&self) -> usize {
        self.lambdas.len() - 1
    }

    /// Kernel value at angle θ rebuilt from the coefficients.
    pub fn reconstruct(&self, theta: f64) -> f64 {
        let mut s = self.lambdas[0] / (4.0 * PI * PI);
        for (k, l) in self.lambdas.iter().enumerate().skip(1) {
            s += l * (k as f64 * theta).cos() / (PI * PI);
        }
        s
    }

    /// Eigenvalue of the integral operator under the uniform probability
    /// measure on the circle for the harmonic of order k (normalized as 1
    /// for k = 0 and √2 cos kθ otherwise).
    pub fn operator_eigenvalue(&self, k: usize) -> f64 {
        if k == 0 {
            self.lambdas[0] / (4.0 * PI * PI)
        } else {
            self.lambdas.get(k).copied().unwrap_or(0.0) / (2.0 * PI * PI)
        }
    }
}

/// Cosine coefficients of K(cos θ) by the trapezoid rule on `nodes`
/// equispaced angles. `nodes` must be a power of two and at least 4·k_max.
pub fn zonal_spectrum(kernel: &dyn Fn(f64) -> f64, k_max: usize, nodes: usize) -> Result<ZonalSpectrum> {
    if !nodes.is_power_of_two() || nodes < 4 * k_max.max(1) {
        return Err(Error::InvalidArgument(format!("{nodes} nodes: need a power of two ≥ 4·{k_max}")));
    }
    let cos_table: Vec<f64> = (0..nodes).map(|j| (2.0 * PI * j as f64 / nodes as f64).cos()).collect();
    let values: Vec<f64> = cos_table.iter().map(|&c| kernel(c.clamp(-1.0, 1.0))).collect();
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("kernel value at node {j}")));
    }
    let n = nodes as f64;
    let lambdas = (0..=k_max)
        .map(|k| {
            let s: f64 = values.iter().enumerate().map(|(j, v)| v * cos_table[(k * j) % nodes]).sum();
            if k == 0 {
                4.0 * PI * PI * s / n
            } else {
                PI * PI * 2.0 * s / n
            }
        })
        .collect();
    Ok(ZonalSpectrum { lambdas, nodes })
}

/// λ_k ≈ c·k^{−p} fitted by least squares on log-log axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub p: f64,
    /// Half-width of the 95% interval for p.
    pub ci95: f64,
    pub fit: LinearFit,
}

pub fn powerlaw_fit(spectrum: &ZonalSpectrum, k_lo: usize, k_hi: usize) -> Result<PowerLaw> {
    if k_lo == 0 || k_hi <= k_lo || k_hi > spectrum.k_max() {
        return Err(Error::InvalidArgument(format!("fit range [{k_lo}, {k_hi}] invalid")));
    }
    let ks: Vec<f64> = (k_lo..=k_hi).map(|k| k as f64).collect();
    let ls = &spectrum.lambdas[k_lo..=k_hi];
    if let Some(i) = ls.iter().position(|&l| !(l > 0.0)) {
        return Err(Error::Domain(format!("λ_{} = {} is not positive", k_lo + i, ls[i])));
    }
    let fit = loglog_fit(&ks, ls)?;
    Ok(PowerLaw { p: -fit.slope, ci95: fit.slope_ci(0.95), fit })
}

/// Frequency rows F of an embedding z(x) = [cos(2πFx), sin(2πFx)].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Unit frequency per coordinate.
    Basic,
    /// Frequencies σ^{j/m}, j = 0..m, per coordinate.
    Positional { m: usize, sigma: f64 },
    /// Gaussian rows with standard deviation σ, frozen by the seed.
    Gaussian { rows: usize, sigma: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierEmbedding {
    pub kind: EmbeddingKind,
    pub input_dim: usize,
    /// rows × input_dim.
    pub freqs: DMatrix<f64>,
}

impl FourierEmbedding {
    pub fn new(kind: EmbeddingKind, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        let freqs = match &kind {
            EmbeddingKind::Basic => DMatrix::identity(input_dim, input_dim),
            EmbeddingKind::Positional { m, sigma } => {
                if *m == 0 || !(*sigma > 0.0) {
                    return Err(Error::InvalidArgument("positional encoding needs m ≥ 1 and σ > 0".into()));
                }
                let mut f = DMatrix::zeros(input_dim * m, input_dim);
                for i in 0..input_dim {
                    for j in 0..*m {
                        f[(i * m + j, i)] = sigma.powf(j as f64 / *m as f64);
                    }
                }
                f
            }
            EmbeddingKind::Gaussian { rows, sigma, seed } => {
                if !(*sigma >= 0.0) {
                    return Err(Error::InvalidArgument("σ must be nonnegative".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                DMatrix::from_fn(*rows, input_dim, |_, _| sigma * normal.sample(&mut rng))
            }
        };
        Ok(Self { kind, input_dim, freqs })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.freqs.nrows()
    }

    /// [cos(2πFx); sin(2πFx)].
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!("input of length {} for dimension {}", x.len(), self.input_dim)));
        }
        let r = self.freqs.nrows();
        let mut out = vec![0.0; 2 * r];
        for i in 0..r {
            let phase: f64 = 2.0 * PI * self.freqs.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            out[i] = phase.cos();
            out[r + i] = phase.sin();
        }
        Ok(out)
    }
}

/// Spectrum of the kernel seen through the b-fold frequency embedding:
/// λ'_{kb} = λ_k and zero off the multiples of b, truncated at the input's
/// k_max.
pub fn frequency_shift_spectrum(base: &ZonalSpectrum, b: usize) -> Result<ZonalSpectrum> {
    if b == 0 {
        return Err(Error::InvalidArgument("shift factor must be a positive integer".into()));
    }
    let lambdas = (0..=base.k_max()).map(|j| if j % b == 0 { base.lambdas[j / b] } else { 0.0 }).collect();
    Ok(ZonalSpectrum { lambdas, nodes: base.nodes })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MercerCheck {
    pub quadratic_form: f64,
    pub reference: f64,
    pub residual: f64,
}

/// Samples m angles uniformly, evaluates (1/m²)ψᵀKψ for the order-k
/// harmonic ψ (1 for k = 0, √2 cos kθ otherwise) and compares it with
/// `reference`, the operator eigenvalue under the uniform measure.
pub fn mercer_eigvec_check(kernel: &dyn Fn(f64) -> f64, m: usize, k: usize, reference: f64, seed: u64) -> Result<MercerCheck> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = Uniform::new(0.0, 2.0 * PI);
    let theta: Vec<f64> = (0..m).map(|_| angle.sample(&mut rng)).collect();
    let psi: Vec<f64> = theta
        .iter()
        .map(|&t| if k == 0 { 1.0 } else { 2f64.sqrt() * (k as f64 * t).cos() })
        .collect();
    let mut q = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            row += kernel((theta[i] - theta[j]).cos()) * psi[j];
        }
        q += psi[i] * row;
    }
    let q = q / (m as f64 * m as f64);
    Ok(MercerCheck { quadratic_form: q, reference, residual: (q - reference).abs() })
}

/// Time for the order-k component of the residual to shrink by ε under
/// gradient flow: ln(1/ε)/λ_k.
pub fn time_to_learn(lambda: f64, epsilon: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("eigenvalue {lambda} must be positive")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("ε = {epsilon} outside (0, 1)")));
    }
    Ok((1.0 / epsilon).ln() / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_has_one_mode() {
        let s = zonal_spectrum(&|t| t, 16, 64).unwrap();
        assert!((s.lambdas[1] - PI * PI).abs() < 1e-10);
        for (k, l) in s.lambdas.iter().enumerate() {
            if k != 1 {
                assert!(l.abs() < 1e-8, "λ_{k} = {l}");
            }
        }
    }

    #[test]
    fn constant_kernel() {
        let s = zonal_spectrum(&|_| 1.0 / (4.0 * PI * PI), 8, 32).unwrap();
        assert!((s.lambdas[0] - 1.0).abs() < 1e-12);
        assert!(s.lambdas[1..].iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn node_count_checked() {
        assert!(zonal_spectrum(&|t| t, 16, 48).is_err());
        assert!(zonal_spectrum(&|t| t, 16, 32).is_err());
    }
}
