use std::f64::consts::PI;

use crate::{Error, Result};

/// Relative slack allowed on q12² ≤ q11·q22.
const PSD_SLACK: f64 = 1e-12;

/// Covariance of a pair of pre-activations: variance at x, variance at x',
/// and their covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub q11: f64,
    pub q22: f64,
    pub q12: f64,
}

impl Cov2 {
    pub fn new(q11: f64, q22: f64, q12: f64) -> Result<Self> {
        let c = Self { q11, q22, q12 };
        c.validate()?;
        Ok(c)
    }

    /// Covariance of a variable with itself.
    pub fn diag(q: f64) -> Self {
        Self { q11: q, q22: q, q12: q }
    }

    pub fn swapped(&self) -> Self {
        Self { q11: self.q22, q22: self.q11, q12: self.q12 }
    }

    pub fn validate(&self) -> Result<()> {
        let Cov2 { q11, q22, q12 } = *self;
        if !(q11.is_finite() && q22.is_finite() && q12.is_finite()) {
            return Err(Error::NonFinite(format!("covariance {self:?}")));
        }
        if q11 < 0.0 || q22 < 0.0 {
            return Err(Error::Domain(format!("negative variance in {self:?}")));
        }
        let det = q11 * q22;
        if q12 * q12 > det * (1.0 + PSD_SLACK) {
            return Err(Error::Domain(format!("covariance {self:?} is not PSD")));
        }
        Ok(())
    }

    /// Correlation clamped to [-1, 1]; None when a variance is zero.
    fn correlation(&self) -> Option<(f64, f64)> {
        if self.q11 == 0.0 || self.q22 == 0.0 {
            return None;
        }
        let scale = (self.q11 * self.q22).sqrt();
        Some(((self.q12 / scale).clamp(-1.0, 1.0), scale))
    }
}

/// E[u]₊[v]₊ for (u, v) ~ N(0, Σ).
pub fn relu_prod_expectation(sigma: &Cov2) -> Result<f64> {
    sigma.validate()?;
    Ok(match sigma.correlation() {
        None => 0.0,
        Some((rho, scale)) => {
            let angle = rho.acos();
            scale * (rho * (PI - angle) + (1.0 - rho * rho).max(0.0).sqrt()) / (2.0 * PI)
        }
    })
}

/// E 1{u>0}1{v>0} for (u, v) ~ N(0, Σ).
pub fn relu_deriv_expectation(sigma: &Cov2) -> Result<f64> {
    sigma.validate()?;
    Ok(match sigma.correlation() {
        None => 0.0,
        Some((rho, _)) => (PI - rho.acos()) / (2.0 * PI),
    })
}

/// The two Gaussian expectations that drive kernel propagation through an
/// activation φ: E φ(u)φ(v) and E φ'(u)φ'(v).
pub trait DualActivation: Sync {
    fn prod(&self, sigma: &Cov2) -> Result<f64>;
    fn deriv(&self, sigma: &Cov2) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Relu;

impl DualActivation for Relu {
    fn prod(&self, sigma: &Cov2) -> Result<f64> {
        relu_prod_expectation(sigma)
    }

    fn deriv(&self, sigma: &Cov2) -> Result<f64> {
        relu_deriv_expectation(sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(a: f64, b: f64, r: f64) -> Cov2 {
        Cov2::new(a, b, r).unwrap()
    }

    #[test]
    fn prod_table() {
        assert!((relu_prod_expectation(&c(1.0, 1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!((relu_prod_expectation(&c(1.0, 1.0, 0.0)).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((relu_prod_expectation(&c(4.0, 9.0, 0.0)).unwrap() - 3.0 / PI).abs() < 1e-15);
        assert!(relu_prod_expectation(&c(1.0, 1.0, -1.0)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn deriv_table() {
        assert!((relu_deriv_expectation(&c(1.0, 1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!((relu_deriv_expectation(&c(1.0, 1.0, 0.0)).unwrap() - 0.25).abs() < 1e-15);
        assert!(relu_deriv_expectation(&c(1.0, 1.0, -1.0)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_invalid() {
        assert_eq!(relu_prod_expectation(&c(0.0, 2.0, 0.0)).unwrap(), 0.0);
        assert_eq!(relu_deriv_expectation(&c(2.0, 0.0, 0.0)).unwrap(), 0.0);
        assert!(Cov2::new(1.0, 1.0, 1.1).is_err());
        assert!(Cov2::new(-1.0, 1.0, 0.0).is_err());
        // tiny overshoot from rounding is tolerated
        assert!(Cov2::new(1.0, 1.0, 1.0 + 1e-14).is_ok());
    }
}
