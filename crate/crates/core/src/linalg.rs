//! Dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative threshold below which an eigenvalue counts as a null mode.
pub const NULL_MODE_REL: f64 = 1e-12;
/// Relative threshold below which a Gram matrix is treated as singular.
pub const INVERTIBLE_REL: f64 = 1e-10;

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// (columns of `vectors`).
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub lambdas: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// PSD tolerance for an m×m symmetric matrix: 1e-8 · trace / m.
pub fn psd_tolerance(h: &DMatrix<f64>) -> f64 {
    let m = h.nrows().max(1) as f64;
    1e-8 * h.trace().abs() / m
}

impl SpectralDecomposition {
    /// Decomposes a symmetric PSD matrix. Eigenvalues slightly below zero
    /// (within the PSD tolerance) are clamped to zero; anything more negative
    /// is rejected.
    pub fn of(h: &DMatrix<f64>) -> Result<Self> {
        let m = h.nrows();
        if h.ncols() != m {
            return Err(Error::Shape(format!("{}x{} is not square", m, h.ncols())));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        let tol = psd_tolerance(h);
        let eig = nalgebra::SymmetricEigen::new(h.clone());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut lambdas = Vec::with_capacity(m);
        let mut vectors = DMatrix::zeros(m, m);
        for (dst, &src) in order.iter().enumerate() {
            let lam = eig.eigenvalues[src];
            if lam < -tol {
                return Err(Error::Domain(format!(
                    "matrix is not PSD: eigenvalue {lam:e} below -{tol:e}"
                )));
            }
            lambdas.push(lam.max(0.0));
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self { lambdas, vectors })
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn largest(&self) -> f64 {
        self.lambdas.first().copied().unwrap_or(0.0)
    }

    pub fn smallest(&self) -> f64 {
        self.lambdas.last().copied().unwrap_or(0.0)
    }

    /// Modes with λ_k ≤ 1e-12·λ₁.
    pub fn null_modes(&self) -> Vec<bool> {
        let cut = NULL_MODE_REL * self.largest();
        self.lambdas.iter().map(|&l| l <= cut).collect()
    }

    /// Coordinates Vᵀv.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(v)
    }

    /// V c.
    pub fn expand(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.vectors * c
    }

    /// V g(Λ) Vᵀ v.
    pub fn apply(&self, v: &DVector<f64>, g: impl Fn(f64) -> f64) -> DVector<f64> {
        let mut c = self.project(v);
        for (ck, &l) in c.iter_mut().zip(&self.lambdas) {
            *ck *= g(l);
        }
        self.expand(&c)
    }

    /// V g(Λ) Vᵀ as a matrix.
    pub fn matrix(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (k, &l) in self.lambdas.iter().enumerate() {
            let s = g(l);
            scaled.column_mut(k).scale_mut(s);
        }
        scaled * self.vectors.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.matrix(|l| l)
    }

    /// Errors unless λ_min > 1e-10·λ₁.
    pub fn require_invertible(&self, what: &str) -> Result<()> {
        let l1 = self.largest();
        if l1 <= 0.0 || self.smallest() <= INVERTIBLE_REL * l1 {
            return Err(Error::Singular(format!(
                "{what}: minimum eigenvalue {:e} vs largest {:e}; add a ridge term",
                self.smallest(),
                l1
            )));
        }
        Ok(())
    }
}

/// Solves (A + shift·I) X = B for symmetric positive-definite A.
pub fn cholesky_solve(a: &DMatrix<f64>, shift: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut s = a.clone();
    for i in 0..s.nrows() {
        s[(i, i)] += shift;
    }
    let chol = nalgebra::Cholesky::new(s)
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Copies a row-major slice into a matrix.
pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
