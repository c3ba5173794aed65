//! Scalar types the network engine is generic over: plain `f64`, first-order
//! duals (forward tangents, Hessian-vector products when pushed through the
//! backward pass) and hyper-duals with three nilpotent directions (third
//! directional derivatives in a single forward pass).

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + std::fmt::Debug
{
    fn cst(v: f64) -> Self;
    fn re(&self) -> f64;
    fn scale(self, s: f64) -> Self;
    /// g(self) given g and its first three derivatives at `self.re()`.
    fn lift(self, g: [f64; 4]) -> Self;
    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn lift(self, g: [f64; 4]) -> Self {
        g[0]
    }
}

/// a + b·ε with ε² = 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, self.d + o.d)
    }
}
impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, self.d - o.d)
    }
}
impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.v * o.v, self.v * o.d + self.d * o.v)
    }
}
impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.v, -self.d)
    }
}
impl AddAssign for Dual {
    fn add_assign(&mut self, o: Self) {
        self.v += o.v;
        self.d += o.d;
    }
}

impl Scalar for Dual {
    fn cst(v: f64) -> Self {
        Self::new(v, 0.0)
    }
    fn re(&self) -> f64 {
        self.v
    }
    fn scale(self, s: f64) -> Self {
        Self::new(self.v * s, self.d * s)
    }
    fn lift(self, g: [f64; 4]) -> Self {
        Self::new(g[0], g[1] * self.d)
    }
}

/// Hyper-dual number with infinitesimals ε₁, ε₂, ε₃ (εᵢ² = 0). Component
/// `c[mask]` multiplies the product of the εᵢ whose bits are set in `mask`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperDual3 {
    pub c: [f64; 8],
}

impl HyperDual3 {
    /// value + Σ dirs[i]·εᵢ.
    pub fn seed(value: f64, dirs: [f64; 3]) -> Self {
        Self { c: [value, dirs[0], dirs[1], 0.0, dirs[2], 0.0, 0.0, 0.0] }
    }

    /// Coefficient of ε₁ε₂ε₃: the mixed third directional derivative.
    pub fn e123(&self) -> f64 {
        self.c[7]
    }

    /// Coefficient of ε₁ε₂.
    pub fn e12(&self) -> f64 {
        self.c[3]
    }
}

impl Add for HyperDual3 {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        for i in 0..8 {
            self.c[i] += o.c[i];
        }
        self
    }
}
impl Sub for HyperDual3 {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        for i in 0..8 {
            self.c[i] -= o.c[i];
        }
        self
    }
}
impl Mul for HyperDual3 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; 8];
        for (mask, out) in c.iter_mut().enumerate() {
            // sum over submasks s of mask: a[s]·b[mask \ s]
            let mut s = mask;
            loop {
                *out += self.c[s] * o.c[mask ^ s];
                if s == 0 {
                    break;
                }
                s = (s - 1) & mask;
            }
        }
        Self { c }
    }
}
impl Neg for HyperDual3 {
    type Output = Self;
    fn neg(mut self) -> Self {
        for v in &mut self.c {
            *v = -*v;
        }
        self
    }
}
impl AddAssign for HyperDual3 {
    fn add_assign(&mut self, o: Self) {
        for i in 0..8 {
            self.c[i] += o.c[i];
        }
    }
}

impl Scalar for HyperDual3 {
    fn cst(v: f64) -> Self {
        let mut c = [0.0; 8];
        c[0] = v;
        Self { c }
    }
    fn re(&self) -> f64 {
        self.c[0]
    }
    fn scale(mut self, s: f64) -> Self {
        for v in &mut self.c {
            *v *= s;
        }
        self
    }
    fn lift(self, g: [f64; 4]) -> Self {
        // Taylor series in the nilpotent part δ, which satisfies δ⁴ = 0.
        let mut delta = self;
        delta.c[0] = 0.0;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let mut out = Self::cst(g[0]);
        for i in 1..8 {
            out.c[i] = g[1] * delta.c[i] + 0.5 * g[2] * d2.c[i] + g[3] / 6.0 * d3.c[i];
        }
        out
    }
}
