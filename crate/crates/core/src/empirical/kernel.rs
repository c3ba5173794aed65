use nalgebra::DMatrix;

use super::net::{FiniteNet, LayerGrad, NetSpec};
use crate::analytic::{ArchSpec, GramMatrix, KernelKind};
use crate::linalg::dot;
use crate::{derive_seed, par_map, Error, Result};

/// Per-point, per-output, per-layer gradients of a network.
///
/// Dense layers keep their rank-one factorization, so contracting two
/// Jacobians never materializes the full parameter vectors.
#[derive(Debug, Clone)]
pub struct Jacobian {
    pub n_params: usize,
    pub m: usize,
    pub k: usize,
    /// Row `i * k + j` holds ∇f_j(x_i), split by layer.
    rows: Vec<Vec<LayerGrad<f64>>>,
}

fn block_dot(a: &LayerGrad<f64>, b: &LayerGrad<f64>) -> f64 {
    match (a, b) {
        (LayerGrad::Outer { left: l1, right: r1 }, LayerGrad::Outer { left: l2, right: r2 }) => dot(l1, l2) * dot(r1, r2),
        (LayerGrad::Full(g1), LayerGrad::Full(g2)) => dot(g1, g2),
        (x, y) => {
            let mut u = Vec::new();
            let mut v = Vec::new();
            x.flatten_into(&mut u);
            y.flatten_into(&mut v);
            dot(&u, &v)
        }
    }
}

impl Jacobian {
    pub fn of(net: &FiniteNet, xs: &[Vec<f64>]) -> Result<Self> {
        let k = net.outputs();
        let rows: Vec<Result<Vec<LayerGrad<f64>>>> = par_map(xs.len() * k, |r| net.gradient_blocks(&xs[r / k], r % k));
        Ok(Self { n_params: net.n_params(), m: xs.len(), k, rows: rows.into_iter().collect::<Result<_>>()? })
    }

    /// Number of stored scalar entries, N·m·k.
    pub fn len(&self) -> usize {
        self.n_params * self.m * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat gradient of output `j` at point `i`.
    pub fn row(&self, i: usize, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params);
        for b in &self.rows[i * self.k + j] {
            b.flatten_into(&mut out);
        }
        out
    }

    /// Dense (m·k)×N matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let r = self.m * self.k;
        let mut a = DMatrix::zeros(r, self.n_params);
        for i in 0..r {
            let row = self.row(i / self.k, i % self.k);
            for (c, v) in row.into_iter().enumerate() {
                a[(i, c)] = v;
            }
        }
        a
    }

    /// J Jᵀ restricted to the layers in `layers`.
    pub fn contract_layers(&self, other: &Jacobian, layers: &[usize]) -> DMatrix<f64> {
        let (r, c) = (self.rows.len(), other.rows.len());
        let vals = par_map(r * c, |idx| {
            let (a, b) = (&self.rows[idx / c], &other.rows[idx % c]);
            layers.iter().map(|&l| block_dot(&a[l], &b[l])).sum::<f64>()
        });
        DMatrix::from_row_slice(r, c, &vals)
    }

    pub fn contract(&self, other: &Jacobian) -> DMatrix<f64> {
        let depth = self.rows.first().map_or(0, |r| r.len());
        self.contract_layers(other, &(0..depth).collect::<Vec<_>>())
    }
}

fn symmetric_gram(a: &DMatrix<f64>, kind: KernelKind, fp: u64) -> GramMatrix {
    GramMatrix::from_fn(a.nrows(), kind, fp, |i, j| a[(i, j)])
}

/// Empirical NTK Gram over all (point, output) pairs, index `i * k + j`.
pub fn empirical_ntk(net: &FiniteNet, xs: &[Vec<f64>]) -> Result<GramMatrix> {
    let jac = Jacobian::of(net, xs)?;
    Ok(symmetric_gram(&jac.contract(&jac), KernelKind::Empirical, net.fingerprint()))
}

/// Θ̂(X, X') as a dense (m·k)×(m'·k) block.
pub fn empirical_ntk_cross(net: &FiniteNet, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    Ok(Jacobian::of(net, xs)?.contract(&Jacobian::of(net, ys)?))
}

/// Per-layer contributions to the empirical NTK; they sum to [`empirical_ntk`].
pub fn empirical_ntk_layers(net: &FiniteNet, xs: &[Vec<f64>]) -> Result<Vec<GramMatrix>> {
    let jac = Jacobian::of(net, xs)?;
    Ok((0..net.depth())
        .map(|l| symmetric_gram(&jac.contract_layers(&jac, &[l]), KernelKind::Empirical, net.fingerprint()))
        .collect())
}

/// Θ̂(x, X')·v without forming the kernel: one vector-Jacobian product per
/// point of X' accumulates Jᵀv, then a single forward-mode product with x.
/// `v` is laid out like the Gram index, `i * k + j`.
pub fn empirical_ntk_vector_product(net: &FiniteNet, x: &[f64], xs: &[Vec<f64>], v: &[f64]) -> Result<Vec<f64>> {
    let k = net.outputs();
    if v.len() != xs.len() * k {
        return Err(Error::Shape(format!("vector of length {} for {} points × {} outputs", v.len(), xs.len(), k)));
    }
    let mut acc = vec![0.0; net.n_params()];
    for (i, xi) in xs.iter().enumerate() {
        let cot = &v[i * k..(i + 1) * k];
        if cot.iter().all(|&c| c == 0.0) {
            continue;
        }
        let (g, _) = net.vjp(xi, cot)?;
        for (a, b) in acc.iter_mut().zip(&g) {
            *a += b;
        }
    }
    net.check_input(x)?;
    net.jvp(x, &acc)
}

/// Average of the empirical NTK over `m_seeds` independent initializations.
/// Seed `s` is derived from `root` so estimates are reproducible; members
/// are summed in seed order regardless of scheduling.
pub fn mc_kernel_estimate(arch: &ArchSpec, spec: NetSpec, m_seeds: usize, root: u64, xs: &[Vec<f64>]) -> Result<GramMatrix> {
    if m_seeds == 0 {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let mut sum: Option<GramMatrix> = None;
    let mut fp = 0;
    for s in 0..m_seeds {
        let net = FiniteNet::new(arch, spec, derive_seed(root, s as u64))?;
        fp = net.fingerprint();
        let g = empirical_ntk(&net, xs)?;
        sum = Some(match sum {
            None => g,
            Some(acc) => {
                let n = acc.m();
                GramMatrix::from_fn(n, KernelKind::Empirical, fp, |i, j| acc.get(i, j) + g.get(i, j))
            }
        });
    }
    let acc = sum.unwrap();
    let scale = 1.0 / m_seeds as f64;
    Ok(GramMatrix::from_fn(acc.m(), KernelKind::Empirical, fp, |i, j| acc.get(i, j) * scale))
}

/// One minus the cosine similarity of two matrices under the Frobenius
/// inner product. Lies in [0, 2].
pub fn kernel_distance(h: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    if h.shape() != g.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", h.shape(), g.shape())));
    }
    let hh = h.dot(h);
    let gg = g.dot(g);
    if hh == 0.0 || gg == 0.0 {
        return Err(Error::Domain("kernel distance of a zero matrix".into()));
    }
    if h == g {
        return Ok(0.0);
    }
    let cos = h.dot(g) / (hh.sqrt() * gg.sqrt());
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

/// Input-weight part of the NTK of a two-layer ReLU net, written through the
/// activation patterns: Σ_i c_i² [w_iᵀx > 0][w_iᵀx' > 0] s² xᵀx', where c_i is
/// the effective readout weight of unit i and s the input-layer scale.
/// With ±1 readout weights under NTK scaling this is (1/n)Σ_i [..][..] xᵀx'.
pub fn activation_pattern_gram(net: &FiniteNet, xs: &[Vec<f64>]) -> Result<GramMatrix> {
    if net.depth() != 2 || net.arch.is_conv() || net.outputs() != 1 {
        return Err(Error::InvalidArgument("activation-pattern Gram needs a dense two-layer net with one output".into()));
    }
    if !matches!(net.spec.activation, super::Activation::Relu) {
        return Err(Error::InvalidArgument("activation-pattern Gram needs ReLU".into()));
    }
    let n = net.width();
    let n0 = net.arch.input_dim;
    let (first, readout) = (&net.layers[0], &net.layers[1]);
    let c2: Vec<f64> = (0..n)
        .map(|i| (readout.forward_scale * net.params[readout.start + i]).powi(2))
        .collect();
    let mut patterns = Vec::with_capacity(xs.len());
    for x in xs {
        net.check_input(x)?;
        patterns.push(
            (0..n)
                .map(|i| {
                    let w = &net.params[first.start + i * n0..first.start + (i + 1) * n0];
                    dot(w, x) > 0.0
                })
                .collect::<Vec<bool>>(),
        );
    }
    let s2 = first.forward_scale * first.forward_scale;
    Ok(GramMatrix::from_fn(xs.len(), KernelKind::Empirical, net.fingerprint(), |a, b| {
        let shared: f64 = (0..n).filter(|&i| patterns[a][i] && patterns[b][i]).map(|i| c2[i]).sum();
        shared * s2 * dot(&xs[a], &xs[b])
    }))
}
