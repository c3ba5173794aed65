//! Higher-order kernels and the first-order (1/n) corrected dynamics.
//!
//! With g_i = ∇_θ f(x_i) and H_i the Hessian of f(x_i), the hierarchy used
//! here is
//!
//! * O2(a, b) = g_a·g_b
//! * O3(a, b, c) = g_bᵀH_a g_c + g_aᵀH_b g_c
//! * O4(a, b, c, d) = ∇O3(a, b, c)·g_d, which expands into four products of
//!   Hessian-vector products and two third-derivative contractions.
//!
//! Only the layout consumed by the dynamics is stored: O3 over
//! eval × eval × train and O4 over eval × eval × train × train. Neither is
//! symmetrized; the argument order is the construction order above.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analytic::{ArchSpec, GramMatrix, KernelKind};
use crate::dynamics::decay_integral;
use crate::empirical::{FiniteNet, NetSpec};
use crate::linalg::{dot, SpectralDecomposition};
use crate::stats::{loglog_fit, mean_and_se, LinearFit};
use crate::{derive_seed, par_map, Error, Result};

/// Default ceiling on eval points for the O(m⁴) kernels.
pub const MAX_POINTS: usize = 10;

/// O2, O3, O4 of one network at initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct HigherKernels {
    pub width: usize,
    /// Positions of the training points inside the eval set.
    pub train_idx: Vec<usize>,
    /// E × E.
    pub o2: DMatrix<f64>,
    /// E × E × T, index (a·E + b)·T + c.
    pub o3: Vec<f64>,
    /// E × E × T × T, index ((a·E + b)·T + c)·T + d.
    pub o4: Vec<f64>,
    /// f(x) at the eval points.
    pub f0: Vec<f64>,
}

impl HigherKernels {
    pub fn n_eval(&self) -> usize {
        self.o2.nrows()
    }

    pub fn n_train(&self) -> usize {
        self.train_idx.len()
    }

    pub fn o3_at(&self, a: usize, b: usize, c: usize) -> f64 {
        let (e, t) = (self.n_eval(), self.n_train());
        self.o3[(a * e + b) * t + c]
    }

    pub fn o4_at(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let (e, t) = (self.n_eval(), self.n_train());
        self.o4[((a * e + b) * t + c) * t + d]
    }

    /// O4(a, b, ·, ·) as a T × T matrix.
    pub fn o4_block(&self, a: usize, b: usize) -> DMatrix<f64> {
        let t = self.n_train();
        let start = (a * self.n_eval() + b) * t * t;
        DMatrix::from_row_slice(t, t, &self.o4[start..start + t * t])
    }

    /// O3(a, b, ·) as a T-vector.
    pub fn o3_row(&self, a: usize, b: usize) -> DVector<f64> {
        let t = self.n_train();
        let start = (a * self.n_eval() + b) * t;
        DVector::from_column_slice(&self.o3[start..start + t])
    }
}

fn check_points(points: &[Vec<f64>], train_idx: &[usize], limit: usize) -> Result<()> {
    if points.is_empty() || train_idx.is_empty() {
        return Err(Error::InvalidArgument("empty eval or train set".into()));
    }
    if points.len() > limit {
        return Err(Error::Budget { needed: points.len() as u64, budget: limit as u64 });
    }
    if let Some(&i) = train_idx.iter().find(|&&i| i >= points.len()) {
        return Err(Error::Shape(format!("train index {i} outside {} eval points", points.len())));
    }
    Ok(())
}

/// O2, O3, O4 at t = 0 over `points`, with the training set given by
/// `train_idx`. The network must have one output.
pub fn higher_order_kernels(net: &FiniteNet, points: &[Vec<f64>], train_idx: &[usize]) -> Result<HigherKernels> {
    higher_order_kernels_limited(net, points, train_idx, MAX_POINTS)
}

pub fn higher_order_kernels_limited(
    net: &FiniteNet,
    points: &[Vec<f64>],
    train_idx: &[usize],
    max_points: usize,
) -> Result<HigherKernels> {
    if net.outputs() != 1 {
        return Err(Error::InvalidArgument("higher-order kernels need a single-output net".into()));
    }
    check_points(points, train_idx, max_points)?;
    let e = points.len();
    let t = train_idx.len();
    let grads: Vec<Vec<f64>> = points.iter().map(|x| net.gradient(x, 0)).collect::<Result<_>>()?;
    let f0: Vec<f64> = points.iter().map(|x| net.forward(x).map(|o| o[0])).collect::<Result<_>>()?;
    // hv[i * e + j] = H_i g_j
    let hv: Vec<Vec<f64>> = par_map(e * e, |ij| net.hvp(&points[ij / e], 0, &grads[ij % e]))
        .into_iter()
        .collect::<Result<_>>()?;
    let h = |i: usize, j: usize| &hv[i * e + j];

    let o2 = DMatrix::from_fn(e, e, |a, b| dot(&grads[a], &grads[b]));
    let mut o3 = vec![0.0; e * e * t];
    for a in 0..e {
        for b in 0..e {
            for (ci, &c) in train_idx.iter().enumerate() {
                o3[(a * e + b) * t + ci] = dot(&grads[b], h(a, c)) + dot(&grads[a], h(b, c));
            }
        }
    }
    let o4: Vec<f64> = par_map(e * e * t * t, |idx| {
        let di = idx % t;
        let ci = (idx / t) % t;
        let b = (idx / (t * t)) % e;
        let a = idx / (t * t * e);
        let (c, d) = (train_idx[ci], train_idx[di]);
        let hess = dot(h(b, d), h(a, c)) + dot(h(a, b), h(c, d)) + dot(h(a, d), h(b, c)) + dot(h(b, a), h(c, d));
        let t_a = net.third_derivative(&points[a], 0, &grads[b], &grads[c], &grads[d]);
        let t_b = net.third_derivative(&points[b], 0, &grads[a], &grads[c], &grads[d]);
        match (t_a, t_b) {
            (Ok(x), Ok(y)) => Ok(hess + x + y),
            (Err(err), _) | (_, Err(err)) => Err(err),
        }
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(HigherKernels { width: net.width(), train_idx: train_idx.to_vec(), o2, o3, o4, f0 })
}

/// Moments of |O_s| and O_s² at one width, averaged over seeds and entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderMoments {
    pub abs_mean: f64,
    pub abs_mean_se: f64,
    pub sq_mean: f64,
    pub sq_mean_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub widths: Vec<usize>,
    /// moments[s - 2][w] for s = 2, 3, 4.
    pub moments: Vec<Vec<OrderMoments>>,
    /// Log-log fits of E|O_s| against width.
    pub abs_fits: Vec<LinearFit>,
    /// Log-log fits of E O_s² against width.
    pub sq_fits: Vec<LinearFit>,
}

impl ScalingReport {
    pub fn abs_slope(&self, s: usize) -> f64 {
        self.abs_fits[s - 2].slope
    }

    pub fn sq_slope(&self, s: usize) -> f64 {
        self.sq_fits[s - 2].slope
    }
}

/// Conjectured width exponent of E O_s² (order s ≥ 2).
pub fn conjectured_sq_exponent(s: usize) -> f64 {
    if s.is_multiple_of(2) {
        2.0 - s as f64
    } else {
        1.0 - s as f64
    }
}

/// Measures how the moments of O_2, O_3, O_4 scale with width.
/// Per width, `seeds` networks are drawn from seeds derived from `root`.
pub fn scaling_probe(
    arch: &ArchSpec,
    spec: NetSpec,
    widths: &[usize],
    seeds: usize,
    root: u64,
    points: &[Vec<f64>],
) -> Result<ScalingReport> {
    if widths.len() < 2 || seeds < 2 {
        return Err(Error::InvalidArgument("need at least two widths and two seeds".into()));
    }
    let train: Vec<usize> = (0..points.len()).collect();
    let mut moments = vec![Vec::new(); 3];
    for (wi, &w) in widths.iter().enumerate() {
        let runs: Vec<Result<[(f64, f64); 3]>> = par_map(seeds, |s| {
            let net = FiniteNet::new(arch, NetSpec { width: w, ..spec }, derive_seed(derive_seed(root, wi as u64), s as u64))?;
            let k = higher_order_kernels(&net, points, &train)?;
            let stat = |v: &[f64]| {
                let n = v.len() as f64;
                (v.iter().map(|a| a.abs()).sum::<f64>() / n, v.iter().map(|a| a * a).sum::<f64>() / n)
            };
            Ok([stat(k.o2.as_slice()), stat(&k.o3), stat(&k.o4)])
        });
        let runs: Vec<[(f64, f64); 3]> = runs.into_iter().collect::<Result<_>>()?;
        for (s, slot) in moments.iter_mut().enumerate() {
            let (am, ase) = mean_and_se(&runs.iter().map(|r| r[s].0).collect::<Vec<_>>());
            let (sm, sse) = mean_and_se(&runs.iter().map(|r| r[s].1).collect::<Vec<_>>());
            slot.push(OrderMoments { abs_mean: am, abs_mean_se: ase, sq_mean: sm, sq_mean_se: sse });
        }
    }
    let x: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
    let fit = |f: &dyn Fn(&OrderMoments) -> f64| -> Result<Vec<LinearFit>> {
        moments.iter().map(|m| loglog_fit(&x, &m.iter().map(f).collect::<Vec<_>>())).collect()
    };
    let abs_fits = fit(&|m| m.abs_mean)?;
    let sq_fits = fit(&|m| m.sq_mean)?;
    Ok(ScalingReport { widths: widths.to_vec(), moments, abs_fits, sq_fits })
}

/// Inputs of the truncated 1/n system. O3 and O4 enter as first-order
/// coefficients, that is n·O3 and n·O4 of the generating net.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionInputs {
    pub width: usize,
    pub train_idx: Vec<usize>,
    /// Zeroth-order kernel over eval × eval.
    pub o2_base: DMatrix<f64>,
    /// Initial first-order kernel correction over eval × eval.
    pub o2_first: DMatrix<f64>,
    pub o3_first: Vec<f64>,
    pub o4_first: Vec<f64>,
}

impl CorrectionInputs {
    /// Uses the empirical kernel of the net as the base, so the initial
    /// correction is zero.
    pub fn from_kernels(k: &HigherKernels) -> Self {
        let n = k.width as f64;
        let e = k.n_eval();
        Self {
            width: k.width,
            train_idx: k.train_idx.clone(),
            o2_base: k.o2.clone(),
            o2_first: DMatrix::zeros(e, e),
            o3_first: k.o3.iter().map(|v| v * n).collect(),
            o4_first: k.o4.iter().map(|v| v * n).collect(),
        }
    }

    fn n_eval(&self) -> usize {
        self.o2_base.nrows()
    }

    fn n_train(&self) -> usize {
        self.train_idx.len()
    }

    /// Zeroth-order kernel restricted to the training set.
    pub fn base_train(&self) -> DMatrix<f64> {
        let t = self.n_train();
        DMatrix::from_fn(t, t, |i, j| self.o2_base[(self.train_idx[i], self.train_idx[j])])
    }

    fn check(&self, y: &[f64], f0: &[f64]) -> Result<()> {
        let (e, t) = (self.n_eval(), self.n_train());
        if y.len() != t || f0.len() != e || self.o3_first.len() != e * e * t || self.o4_first.len() != e * e * t * t {
            return Err(Error::Shape("correction inputs disagree in size".into()));
        }
        Ok(())
    }
}

/// State of the truncated system at time t, over the eval set.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionState {
    pub t: f64,
    pub f_zero: Vec<f64>,
    pub f_first: Vec<f64>,
    /// First-order kernel correction O2¹ over eval × train.
    pub o2_first: DMatrix<f64>,
}

impl CorrectionState {
    /// f⁰ + f¹/n.
    pub fn corrected(&self, width: usize) -> Vec<f64> {
        self.f_zero.iter().zip(&self.f_first).map(|(a, b)| a + b / width as f64).collect()
    }
}

struct OdeState {
    f0: DVector<f64>,
    f1: DVector<f64>,
    o2: DMatrix<f64>,
    o3: Vec<f64>,
}

impl OdeState {
    fn axpy(&self, h: f64, d: &OdeState) -> OdeState {
        OdeState {
            f0: &self.f0 + &d.f0 * h,
            f1: &self.f1 + &d.f1 * h,
            o2: &self.o2 + &d.o2 * h,
            o3: self.o3.iter().zip(&d.o3).map(|(a, b)| a + h * b).collect(),
        }
    }
}

/// Integrates, with classical RK4, the system truncated at order 1/n:
///
/// * ḟ⁰ = −O2⁰ (f⁰ − y)
/// * ḟ¹ = −O2¹ (f⁰ − y) − O2⁰ f¹
/// * Ȯ2¹ = −O3¹ (f⁰ − y)
/// * Ȯ3¹ = −O4¹ (f⁰ − y)
///
/// where the contractions run over the training set. States are reported
/// at each time in `t_grid` (ascending, ≥ 0) using steps of at most `dt`.
pub fn truncated_ode_integrate(
    inp: &CorrectionInputs,
    y: &[f64],
    f0: &[f64],
    t_grid: &[f64],
    dt: f64,
) -> Result<Vec<CorrectionState>> {
    inp.check(y, f0)?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidArgument("time grid must be ascending and nonnegative".into()));
    }
    let (e, t) = (inp.n_eval(), inp.n_train());
    let tr = &inp.train_idx;
    let y = DVector::from_column_slice(y);
    let base_et = DMatrix::from_fn(e, t, |a, c| inp.o2_base[(a, tr[c])]);
    let deriv = |s: &OdeState| -> OdeState {
        let r = DVector::from_fn(t, |c, _| s.f0[tr[c]] - y[c]);
        let f1_train = DVector::from_fn(t, |c, _| s.f1[tr[c]]);
        let o2_et = &s.o2;
        let df0 = -(&base_et * &r);
        let df1 = -(o2_et * &r) - &base_et * f1_train;
        let do2 = DMatrix::from_fn(e, t, |a, b| {
            let o = &s.o3[(a * e + tr[b]) * t..(a * e + tr[b]) * t + t];
            -o.iter().zip(r.iter()).map(|(u, v)| u * v).sum::<f64>()
        });
        let mut do3 = vec![0.0; e * e * t];
        for (idx, out) in do3.iter_mut().enumerate() {
            let o = &inp.o4_first[idx * t..idx * t + t];
            *out = -o.iter().zip(r.iter()).map(|(u, v)| u * v).sum::<f64>();
        }
        OdeState { f0: df0, f1: df1, o2: do2, o3: do3 }
    };
    let mut s = OdeState {
        f0: DVector::from_column_slice(f0),
        f1: DVector::zeros(e),
        o2: DMatrix::from_fn(e, t, |a, c| inp.o2_first[(a, tr[c])]),
        o3: inp.o3_first.clone(),
    };
    let mut now = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        while now < target {
            let h = dt.min(target - now);
            let k1 = deriv(&s);
            let k2 = deriv(&s.axpy(h / 2.0, &k1));
            let k3 = deriv(&s.axpy(h / 2.0, &k2));
            let k4 = deriv(&s.axpy(h, &k3));
            s = s.axpy(h / 6.0, &k1).axpy(h / 3.0, &k2).axpy(h / 3.0, &k3).axpy(h / 6.0, &k4);
            now = if target - now <= dt { target } else { now + h };
        }
        if s.f1.iter().chain(s.f0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("corrected dynamics at t = {now}")));
        }
        out.push(CorrectionState { t: target, f_zero: s.f0.as_slice().to_vec(), f_first: s.f1.as_slice().to_vec(), o2_first: s.o2.clone() });
    }
    Ok(out)
}

/// Time-integrated coupling of the O4 term between modes k (third argument)
/// and l (fourth argument): ∫₀ᵗ e^{−λ_k s}(1 − e^{−λ_l s})/λ_l ds.
fn o4_coupling(lk: f64, ll: f64, t: f64) -> f64 {
    if ll > 0.0 {
        (decay_integral(lk, t) - decay_integral(lk + ll, t)) / ll
    } else {
        // λ_l → 0 limit: ∫ s e^{−λ_k s} ds
        if lk == 0.0 {
            return 0.5 * t * t;
        }
        if t.is_infinite() {
            return 1.0 / (lk * lk);
        }
        (1.0 - (-lk * t).exp() * (1.0 + lk * t)) / (lk * lk)
    }
}

/// Closed form of O2¹(a, b) at time t (t may be infinite):
///
/// O2¹(0) − O3¹(a,b,·) Θ⁻¹(I − e^{−Θt}) r₀
/// + Σ_{k,l} (v_kᵀr₀)(v_kᵀ M v_l)(v_lᵀr₀) C_kl(t)
///
/// with r₀ = f⁰(0) − y on the train set, M = O4¹(a, b, ·, ·) and C the
/// time-integrated mode coupling. As t → ∞, C_kl → 1/(λ_kλ_l) − 1/(λ_l(λ_k + λ_l)).
pub fn o2_correction_closed_form(
    inp: &CorrectionInputs,
    decomp: &SpectralDecomposition,
    y: &[f64],
    f0: &[f64],
    a: usize,
    b: usize,
    t: f64,
) -> Result<f64> {
    inp.check(y, f0)?;
    let (e, tn) = (inp.n_eval(), inp.n_train());
    if a >= e || b >= e || decomp.dim() != tn {
        return Err(Error::Shape("pair index or decomposition size mismatch".into()));
    }
    let r0 = DVector::from_fn(tn, |c, _| f0[inp.train_idx[c]] - y[c]);
    let rho = decomp.project(&r0);
    let null = decomp.null_modes();
    if t.is_infinite() {
        for k in 0..tn {
            if null[k] && rho[k].abs() > 1e-12 * rho.amax().max(1.0) {
                return Err(Error::Singular("residual has a component along a null mode".into()));
            }
        }
    }
    let o3 = DVector::from_column_slice(&inp.o3_first[(a * e + b) * tn..(a * e + b) * tn + tn]);
    let lambdas = &decomp.lambdas;
    let first = o3.dot(&decomp.apply(&r0, |l| decay_integral(l, t)));
    let start = (a * e + b) * tn * tn;
    let m = DMatrix::from_row_slice(tn, tn, &inp.o4_first[start..start + tn * tn]);
    let mm = decomp.vectors.transpose() * m * &decomp.vectors;
    let mut second = 0.0;
    for k in 0..tn {
        for l in 0..tn {
            let w = rho[k] * rho[l] * mm[(k, l)];
            if w == 0.0 {
                continue;
            }
            second += w * o4_coupling(lambdas[k], lambdas[l], t);
        }
    }
    Ok(inp.o2_first[(a, b)] - first + second)
}

/// Label-aware kernel with ensemble error bars.
#[derive(Debug, Clone, PartialEq)]
pub struct NthKernel {
    pub gram: GramMatrix,
    /// Ensemble mean of the empirical NTK.
    pub mean_ntk: DMatrix<f64>,
    /// Standard error of the mean NTK entries over the ensemble.
    pub ntk_se: DMatrix<f64>,
    /// Standard error of the label term, per entry.
    pub label_term_se: DMatrix<f64>,
}

/// Label term yᵀΘ⁻¹MΘ⁻¹y − Σ_{k,l}(yᵀv_k)(v_kᵀMv_l)(v_lᵀy)/(λ_l(λ_k+λ_l)).
fn nth_label_term(decomp: &SpectralDecomposition, y: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    let rho = decomp.project(y);
    let mm = decomp.vectors.transpose() * m * &decomp.vectors;
    let l = &decomp.lambdas;
    let mut s = 0.0;
    for k in 0..l.len() {
        for j in 0..l.len() {
            s += rho[k] * rho[j] * mm[(k, j)] * (1.0 / (l[k] * l[j]) - 1.0 / (l[j] * (l[k] + l[j])));
        }
    }
    s
}

/// Θ^NTH ≈ EΘ̂₀ + yᵀ(EΘ̂₀)⁻¹ E O4 (EΘ̂₀)⁻¹y − Σ couplings, with expectations
/// estimated over `ensemble` nets and f₀ treated as zero. The label term
/// is evaluated on the mean O4; its standard error comes from evaluating
/// it on each member's O4 with the shared mean kernel.
pub fn nth_kernel(
    arch: &ArchSpec,
    spec: NetSpec,
    xs: &[Vec<f64>],
    y: &[f64],
    ensemble: usize,
    root: u64,
) -> Result<NthKernel> {
    let m = xs.len();
    if y.len() != m {
        return Err(Error::Shape(format!("{} labels for {} points", y.len(), m)));
    }
    if ensemble == 0 {
        return Err(Error::InvalidArgument("ensemble must be nonempty".into()));
    }
    let train: Vec<usize> = (0..m).collect();
    let members: Vec<Result<HigherKernels>> = par_map(ensemble, |s| {
        let net = FiniteNet::new(arch, spec, derive_seed(root, s as u64))?;
        higher_order_kernels(&net, xs, &train)
    });
    let members: Vec<HigherKernels> = members.into_iter().collect::<Result<_>>()?;
    let inv = 1.0 / ensemble as f64;
    let mut mean_ntk = DMatrix::zeros(m, m);
    let mut mean_o4 = vec![0.0; m * m * m * m];
    for k in &members {
        mean_ntk += &k.o2;
        for (a, b) in mean_o4.iter_mut().zip(&k.o4) {
            *a += b;
        }
    }
    mean_ntk *= inv;
    mean_o4.iter_mut().for_each(|v| *v *= inv);
    let decomp = SpectralDecomposition::of(&mean_ntk)?;
    decomp.require_invertible("mean empirical NTK")?;
    let yv = DVector::from_column_slice(y);
    let block = |o4: &[f64], a: usize, b: usize| {
        let start = (a * m + b) * m * m;
        DMatrix::from_row_slice(m, m, &o4[start..start + m * m])
    };
    let mut ntk_se = DMatrix::zeros(m, m);
    let mut label_se = DMatrix::zeros(m, m);
    let mut values = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let label = nth_label_term(&decomp, &yv, &block(&mean_o4, a, b));
            values[(a, b)] = mean_ntk[(a, b)] + label;
            let per: Vec<f64> = members.iter().map(|k| nth_label_term(&decomp, &yv, &block(&k.o4, a, b))).collect();
            label_se[(a, b)] = mean_and_se(&per).1;
            ntk_se[(a, b)] = mean_and_se(&members.iter().map(|k| k.o2[(a, b)]).collect::<Vec<_>>()).1;
            values[(b, a)] = values[(a, b)];
            label_se[(b, a)] = label_se[(a, b)];
            ntk_se[(b, a)] = ntk_se[(a, b)];
        }
    }
    let fp = FiniteNet::new(arch, spec, root)?.fingerprint();
    let gram = GramMatrix::from_fn(m, KernelKind::Nth, fp, |i, j| values[(i, j)]);
    Ok(NthKernel { gram, mean_ntk, ntk_se, label_term_se: label_se })
}

/// Similarity ψ between a kernel value and a training-pair kernel value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// exp(−(z₁ − z₂)²/(2h²)).
    Gaussian { h: f64 },
    /// Gaussian weights normalized to sum to one over the training pairs.
    NormalizedGaussian { h: f64 },
    /// Uniform weight over the training pairs whose kernel value equals z₁.
    ExactMatch,
}

/// Z(z) = yᵀ M y with M_ij = ψ(z, K(x_i, x_j)).
pub fn label_similarity(z: f64, k_train: &DMatrix<f64>, y: &[f64], psi: Similarity) -> f64 {
    let m = y.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        for j in 0..m {
            let w = match psi {
                Similarity::Gaussian { h } | Similarity::NormalizedGaussian { h } => {
                    let d = z - k_train[(i, j)];
                    (-d * d / (2.0 * h * h)).exp()
                }
                Similarity::ExactMatch => f64::from(u8::from(z == k_train[(i, j)])),
            };
            num += w * y[i] * y[j];
            den += w;
        }
    }
    match psi {
        Similarity::Gaussian { .. } => num,
        _ if den > 0.0 => num / den,
        _ => 0.0,
    }
}

/// K^HR = (1 − λ)K + λZ applied entrywise to `k`, whose entries are kernel
/// values K(x, x') for arbitrary pairs; `k_train` is the training Gram.
pub fn hr_kernel_mix(k: &DMatrix<f64>, k_train: &DMatrix<f64>, y: &[f64], lambda: f64, psi: Similarity) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("mixing weight {lambda} outside [0, 1]")));
    }
    if k_train.nrows() != y.len() || k_train.ncols() != y.len() {
        return Err(Error::Shape("training Gram and labels disagree".into()));
    }
    if lambda == 0.0 {
        return Ok(k.clone());
    }
    Ok(k.map(|v| (1.0 - lambda) * v + lambda * label_similarity(v, k_train, y, psi)))
}
