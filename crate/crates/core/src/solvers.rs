//! Kernel regression solvers.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{fc_ntk, AnalyticKernel, GramMatrix, KernelKind};
use crate::flops::{tally, FlopCounter};
use crate::{par_map, Error, Result};

/// Coefficients of f(x) = Σ_j α_j K(x, anchor_j).
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub alpha: Vec<f64>,
    pub lambda: f64,
    /// Anchor indices into the training set; every training point when
    /// the solve was direct.
    pub anchors: Vec<usize>,
    pub iterations: usize,
    /// Final relative residual of the solved linear system.
    pub residual: f64,
    pub converged: bool,
}

impl RidgeSolution {
    /// Prediction from the kernel values between x and the anchors.
    pub fn predict_row(&self, k_row: &[f64]) -> Result<f64> {
        if k_row.len() != self.alpha.len() {
            return Err(Error::Shape(format!("{} kernel values for {} anchors", k_row.len(), self.alpha.len())));
        }
        Ok(k_row.iter().zip(&self.alpha).map(|(a, b)| a * b).sum())
    }

    /// Predictions from a (points × anchors) cross kernel.
    pub fn predict(&self, k_cross: &DMatrix<f64>) -> Result<Vec<f64>> {
        if k_cross.ncols() != self.alpha.len() {
            return Err(Error::Shape(format!("{} kernel columns for {} anchors", k_cross.ncols(), self.alpha.len())));
        }
        Ok((k_cross * DVector::from_column_slice(&self.alpha)).as_slice().to_vec())
    }
}

fn factor(gram: &DMatrix<f64>, lambda: f64, flops: Option<&FlopCounter>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge {lambda} must be nonnegative")));
    }
    let m = gram.nrows();
    let mut a = gram.clone();
    for i in 0..m {
        a[(i, i)] += lambda;
    }
    tally(flops, (m as u64).pow(3) / 3);
    Cholesky::new(a).ok_or_else(|| {
        Error::Singular(if lambda == 0.0 {
            "Gram is not positive definite; use a positive ridge".into()
        } else {
            "shifted Gram is not positive definite".into()
        })
    })
}

fn relative_residual(gram: &DMatrix<f64>, lambda: f64, x: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let r = gram * x + x * lambda - b;
    let bn = b.norm();
    if bn == 0.0 {
        r.norm()
    } else {
        r.norm() / bn
    }
}

/// Solves (G + λI)α = y by Cholesky factorization.
pub fn ridge_solve_direct(gram: &GramMatrix, y: &[f64], lambda: f64) -> Result<RidgeSolution> {
    ridge_solve_direct_counted(gram, y, lambda, None)
}

pub fn ridge_solve_direct_counted(gram: &GramMatrix, y: &[f64], lambda: f64, flops: Option<&FlopCounter>) -> Result<RidgeSolution> {
    let m = gram.m();
    if y.len() != m {
        return Err(Error::Shape(format!("{} labels for a {m}×{m} Gram", y.len())));
    }
    let g = gram.matrix();
    let chol = factor(&g, lambda, flops)?;
    let b = DMatrix::from_column_slice(m, 1, y);
    let x = chol.solve(&b);
    tally(flops, 2 * (m as u64).pow(2));
    let residual = relative_residual(&g, lambda, &x, &b);
    if !residual.is_finite() || residual > 1e-8 {
        return Err(Error::Singular(format!("relative residual {residual:e} after direct solve")));
    }
    Ok(RidgeSolution {
        alpha: x.as_slice().to_vec(),
        lambda,
        anchors: (0..m).collect(),
        iterations: 0,
        residual,
        converged: true,
    })
}

/// One solve per label column against a single shared factorization, using
/// the block structure Θ ⊗ I of a class-independent kernel.
pub fn multiclass_block_solve(gram: &GramMatrix, y: &DMatrix<f64>, lambda: f64) -> Result<Vec<RidgeSolution>> {
    let m = gram.m();
    if y.nrows() != m {
        return Err(Error::Shape(format!("{} label rows for a {m}×{m} Gram", y.nrows())));
    }
    let g = gram.matrix();
    let chol = factor(&g, lambda, None)?;
    let x = chol.solve(y);
    (0..y.ncols())
        .map(|c| {
            let xc = x.column(c).into_owned();
            let bc = y.column(c).into_owned();
            let residual = relative_residual(&g, lambda, &DMatrix::from_column_slice(m, 1, xc.as_slice()), &DMatrix::from_column_slice(m, 1, bc.as_slice()));
            if !residual.is_finite() || residual > 1e-8 {
                return Err(Error::Singular(format!("relative residual {residual:e} in class {c}")));
            }
            Ok(RidgeSolution { alpha: xc.as_slice().to_vec(), lambda, anchors: (0..m).collect(), iterations: 0, residual, converged: true })
        })
        .collect()
}

/// Random access to kernel values over a fixed point set.
pub trait KernelAccess: Sync {
    fn len(&self) -> usize;

    fn entry(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// K(rows, cols) as a dense block.
    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let c = cols.len();
        let vals = par_map(rows.len() * c, |idx| self.entry(rows[idx / c], cols[idx % c]));
        DMatrix::from_row_slice(rows.len(), c, &vals)
    }
}

impl KernelAccess for GramMatrix {
    fn len(&self) -> usize {
        self.m()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

impl KernelAccess for DMatrix<f64> {
    fn len(&self) -> usize {
        self.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self[(i, j)]
    }
}

/// Evaluates an analytic kernel on demand, so only the rectangular blocks
/// a solver asks for are ever computed.
pub struct OnDemandKernel<'a> {
    pub kernel: &'a AnalyticKernel,
    pub points: &'a [Vec<f64>],
    pub kind: KernelKind,
}

impl KernelAccess for OnDemandKernel<'_> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.kernel
            .eval(&self.points[i], &self.points[j], self.kind)
            .expect("points validated when the solver starts")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl CgOptions {
    /// ⌈10·ln m⌉ iterations and relative tolerance 1e-8.
    pub fn for_size(m: usize) -> Self {
        Self { max_iters: (10.0 * (m.max(2) as f64).ln()).ceil() as usize, tol: 1e-8 }
    }
}

/// Nyström solution with its residual history.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromSolution {
    pub solution: RidgeSolution,
    /// Relative residual norm before each iteration and after the last.
    pub history: Vec<f64>,
}

/// Solves (K_nmᵀK_nm + λK_mm) α̃ = K_nmᵀ y over `m_prime` anchors drawn
/// uniformly without replacement. K_nm (m × m') is stored; the system
/// matrix is applied as two rectangular products plus K_mm and never formed.
///
/// Iterates with the conjugate-residual variant of conjugate gradients,
/// whose residual norm is non-increasing on symmetric positive-definite
/// systems. Running out of iterations is not an error; the solution is
/// flagged unconverged.
pub fn nystrom_cg_solve(
    access: &dyn KernelAccess,
    y: &[f64],
    m_prime: usize,
    lambda: f64,
    opts: CgOptions,
    seed: u64,
    flops: Option<&FlopCounter>,
) -> Result<NystromSolution> {
    let m = access.len();
    if y.len() != m {
        return Err(Error::Shape(format!("{} labels for {m} points", y.len())));
    }
    if m_prime == 0 || m_prime > m {
        return Err(Error::InvalidArgument(format!("anchor count {m_prime} outside 1..={m}")));
    }
    if !(lambda >= 0.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("ridge must be nonnegative and tolerance positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = sample(&mut rng, m, m_prime).into_vec();
    anchors.sort_unstable();
    let all: Vec<usize> = (0..m).collect();
    let k_nm = access.block(&all, &anchors);
    let k_mm = access.block(&anchors, &anchors);
    let yv = DVector::from_column_slice(y);
    let (mu, mp) = (m as u64, m_prime as u64);
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        tally(flops, 4 * mu * mp + 2 * mp * mp);
        k_nm.tr_mul(&(&k_nm * v)) + (&k_mm * v) * lambda
    };
    let b = k_nm.tr_mul(&yv);
    let bn = b.norm();
    let mut x = DVector::zeros(m_prime);
    let mut history = vec![if bn == 0.0 { 0.0 } else { 1.0 }];
    let finish = |x: DVector<f64>, it: usize, res: f64, conv: bool, history: Vec<f64>| NystromSolution {
        solution: RidgeSolution { alpha: x.as_slice().to_vec(), lambda, anchors: anchors.clone(), iterations: it, residual: res, converged: conv },
        history,
    };
    if bn == 0.0 {
        return Ok(finish(x, 0, 0.0, true, history));
    }
    let mut r = b.clone();
    let mut ar = apply(&r);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut rar = r.dot(&ar);
    for it in 1..=opts.max_iters {
        let apap = ap.dot(&ap);
        if apap == 0.0 || rar == 0.0 {
            let res = history.last().copied().unwrap_or(0.0);
            return Ok(finish(x, it - 1, res, res <= opts.tol, history));
        }
        let alpha = rar / apap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let res = r.norm() / bn;
        if !res.is_finite() {
            return Err(Error::NonFinite(format!("conjugate residual at iteration {it}")));
        }
        history.push(res);
        if res <= opts.tol {
            return Ok(finish(x, it, res, true, history));
        }
        ar = apply(&r);
        let rar_new = r.dot(&ar);
        let beta = rar_new / rar;
        rar = rar_new;
        p = &r + &p * beta;
        ap = &ar + &ap * beta;
    }
    let res = *history.last().unwrap();
    Ok(finish(x, opts.max_iters, res, false, history))
}

/// Losses for function-space dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericLoss {
    /// ½‖f − y‖².
    Square,
    /// Sigmoid cross-entropy on one logit per point, labels in {0, 1}.
    Bce,
    /// Softmax cross-entropy over k logits, one-hot label rows.
    SoftmaxXent,
}

impl NumericLoss {
    /// Loss value and ∂ℓ/∂f of one point.
    fn point(self, f: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            NumericLoss::Square => {
                let mut l = 0.0;
                for ((g, a), b) in grad.iter_mut().zip(f).zip(y) {
                    *g = a - b;
                    l += 0.5 * (a - b) * (a - b);
                }
                l
            }
            NumericLoss::Bce => {
                let mut l = 0.0;
                for ((g, &z), &t) in grad.iter_mut().zip(f).zip(y) {
                    *g = 1.0 / (1.0 + (-z).exp()) - t;
                    l += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
                }
                l
            }
            NumericLoss::SoftmaxXent => {
                let mx = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + f.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
                let mut l = 0.0;
                for ((g, &z), &t) in grad.iter_mut().zip(f).zip(y) {
                    *g = (z - lse).exp() - t;
                    l -= t * (z - lse);
                }
                l
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericTrajectory {
    /// Steps at which predictions were recorded.
    pub steps: Vec<usize>,
    /// Train predictions (m × k) at each recorded step.
    pub train: Vec<DMatrix<f64>>,
    /// Test predictions at each recorded step, when a cross kernel was given.
    pub test: Vec<DMatrix<f64>>,
    /// Total train loss at each recorded step.
    pub losses: Vec<f64>,
}

impl NumericTrajectory {
    pub fn final_train(&self) -> &DMatrix<f64> {
        self.train.last().expect("trajectory records the initial state")
    }
}

/// Explicit Euler integration of ḟ = −Θ ∂ℓ/∂f with step η for `steps`
/// steps, the kernel acting on every output column (Θ ⊗ I).
/// `k_cross` (test × train) and `f0_test` carry test predictions along.
/// Fails with [`Error::Diverged`] when the loss grows 10⁶-fold.
#[allow(clippy::too_many_arguments)]
pub fn numeric_dynamics(
    gram: &GramMatrix,
    y: &DMatrix<f64>,
    f0: &DMatrix<f64>,
    loss: NumericLoss,
    eta: f64,
    steps: usize,
    record_every: usize,
    test: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    flops: Option<&FlopCounter>,
) -> Result<NumericTrajectory> {
    let m = gram.m();
    let k = y.ncols();
    if y.nrows() != m || f0.shape() != y.shape() {
        return Err(Error::Shape("labels and initial predictions must be m × k".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    if let Some((kc, ft)) = test {
        if kc.ncols() != m || ft.nrows() != kc.nrows() || ft.ncols() != k {
            return Err(Error::Shape("cross kernel or test predictions mis-sized".into()));
        }
    }
    let g = gram.matrix();
    let mut f = f0.clone();
    let mut ft = test.map(|(_, t)| t.clone());
    let mut out = NumericTrajectory { steps: Vec::new(), train: Vec::new(), test: Vec::new(), losses: Vec::new() };
    let mut grad = DMatrix::zeros(m, k);
    let mut l0 = None;
    for step in 0..=steps {
        let mut total = 0.0;
        let mut row = vec![0.0; k];
        for i in 0..m {
            let fi: Vec<f64> = f.row(i).iter().cloned().collect();
            let yi: Vec<f64> = y.row(i).iter().cloned().collect();
            total += loss.point(&fi, &yi, &mut row);
            for (c, v) in row.iter().enumerate() {
                grad[(i, c)] = *v;
            }
        }
        let init = *l0.get_or_insert(total);
        if !total.is_finite() || total > 1e6 * init.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { step, loss: total });
        }
        let record = step == steps || (record_every > 0 && step % record_every == 0);
        if record {
            out.steps.push(step);
            out.train.push(f.clone());
            out.losses.push(total);
            if let Some(t) = &ft {
                out.test.push(t.clone());
            }
        }
        if step == steps {
            break;
        }
        tally(flops, 2 * (m * m * k) as u64);
        f -= (&g * &grad) * eta;
        if let (Some(t), Some((kc, _))) = (ft.as_mut(), test) {
            *t -= (kc * &grad) * eta;
        }
    }
    Ok(out)
}

/// An observed entry (row, column, value).
pub type Observation = (usize, usize, f64);

/// Fills a k × d matrix from observed entries with a kernel over columns:
/// K((i, j), (i', j')) = κ(z_j, z_j')·[i = i'], κ the fully-connected NTK of
/// depth `depth` on the prior columns z_j. Rows decouple, so each row is an
/// independent ridge solve over its observed columns against one shared
/// column Gram. Rows without observations stay at zero.
pub fn matrix_completion_fit(
    z_prior: &DMatrix<f64>,
    observed: &[Observation],
    rows: usize,
    depth: usize,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    let d = z_prior.ncols();
    if let Some(&(i, j, _)) = observed.iter().find(|&&(i, j, _)| i >= rows || j >= d) {
        return Err(Error::Shape(format!("observation ({i}, {j}) outside {rows} × {d}")));
    }
    let cols: Vec<Vec<f64>> = (0..d).map(|j| z_prior.column(j).iter().cloned().collect()).collect();
    let vals: Vec<Result<f64>> = par_map(d * d, |idx| {
        let (a, b) = (idx / d, idx % d);
        if b < a {
            return Ok(0.0);
        }
        Ok(fc_ntk(&cols[a], &cols[b], depth)?.0)
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let col_gram = DMatrix::from_fn(d, d, |a, b| if a <= b { vals[a * d + b] } else { vals[b * d + a] });
    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
    for &(i, j, v) in observed {
        by_row[i].push((j, v));
    }
    let solved: Vec<Result<Vec<f64>>> = par_map(rows, |i| {
        let obs = &by_row[i];
        if obs.is_empty() {
            return Ok(vec![0.0; d]);
        }
        let s: Vec<usize> = obs.iter().map(|o| o.0).collect();
        let g = DMatrix::from_fn(s.len(), s.len(), |a, b| col_gram[(s[a], s[b])]);
        let gram = GramMatrix::from_matrix(&g, KernelKind::Ntk, 0)?;
        let yv: Vec<f64> = obs.iter().map(|o| o.1).collect();
        let sol = ridge_solve_direct(&gram, &yv, lambda)?;
        Ok((0..d).map(|j| s.iter().zip(&sol.alpha).map(|(&c, a)| col_gram[(j, c)] * a).sum()).collect())
    });
    let mut out = DMatrix::zeros(rows, d);
    for (i, r) in solved.into_iter().enumerate() {
        for (j, v) in r?.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}
