use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::conv::{conv_pair, self_chain};
use super::expectations::{DualActivation, Relu};
use super::fc::fc_ntk_counted;
use crate::flops::FlopCounter;
use crate::{Error, Result};

pub const DEFAULT_TILE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Ntk,
    Nngp,
    Empirical,
    Nth,
}

impl KernelKind {
    pub fn code(self) -> u8 {
        match self {
            KernelKind::Ntk => 0,
            KernelKind::Nngp => 1,
            KernelKind::Empirical => 2,
            KernelKind::Nth => 3,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => KernelKind::Ntk,
            1 => KernelKind::Nngp,
            2 => KernelKind::Empirical,
            3 => KernelKind::Nth,
            _ => return Err(Error::Format(format!("unknown kernel kind {c}"))),
        })
    }
}

/// Symmetric m×m kernel matrix with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    m: usize,
    data: Vec<f64>,
    pub kind: KernelKind,
    pub arch_fingerprint: u64,
}

impl GramMatrix {
    /// Builds from an entry function evaluated on the upper triangle only.
    pub fn from_fn(m: usize, kind: KernelKind, fp: u64, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let v = f(i, j);
                data[i * m + j] = v;
                data[j * m + i] = v;
            }
        }
        Self { m, data, kind, arch_fingerprint: fp }
    }

    /// Takes the upper triangle of a square matrix and mirrors it.
    pub fn from_matrix(a: &DMatrix<f64>, kind: KernelKind, fp: u64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape(format!("{}x{} Gram", a.nrows(), a.ncols())));
        }
        Ok(Self::from_fn(a.nrows(), kind, fp, |i, j| a[(i, j)]))
    }

    pub fn from_upper(m: usize, upper: &[f64], kind: KernelKind, fp: u64) -> Result<Self> {
        if upper.len() != m * (m + 1) / 2 {
            return Err(Error::Shape(format!("{} upper entries for m={m}", upper.len())));
        }
        let mut it = upper.iter();
        Ok(Self::from_fn(m, kind, fp, |_, _| *it.next().unwrap()))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m * (self.m + 1) / 2);
        for i in 0..self.m {
            out.extend_from_slice(&self.data[i * self.m + i..(i + 1) * self.m]);
        }
        out
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.m, self.m, &self.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.m).map(|i| self.get(i, i)).sum()
    }

    /// Smallest eigenvalue, and whether it clears -1e-8·trace/m.
    pub fn psd_check(&self) -> (f64, bool) {
        let eig = nalgebra::SymmetricEigen::new(self.matrix());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-8 * self.trace().abs() / self.m.max(1) as f64;
        (min, min >= -tol)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GramOptions<'a> {
    /// Tile edge in entries.
    pub tile: usize,
    /// Refuse to allocate more than this many bytes for the m×m result.
    pub mem_budget_bytes: Option<u64>,
    pub flops: Option<&'a FlopCounter>,
}

impl Default for GramOptions<'_> {
    fn default() -> Self {
        Self { tile: DEFAULT_TILE, mem_budget_bytes: None, flops: None }
    }
}

/// Analytic kernel of an architecture, evaluated pair by pair.
#[derive(Debug, Clone)]
pub struct AnalyticKernel {
    pub arch: ArchSpec,
}

impl AnalyticKernel {
    pub fn new(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        Ok(Self { arch })
    }

    /// `(theta, nngp)` for one pair.
    pub fn pair(&self, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
        let cx = self.prepare(x)?;
        let cy = self.prepare(y)?;
        self.pair_cached(x, y, &cx, &cy, true, None)
    }

    pub fn eval(&self, x: &[f64], y: &[f64], kind: KernelKind) -> Result<f64> {
        let (t, q) = self.pair(x, y)?;
        pick(kind, t, q)
    }

    fn prepare(&self, x: &[f64]) -> Result<PointCache> {
        if x.len() != self.arch.input_len() {
            return Err(Error::Shape(format!(
                "sample of length {} for input length {}",
                x.len(),
                self.arch.input_len()
            )));
        }
        Ok(if self.arch.is_conv() {
            PointCache(self_chain(x, &self.arch, &Relu)?)
        } else {
            PointCache::default()
        })
    }

    fn pair_cached(
        &self,
        x: &[f64],
        y: &[f64],
        cx: &PointCache,
        cy: &PointCache,
        want_theta: bool,
        counter: Option<&FlopCounter>,
    ) -> Result<(f64, f64)> {
        let act: &dyn DualActivation = &Relu;
        if self.arch.is_conv() {
            conv_pair(x, y, &cx.0, &cy.0, &self.arch, act, want_theta, counter)
        } else {
            fc_ntk_counted(x, y, self.arch.depth(), act, want_theta, counter)
        }
    }
}

#[derive(Debug, Clone, Default)]
struct PointCache(Vec<Vec<f64>>);

fn pick(kind: KernelKind, theta: f64, nngp: f64) -> Result<f64> {
    match kind {
        KernelKind::Ntk => Ok(theta),
        KernelKind::Nngp => Ok(nngp),
        other => Err(Error::InvalidArgument(format!("{other:?} is not an analytic kernel"))),
    }
}

pub fn gram(dataset: &[Vec<f64>], arch: &ArchSpec, kind: KernelKind) -> Result<GramMatrix> {
    gram_with(dataset, arch, kind, &GramOptions::default())
}

/// Tiled Gram assembly. Each upper-triangle entry is computed exactly once,
/// so the result does not depend on how tiles are scheduled.
pub fn gram_with(dataset: &[Vec<f64>], arch: &ArchSpec, kind: KernelKind, opts: &GramOptions) -> Result<GramMatrix> {
    pick(kind, 0.0, 0.0)?;
    let kernel = AnalyticKernel::new(arch.clone())?;
    let m = dataset.len();
    if m == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let needed = (m as u64) * (m as u64) * 8;
    if let Some(budget) = opts.mem_budget_bytes {
        if needed > budget {
            return Err(Error::Budget { needed, budget });
        }
    }
    let caches: Vec<PointCache> = crate::par_map(m, |i| kernel.prepare(&dataset[i]))
        .into_iter()
        .collect::<Result<_>>()?;
    let edge = opts.tile.max(1);
    let nb = m.div_ceil(edge);
    let tiles: Vec<(usize, usize)> = (0..nb).flat_map(|a| (a..nb).map(move |b| (a, b))).collect();
    let want_theta = kind == KernelKind::Ntk;
    let blocks = crate::par_map(tiles.len(), |t| -> Result<Vec<(usize, usize, f64)>> {
        let (a, b) = tiles[t];
        let mut out = Vec::new();
        for i in a * edge..((a + 1) * edge).min(m) {
            let j0 = (b * edge).max(i);
            for j in j0..((b + 1) * edge).min(m) {
                let (th, q) =
                    kernel.pair_cached(&dataset[i], &dataset[j], &caches[i], &caches[j], want_theta, opts.flops)?;
                out.push((i, j, if want_theta { th } else { q }));
            }
        }
        Ok(out)
    });
    let mut data = vec![0.0; m * m];
    for block in blocks {
        for (i, j, v) in block? {
            data[i * m + j] = v;
            data[j * m + i] = v;
        }
    }
    Ok(GramMatrix { m, data, kind, arch_fingerprint: arch.fingerprint() })
}

/// Rectangular kernel block K(a_i, b_j).
pub fn cross_gram(a: &[Vec<f64>], b: &[Vec<f64>], arch: &ArchSpec, kind: KernelKind) -> Result<DMatrix<f64>> {
    pick(kind, 0.0, 0.0)?;
    let kernel = AnalyticKernel::new(arch.clone())?;
    let ca: Vec<PointCache> = a.iter().map(|x| kernel.prepare(x)).collect::<Result<_>>()?;
    let cb: Vec<PointCache> = b.iter().map(|x| kernel.prepare(x)).collect::<Result<_>>()?;
    let want_theta = kind == KernelKind::Ntk;
    let rows = crate::par_map(a.len(), |i| -> Result<Vec<f64>> {
        (0..b.len())
            .map(|j| {
                let (t, q) = kernel.pair_cached(&a[i], &b[j], &ca[i], &cb[j], want_theta, None)?;
                Ok(if want_theta { t } else { q })
            })
            .collect()
    });
    let mut out = DMatrix::zeros(a.len(), b.len());
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_and_duplicates() {
        let arch = ArchSpec::fc(2, 2);
        let g = gram(&[vec![0.6, 0.8]], &arch, KernelKind::Ntk).unwrap();
        assert_eq!(g.m(), 1);
        assert!((g.get(0, 0) - 1.0).abs() < 1e-12);
        let g = gram(&[vec![0.3, 0.1], vec![0.3, 0.1]], &arch, KernelKind::Ntk).unwrap();
        assert_eq!(g.get(0, 0), g.get(1, 0));
        assert_eq!(g.get(0, 1), g.get(1, 1));
    }

    #[test]
    fn tiling_does_not_change_bits() {
        let arch = ArchSpec::conv1d(1, 4, &[-1, 0, 1], 3);
        let data: Vec<Vec<f64>> = (0..13).map(|i| (0..4).map(|p| ((i * 4 + p) as f64).sin()).collect()).collect();
        let a = gram_with(&data, &arch, KernelKind::Ntk, &GramOptions { tile: 1, ..Default::default() }).unwrap();
        let b = gram_with(&data, &arch, KernelKind::Ntk, &GramOptions { tile: 5, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_enforced() {
        let arch = ArchSpec::fc(1, 2);
        let data = vec![vec![1.0]; 10];
        let opts = GramOptions { mem_budget_bytes: Some(100), ..Default::default() };
        assert!(matches!(gram_with(&data, &arch, KernelKind::Ntk, &opts), Err(Error::Budget { .. })));
    }

    #[test]
    fn nngp_costs_no_more_than_ntk() {
        let arch = ArchSpec::fc(2, 3);
        let data: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64).cos(), (i as f64).sin()]).collect();
        let (c1, c2) = (FlopCounter::new(), FlopCounter::new());
        gram_with(&data, &arch, KernelKind::Ntk, &GramOptions { flops: Some(&c1), ..Default::default() }).unwrap();
        gram_with(&data, &arch, KernelKind::Nngp, &GramOptions { flops: Some(&c2), ..Default::default() }).unwrap();
        assert!(c2.get() <= c1.get() && c2.get() > 0);
    }
}
