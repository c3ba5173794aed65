//! Scaling harness: wall time and counted floating-point operations of Gram
//! construction, direct solves and numeric integration across sizes.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analytic::{gram_with, ArchSpec, GramOptions, KernelKind};
use crate::flops::FlopCounter;
use crate::solvers::{numeric_dynamics, ridge_solve_direct_counted, NumericLoss};
use crate::stats::loglog_fit;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gram,
    Solve,
    Integrate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub stage: Stage,
    pub m: usize,
    pub d: usize,
    pub seconds: f64,
    pub flops: u64,
}

/// Log-log slope of cost against the swept size for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSlope {
    pub stage: Stage,
    /// "m" or "d".
    pub axis: String,
    pub flop_slope: f64,
    pub time_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
    pub slopes: Vec<StageSlope>,
}

impl BenchReport {
    pub fn slope(&self, stage: Stage) -> Option<&StageSlope> {
        self.slopes.iter().find(|s| s.stage == stage)
    }
}

fn check_sweep(values: &[usize]) -> Result<()> {
    if values.len() < 2 || values.windows(2).any(|w| w[1] <= w[0]) || values[0] == 0 {
        return Err(Error::InvalidArgument("sweep needs at least two ascending positive values".into()));
    }
    Ok(())
}

fn random_points(m: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            let v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a / n).collect()
        })
        .collect()
}

fn timed<T>(f: impl FnOnce(&FlopCounter) -> Result<T>) -> Result<(T, f64, u64)> {
    let counter = FlopCounter::new();
    let start = Instant::now();
    let out = f(&counter)?;
    Ok((out, start.elapsed().as_secs_f64(), counter.get()))
}

fn fit_slopes(points: &[BenchPoint], axis: &str) -> Result<Vec<StageSlope>> {
    let mut out = Vec::new();
    for stage in [Stage::Gram, Stage::Solve, Stage::Integrate] {
        let pts: Vec<&BenchPoint> = points.iter().filter(|p| p.stage == stage).collect();
        if pts.len() < 2 {
            continue;
        }
        let x: Vec<f64> = pts.iter().map(|p| if axis == "m" { p.m } else { p.d } as f64).collect();
        let flops: Vec<f64> = pts.iter().map(|p| p.flops as f64).collect();
        let secs: Vec<f64> = pts.iter().map(|p| p.seconds.max(1e-9)).collect();
        out.push(StageSlope {
            stage,
            axis: axis.to_string(),
            flop_slope: loglog_fit(&x, &flops)?.slope,
            time_slope: loglog_fit(&x, &secs)?.slope,
        });
    }
    Ok(out)
}

/// Sweeps the dataset size on a fully-connected architecture: builds the
/// NTK Gram, solves the ridge system and runs `steps` Euler steps of
/// square-loss dynamics at every size.
pub fn bench_m_sweep(ms: &[usize], arch: &ArchSpec, lambda: f64, steps: usize, seed: u64) -> Result<BenchReport> {
    check_sweep(ms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for &m in ms {
        let xs = random_points(m, arch.input_len(), &mut rng);
        let y: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let (g, secs, flops) = timed(|c| {
            gram_with(&xs, arch, KernelKind::Ntk, &GramOptions { flops: Some(c), ..GramOptions::default() })
        })?;
        points.push(BenchPoint { stage: Stage::Gram, m, d: arch.pixels, seconds: secs, flops });
        let (_, secs, flops) = timed(|c| ridge_solve_direct_counted(&g, &y, lambda, Some(c)))?;
        points.push(BenchPoint { stage: Stage::Solve, m, d: arch.pixels, seconds: secs, flops });
        let ym = DMatrix::from_column_slice(m, 1, &y);
        let f0 = DMatrix::zeros(m, 1);
        let eta = 0.5 / g.trace().max(1e-12);
        let (_, secs, flops) = timed(|c| numeric_dynamics(&g, &ym, &f0, NumericLoss::Square, eta, steps, 0, None, Some(c)))?;
        points.push(BenchPoint { stage: Stage::Integrate, m, d: arch.pixels, seconds: secs, flops });
    }
    let slopes = fit_slopes(&points, "m")?;
    Ok(BenchReport { points, slopes })
}

/// Sweeps the pixel count of a 1-D convolutional architecture at fixed
/// dataset size and measures Gram construction.
pub fn bench_d_sweep(ds: &[usize], m: usize, channels: usize, offsets: &[isize], depth: usize, seed: u64) -> Result<BenchReport> {
    check_sweep(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for &d in ds {
        let arch = ArchSpec::conv1d(channels, d, offsets, depth);
        let xs = random_points(m, arch.input_len(), &mut rng);
        let (_, secs, flops) = timed(|c| {
            gram_with(&xs, &arch, KernelKind::Ntk, &GramOptions { flops: Some(c), ..GramOptions::default() })
        })?;
        points.push(BenchPoint { stage: Stage::Gram, m, d, seconds: secs, flops });
    }
    let slopes = fit_slopes(&points, "d")?;
    Ok(BenchReport { points, slopes })
}
