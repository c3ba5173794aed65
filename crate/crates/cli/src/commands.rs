use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use ntk_core::analytic::{cross_gram, fc_ntk, gram_with, AnalyticKernel, ArchSpec, GramMatrix, GramOptions, KernelKind};
use ntk_core::bench::{bench_d_sweep, bench_m_sweep, BenchReport};
use ntk_core::corrections::nth_kernel;
use ntk_core::dynamics::ExactDynamics;
use ntk_core::empirical::{gradient_flow_train, kernel_distance, mc_kernel_estimate, Activation, FiniteNet, Loss, TrainOptions};
use ntk_core::flops::FlopCounter;
use ntk_core::io::{
    embedding_tag, read_csv_rows, read_gram, read_labels, read_solution, write_csv, write_embedded, write_gram,
    write_solution, write_spectrum_csv, EmbeddedData,
};
use ntk_core::solvers::{numeric_dynamics, nystrom_cg_solve, ridge_solve_direct, CgOptions, KernelAccess, OnDemandKernel, RidgeSolution};
use ntk_core::spectral::{powerlaw_fit, zonal_spectrum, EmbeddingKind, FourierEmbedding};
use ntk_core::{derive_seed, fingerprint};
use serde_json::json;

use crate::config::{EmbeddingArg, LossArg, SpectralKernel};
use crate::{CliError, Settings};

type Res<T = ()> = Result<T, CliError>;

fn required<'a>(p: &'a Option<std::path::PathBuf>, flag: &str) -> Res<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

fn dataset(s: &Settings) -> Res<Vec<Vec<f64>>> {
    let rows = read_csv_rows(required(&s.dataset, "dataset")?)?;
    if rows.is_empty() {
        return Err(CliError::Config("dataset is empty".into()));
    }
    Ok(rows)
}

fn labels(s: &Settings, m: usize) -> Res<Vec<f64>> {
    let y = read_labels(required(&s.labels, "labels")?)?;
    if y.len() != m {
        return Err(CliError::Config(format!("{} labels for {m} samples", y.len())));
    }
    Ok(y)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Res {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

struct BuiltGram {
    gram: GramMatrix,
    seconds: f64,
    flops: u64,
    module: &'static str,
}

fn check_budget(s: &Settings, m: usize) -> Res {
    let needed = (m as u64) * (m as u64) * 8;
    match s.mem_budget_bytes() {
        Some(budget) if needed > budget => Err(ntk_core::Error::Budget { needed, budget }.into()),
        _ => Ok(()),
    }
}

fn build_gram(s: &Settings, xs: &[Vec<f64>], arch: &ArchSpec) -> Res<BuiltGram> {
    let counter = FlopCounter::new();
    let start = Instant::now();
    let kind = s.kind();
    let (gram, module) = match kind {
        KernelKind::Ntk | KernelKind::Nngp => {
            let opts = GramOptions { mem_budget_bytes: s.mem_budget_bytes(), flops: Some(&counter), ..GramOptions::default() };
            (gram_with(xs, arch, kind, &opts)?, "analytic")
        }
        KernelKind::Empirical => {
            check_budget(s, xs.len())?;
            let spec = s.net_spec(s.widths()[0], Activation::Relu);
            (mc_kernel_estimate(arch, spec, s.seeds(), s.seed(), xs)?, "empirical")
        }
        KernelKind::Nth => {
            check_budget(s, xs.len())?;
            let y = labels(s, xs.len())?;
            let spec = s.net_spec(s.widths()[0], Activation::SMOOTH_RELU);
            (nth_kernel(arch, spec, xs, &y, s.seeds(), s.seed())?.gram, "corrections")
        }
    };
    Ok(BuiltGram { gram, seconds: start.elapsed().as_secs_f64(), flops: counter.get(), module })
}

/// The Gram from `--gram` when given, otherwise built from the dataset.
fn load_or_build_gram(s: &Settings) -> Res<GramMatrix> {
    match &s.gram {
        Some(p) => Ok(read_gram(p)?),
        None => {
            let xs = dataset(s)?;
            let arch = s.arch(xs[0].len())?;
            Ok(build_gram(s, &xs, &arch)?.gram)
        }
    }
}

pub fn gram(s: &Settings) -> Res {
    let xs = dataset(s)?;
    let arch = s.arch(xs[0].len())?;
    let built = build_gram(s, &xs, &arch)?;
    let out = s.out();
    write_gram(&out.join("gram.ntkg"), &built.gram)?;
    let report = json!({
        "stage": "gram",
        "kind": format!("{:?}", s.kind()).to_lowercase(),
        "seconds": built.seconds,
        "flops": built.flops,
        "m": xs.len(),
        "d": arch.pixels,
        "fingerprint": fingerprint(built.module),
    });
    write_json(&out.join("gram_report.json"), &report)?;
    println!("{report}");
    Ok(())
}

fn cg_options(s: &Settings, m: usize) -> CgOptions {
    let d = CgOptions::for_size(m);
    CgOptions { max_iters: s.cg_iters.unwrap_or(d.max_iters), tol: s.cg_tol.unwrap_or(d.tol) }
}

pub fn fit(s: &Settings) -> Res {
    let (sol, m) = match s.nystrom_m {
        None => {
            let g = load_or_build_gram(s)?;
            let y = labels(s, g.m())?;
            (ridge_solve_direct(&g, &y, s.lambda())?, g.m())
        }
        Some(mp) => {
            let analytic = matches!(s.kind(), KernelKind::Ntk | KernelKind::Nngp);
            let solve = |access: &dyn KernelAccess| -> Res<RidgeSolution> {
                let m = access.len();
                let y = labels(s, m)?;
                let r = nystrom_cg_solve(access, &y, mp, s.lambda(), cg_options(s, m), s.seed(), None)?;
                Ok(r.solution)
            };
            if s.gram.is_none() && analytic {
                let xs = dataset(s)?;
                let kernel = AnalyticKernel::new(s.arch(xs[0].len())?)?;
                let access = OnDemandKernel { kernel: &kernel, points: &xs, kind: s.kind() };
                (solve(&access)?, xs.len())
            } else {
                let g = load_or_build_gram(s)?;
                (solve(&g)?, g.m())
            }
        }
    };
    if !sol.converged {
        eprintln!("ntk: solver stopped after {} iterations at relative residual {:e}", sol.iterations, sol.residual);
    }
    let out = s.out();
    write_solution(&out.join("model.ntks"), &sol)?;
    let report = json!({
        "m": m,
        "lambda": sol.lambda,
        "anchors": sol.anchors.len(),
        "iterations": sol.iterations,
        "residual": sol.residual,
        "converged": sol.converged,
        "fingerprint": fingerprint("solvers"),
    });
    write_json(&out.join("fit_report.json"), &report)?;
    println!("{report}");
    Ok(())
}

pub fn predict(s: &Settings) -> Res {
    let sol = read_solution(required(&s.model, "model")?)?;
    let train = dataset(s)?;
    let inputs = match &s.inputs {
        Some(p) => read_csv_rows(p)?,
        None => train.clone(),
    };
    let kind = s.kind();
    if !matches!(kind, KernelKind::Ntk | KernelKind::Nngp) {
        return Err(CliError::Config("predict needs an analytic kernel (ntk or nngp)".into()));
    }
    if let Some(&a) = sol.anchors.iter().find(|&&a| a >= train.len()) {
        return Err(CliError::Config(format!("model anchor {a} outside a dataset of {} rows", train.len())));
    }
    let anchors: Vec<Vec<f64>> = sol.anchors.iter().map(|&a| train[a].clone()).collect();
    let arch = s.arch(train[0].len())?;
    let k = cross_gram(&inputs, &anchors, &arch, kind)?;
    let preds = sol.predict(&k)?;
    let fp = fingerprint("solvers");
    let rows: Vec<Vec<String>> = preds.iter().enumerate().map(|(i, p)| vec![i.to_string(), fmt(*p), fp.clone()]).collect();
    write_csv(&s.out().join("predictions.csv"), &["index", "prediction", "fingerprint"], &rows)?;
    Ok(())
}

/// Label matrix for a loss: one column, or one-hot rows for cross-entropy.
fn label_matrix(y: &[f64], loss: LossArg) -> Res<DMatrix<f64>> {
    let m = y.len();
    match loss {
        LossArg::Square => Ok(DMatrix::from_column_slice(m, 1, y)),
        LossArg::Bce => {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(CliError::Config("bce labels must be 0 or 1".into()));
            }
            Ok(DMatrix::from_column_slice(m, 1, y))
        }
        LossArg::Xent => {
            if y.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                return Err(CliError::Config("xent labels must be class indices".into()));
            }
            let k = y.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1;
            Ok(DMatrix::from_fn(m, k, |i, c| if y[i] as usize == c { 1.0 } else { 0.0 }))
        }
    }
}

pub fn dynamics(s: &Settings) -> Res {
    let g = load_or_build_gram(s)?;
    let y = labels(s, g.m())?;
    let ym = label_matrix(&y, s.loss())?;
    let f0 = DMatrix::zeros(ym.nrows(), ym.ncols());
    let (eta, steps) = (s.eta(), s.steps());
    let every = (steps / 100).max(1);
    let traj = numeric_dynamics(&g, &ym, &f0, s.numeric_loss(), eta, steps, every, None, None)?;
    let exact = match s.loss() {
        LossArg::Square => Some(ExactDynamics::new(&g, &y, &vec![0.0; y.len()])?),
        _ => None,
    };
    let fp = fingerprint("solvers");
    let mut rows = Vec::new();
    for ((step, f), l) in traj.steps.iter().zip(&traj.train).zip(&traj.losses) {
        let t = eta * *step as f64;
        let closed = match &exact {
            Some(e) => {
                let r = e.train_predictions(t)?.residual;
                fmt(r.iter().map(|v| v * v).sum::<f64>().sqrt())
            }
            None => String::new(),
        };
        rows.push(vec![step.to_string(), fmt(t), fmt(*l), fmt((&ym - f).norm()), closed, fp.clone()]);
    }
    write_csv(
        &s.out().join("dynamics.csv"),
        &["step", "t", "loss", "residual_norm", "closed_form_residual_norm", "fingerprint"],
        &rows,
    )?;
    Ok(())
}

fn circle_kernel(kind: SpectralKernel, depth: usize) -> impl Fn(f64) -> f64 {
    move |t: f64| {
        let other = [t, (1.0 - t * t).max(0.0).sqrt()];
        match kind {
            SpectralKernel::Linear => t,
            SpectralKernel::Ntk => fc_ntk(&[1.0, 0.0], &other, depth).map_or(f64::NAN, |p| p.0),
            SpectralKernel::Nngp => fc_ntk(&[1.0, 0.0], &other, depth).map_or(f64::NAN, |p| p.1),
        }
    }
}

pub fn spectrum(s: &Settings) -> Res {
    let k_max = s.k_max.unwrap_or(64);
    let nodes = s.nodes.unwrap_or_else(|| (4 * k_max).max(8192).next_power_of_two());
    let kind = s.spectral_kernel.unwrap_or(SpectralKernel::Ntk);
    let spec = zonal_spectrum(&circle_kernel(kind, s.depth()), k_max, nodes)?;
    let fp = fingerprint("spectral");
    let out = s.out();
    write_spectrum_csv(&out.join("spectrum.csv"), &spec, &fp)?;
    let k_lo = (k_max / 8).max(1);
    let fit = if k_max > k_lo { powerlaw_fit(&spec, k_lo, k_max).ok() } else { None };
    let report = json!({
        "k_lo": k_lo,
        "k_hi": k_max,
        "p": fit.map(|f| f.p),
        "ci95": fit.map(|f| f.ci95),
        "fingerprint": fp,
    });
    write_json(&out.join("spectrum_fit.json"), &report)?;
    println!("{report}");
    Ok(())
}

pub fn empirical(s: &Settings) -> Res {
    let xs = dataset(s)?;
    let y = labels(s, xs.len())?;
    let loss = match s.loss() {
        LossArg::Square => Loss::Square,
        LossArg::Bce => Loss::Logistic,
        LossArg::Xent => return Err(CliError::Config("empirical training supports square and bce losses".into())),
    };
    let arch = s.arch(xs[0].len())?;
    let ys: Vec<Vec<f64>> = y.iter().map(|v| vec![*v]).collect();
    let steps = s.steps();
    let opts = TrainOptions { eta: s.eta(), steps, loss, record_every: (steps / 10).max(1) };
    let fp = fingerprint("empirical");
    let mut rows = Vec::new();
    for &w in &s.widths() {
        for k in 0..s.seeds() {
            let net = FiniteNet::new(&arch, s.net_spec(w, Activation::Relu), derive_seed(s.seed(), k as u64))?;
            let tr = gradient_flow_train(&net, &xs, &ys, opts)?;
            for (i, step) in tr.record_steps.iter().enumerate() {
                let velocity = if i == 0 { 0.0 } else { tr.velocities[i - 1] };
                let drift = kernel_distance(&tr.kernels[0], &tr.kernels[i])?;
                rows.push(vec![
                    w.to_string(),
                    k.to_string(),
                    step.to_string(),
                    fmt(tr.losses[*step]),
                    fmt(velocity),
                    fmt(drift),
                    fp.clone(),
                ]);
            }
        }
    }
    write_csv(
        &s.out().join("empirical.csv"),
        &["width", "seed", "step", "loss", "velocity", "distance_from_init", "fingerprint"],
        &rows,
    )?;
    Ok(())
}

pub fn correct(s: &Settings) -> Res {
    let xs = dataset(s)?;
    let y = labels(s, xs.len())?;
    let arch = s.arch(xs[0].len())?;
    let spec = s.net_spec(s.widths()[0], Activation::SMOOTH_RELU);
    let nth = nth_kernel(&arch, spec, &xs, &y, s.seeds(), s.seed())?;
    let out = s.out();
    write_gram(&out.join("nth.ntkg"), &nth.gram)?;
    let fp = fingerprint("corrections");
    let m = xs.len();
    let mut rows = Vec::new();
    for i in 0..m {
        for j in i..m {
            rows.push(vec![
                i.to_string(),
                j.to_string(),
                fmt(nth.gram.get(i, j)),
                fmt(nth.mean_ntk[(i, j)]),
                fmt(nth.ntk_se[(i, j)]),
                fmt(nth.label_term_se[(i, j)]),
                fp.clone(),
            ]);
        }
    }
    write_csv(&out.join("correct.csv"), &["i", "j", "nth", "mean_ntk", "ntk_se", "label_term_se", "fingerprint"], &rows)?;
    Ok(())
}

pub fn embed(s: &Settings) -> Res {
    let xs = dataset(s)?;
    let sigma = s.sigma.unwrap_or(10.0);
    let kind = match s.embedding.unwrap_or(EmbeddingArg::Basic) {
        EmbeddingArg::Basic => EmbeddingKind::Basic,
        EmbeddingArg::Positional => EmbeddingKind::Positional { m: s.embed_m.unwrap_or(8), sigma },
        EmbeddingArg::Gaussian => EmbeddingKind::Gaussian { rows: s.rows.unwrap_or(64), sigma, seed: s.seed() },
    };
    let e = FourierEmbedding::new(kind.clone(), xs[0].len())?;
    let rows = xs.iter().map(|x| e.embed(x)).collect::<Result<Vec<_>, _>>()?;
    let out = s.out();
    write_embedded(&out.join("embedded.ntke"), &EmbeddedData { tag: embedding_tag(&kind), rows })?;
    let report = json!({ "rows": xs.len(), "output_dim": e.output_dim(), "fingerprint": fingerprint("spectral") });
    write_json(&out.join("embed_report.json"), &report)?;
    println!("{report}");
    Ok(())
}

pub fn bench(s: &Settings) -> Res {
    let report: BenchReport = match (&s.sweep_m, &s.sweep_d) {
        (Some(ms), None) => {
            if let Some(&m) = ms.last() {
                check_budget(s, m)?;
            }
            let arch = ArchSpec::fc(s.channels.unwrap_or(8), s.depth());
            bench_m_sweep(ms, &arch, s.lambda.unwrap_or(1e-6), s.steps.unwrap_or(100), s.seed())?
        }
        (None, Some(ds)) => {
            let m = s.points.unwrap_or(16);
            check_budget(s, m)?;
            let ker = s.ker.clone().unwrap_or_else(|| vec![-1, 0, 1]);
            bench_d_sweep(ds, m, s.channels.unwrap_or(1), &ker, s.depth(), s.seed())?
        }
        _ => return Err(CliError::Config("bench needs exactly one of --sweep-m and --sweep-d".into())),
    };
    let fp = fingerprint("bench");
    let out = s.out();
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                format!("{:?}", p.stage).to_lowercase(),
                p.m.to_string(),
                p.d.to_string(),
                fmt(p.seconds),
                p.flops.to_string(),
                fp.clone(),
            ]
        })
        .collect();
    write_csv(&out.join("bench.csv"), &["stage", "m", "d", "seconds", "flops", "fingerprint"], &rows)?;
    let summary = json!({ "slopes": report.slopes, "fingerprint": fp });
    write_json(&out.join("bench.json"), &json!({ "points": report.points, "slopes": report.slopes, "fingerprint": fp }))?;
    println!("{summary}");
    Ok(())
}
