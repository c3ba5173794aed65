use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ntk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntk"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = ntk(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

/// Points on the unit circle in R³ with smooth labels.
fn write_data(dir: &Path, m: usize) -> (PathBuf, PathBuf, Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / m as f64 + 0.1;
            vec![t.cos() * 0.8, t.sin() * 0.8, 0.6]
        })
        .collect();
    let y: Vec<f64> = xs.iter().map(|x| x[0] * x[0] - 0.5 * x[1]).collect();
    let (xp, yp) = (dir.join("x.csv"), dir.join("y.csv"));
    let rows: Vec<String> = xs.iter().map(|x| x.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")).collect();
    std::fs::write(&xp, rows.join("\n") + "\n").unwrap();
    std::fs::write(&yp, y.iter().map(|v| format!("{v:e}\n")).collect::<String>()).unwrap();
    (xp, yp, xs, y)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn spectrum_of_the_identity_kernel() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["spectrum", "--spectral-kernel", "linear", "--k-max", "8", "--nodes", "64"]);
    let rows = csv_rows(&d.path().join("spectrum.csv"));
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[1][0], "1");
    assert!((rows[1][1].parse::<f64>().unwrap() - PI * PI).abs() < 1e-10);
    assert!(rows.iter().all(|r| r[2].starts_with("spectral@")));
    let fit = report(&d.path().join("spectrum_fit.json"));
    assert!(fit["p"].is_null());
}

#[test]
fn ntk_spectrum_fit_reported() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["spectrum", "--k-max", "64", "--arch-depth", "3"]);
    let fit = report(&d.path().join("spectrum_fit.json"));
    assert!((fit["p"].as_f64().unwrap() - 2.0).abs() < 0.5);
}

#[test]
fn single_point_gram() {
    let d = TempDir::new().unwrap();
    let (xp, ..) = write_data(d.path(), 1);
    ok(d.path(), &["gram", "--dataset", s(&xp)]);
    let g = ntk_core::io::read_gram(&d.path().join("gram.ntkg")).unwrap();
    assert_eq!(g.m(), 1);
    // Unit-norm input, depth 3: L·2^{−(L−1)}.
    assert!((g.get(0, 0) - 0.75).abs() < 1e-12);
    let r = report(&d.path().join("gram_report.json"));
    assert_eq!(r["stage"], "gram");
    assert_eq!(r["m"], 1);
    assert!(r["fingerprint"].as_str().unwrap().starts_with("analytic@"));
}

#[test]
fn flops_quadruple_when_m_doubles() {
    let flops = |m: usize, kind: &str| {
        let d = TempDir::new().unwrap();
        let (xp, ..) = write_data(d.path(), m);
        ok(d.path(), &["gram", "--dataset", s(&xp), "--kind", kind]);
        report(&d.path().join("gram_report.json"))["flops"].as_u64().unwrap() as f64
    };
    let (a, b) = (flops(40, "ntk"), flops(80, "ntk"));
    assert!((b / a / 4.0 - 1.0).abs() < 0.1, "{a} {b}");
    assert!(flops(40, "nngp") <= a);
}

#[test]
fn fit_then_predict_interpolates() {
    let d = TempDir::new().unwrap();
    let (xp, yp, _, y) = write_data(d.path(), 12);
    ok(d.path(), &["fit", "--dataset", s(&xp), "--labels", s(&yp), "--lambda", "0"]);
    ok(d.path(), &["predict", "--dataset", s(&xp), "--model", s(&d.path().join("model.ntks"))]);
    let rows = csv_rows(&d.path().join("predictions.csv"));
    for (r, want) in rows.iter().zip(&y) {
        assert!((r[1].parse::<f64>().unwrap() - want).abs() < 1e-6);
        assert!(r[2].starts_with("solvers@"));
    }
}

#[test]
fn fit_from_saved_gram() {
    let d = TempDir::new().unwrap();
    let (xp, yp, ..) = write_data(d.path(), 10);
    ok(d.path(), &["gram", "--dataset", s(&xp)]);
    let g = d.path().join("gram.ntkg");
    ok(d.path(), &["fit", "--gram", s(&g), "--labels", s(&yp), "--lambda", "1e-3"]);
    let a = ntk_core::io::read_solution(&d.path().join("model.ntks")).unwrap();
    ok(d.path(), &["fit", "--dataset", s(&xp), "--labels", s(&yp), "--lambda", "1e-3"]);
    let b = ntk_core::io::read_solution(&d.path().join("model.ntks")).unwrap();
    assert_eq!(a.alpha, b.alpha);
}

#[test]
fn full_rank_nystrom_matches_direct() {
    let d = TempDir::new().unwrap();
    let (xp, yp, ..) = write_data(d.path(), 15);
    let model = d.path().join("model.ntks");
    let preds = |extra: &[&str]| {
        let mut args = vec!["fit", "--dataset", s(&xp), "--labels", s(&yp), "--lambda", "0.01"];
        args.extend_from_slice(extra);
        ok(d.path(), &args);
        ok(d.path(), &["predict", "--dataset", s(&xp), "--model", s(&model)]);
        csv_rows(&d.path().join("predictions.csv")).iter().map(|r| r[1].parse::<f64>().unwrap()).collect::<Vec<_>>()
    };
    let direct = preds(&[]);
    let ny = preds(&["--nystrom-m", "15", "--cg-iters", "300", "--cg-tol", "1e-13"]);
    for (a, b) in ny.iter().zip(&direct) {
        assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
    let r = report(&d.path().join("fit_report.json"));
    assert_eq!(r["anchors"], 15);
    assert_eq!(r["converged"], true);
}

#[test]
fn missing_model_is_a_clean_error() {
    let d = TempDir::new().unwrap();
    let (xp, ..) = write_data(d.path(), 4);
    let o = ntk(d.path(), &["predict", "--dataset", s(&xp), "--model", s(&d.path().join("nope.ntks"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("ntk: ") && !err.contains("panicked"), "{err}");
}

#[test]
fn dynamics_residual_matches_closed_form() {
    let d = TempDir::new().unwrap();
    let (xp, yp, ..) = write_data(d.path(), 10);
    ok(d.path(), &["dynamics", "--dataset", s(&xp), "--labels", s(&yp), "--eta", "1e-3", "--steps", "10000"]);
    let rows = csv_rows(&d.path().join("dynamics.csv"));
    assert_eq!(rows.len(), 101);
    let last = rows.last().unwrap();
    assert_eq!(last[0], "10000");
    let (num, closed): (f64, f64) = (last[3].parse().unwrap(), last[4].parse().unwrap());
    assert!((num - closed).abs() < 1e-3, "{num} vs {closed}");
    assert!(last[5].starts_with("solvers@"));
}

#[test]
fn cross_entropy_dynamics_run() {
    let d = TempDir::new().unwrap();
    let (xp, ..) = write_data(d.path(), 6);
    let yp = d.path().join("c.csv");
    std::fs::write(&yp, "0\n1\n2\n0\n1\n2\n").unwrap();
    ok(d.path(), &["dynamics", "--dataset", s(&xp), "--labels", s(&yp), "--loss", "xent", "--eta", "0.5", "--steps", "200"]);
    let rows = csv_rows(&d.path().join("dynamics.csv"));
    let first: f64 = rows[0][2].parse().unwrap();
    let last: f64 = rows.last().unwrap()[2].parse().unwrap();
    assert!(last < first);
    assert!(rows[0][4].is_empty());
}

#[test]
fn untrained_pair_has_zero_velocity() {
    let d = TempDir::new().unwrap();
    let (xp, yp, ..) = write_data(d.path(), 4);
    ok(d.path(), &["empirical", "--dataset", s(&xp), "--labels", s(&yp), "--eta", "0", "--steps", "5", "--widths", "16,32", "--seeds", "2"]);
    let rows = csv_rows(&d.path().join("empirical.csv"));
    assert_eq!(rows.len(), 2 * 2 * 6);
    for r in &rows {
        assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[5].parse::<f64>().unwrap(), 0.0);
        assert!(r[6].starts_with("empirical@"));
    }
}

#[test]
fn trained_nets_move_their_kernel() {
    let d = TempDir::new().unwrap();
    let (xp, yp, ..) = write_data(d.path(), 4);
    ok(d.path(), &["empirical", "--dataset", s(&xp), "--labels", s(&yp), "--eta", "0.1", "--steps", "20", "--widths", "16"]);
    let rows = csv_rows(&d.path().join("empirical.csv"));
    assert!(rows[1..].iter().all(|r| r[4].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn correct_writes_label_aware_kernel() {
    let d = TempDir::new().unwrap();
    let (xp, yp, ..) = write_data(d.path(), 4);
    ok(d.path(), &["correct", "--dataset", s(&xp), "--labels", s(&yp), "--widths", "8", "--seeds", "4"]);
    let g = ntk_core::io::read_gram(&d.path().join("nth.ntkg")).unwrap();
    assert_eq!(g.m(), 4);
    let rows = csv_rows(&d.path().join("correct.csv"));
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r[6].starts_with("corrections@")));
}

#[test]
fn too_many_points_for_the_hierarchy_is_a_budget_error() {
    let d = TempDir::new().unwrap();
    let (xp, yp, ..) = write_data(d.path(), 12);
    let o = ntk(d.path(), &["correct", "--dataset", s(&xp), "--labels", s(&yp), "--widths", "4"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn memory_budget_exit_code() {
    let d = TempDir::new().unwrap();
    let (xp, ..) = write_data(d.path(), 2000);
    let o = ntk(d.path(), &["gram", "--dataset", s(&xp), "--mem-budget-mb", "1"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn singular_system_is_a_numeric_failure() {
    let d = TempDir::new().unwrap();
    let xp = d.path().join("dup.csv");
    std::fs::write(&xp, "1,0\n1,0\n").unwrap();
    let yp = d.path().join("y.csv");
    std::fs::write(&yp, "1\n2\n").unwrap();
    let o = ntk(d.path(), &["fit", "--dataset", s(&xp), "--labels", s(&yp), "--lambda", "0"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_file_and_flag_precedence() {
    let d = TempDir::new().unwrap();
    let (xp, ..) = write_data(d.path(), 3);
    let cfg = d.path().join("run.json");
    std::fs::write(&cfg, format!(r#"{{"dataset": "{}", "arch_depth": 2, "kind": "nngp"}}"#, s(&xp))).unwrap();
    ok(d.path(), &["gram", "--config", s(&cfg)]);
    let g = ntk_core::io::read_gram(&d.path().join("gram.ntkg")).unwrap();
    assert_eq!(g.kind, ntk_core::analytic::KernelKind::Nngp);
    ok(d.path(), &["gram", "--config", s(&cfg), "--kind", "ntk"]);
    let g = ntk_core::io::read_gram(&d.path().join("gram.ntkg")).unwrap();
    assert_eq!(g.kind, ntk_core::analytic::KernelKind::Ntk);
    // Depth 2 from the file: unit-norm diagonal 2·2^{−1} = 1.
    assert!((g.get(0, 0) - 1.0).abs() < 1e-12);
}

#[test]
fn config_errors_exit_with_two() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("bad.json");
    std::fs::write(&cfg, r#"{"datset": "x.csv"}"#).unwrap();
    assert_eq!(ntk(d.path(), &["gram", "--config", s(&cfg)]).status.code(), Some(2));
    assert_eq!(ntk(d.path(), &["gram"]).status.code(), Some(2));
    assert_eq!(ntk(d.path(), &["gram", "--lambda", "-1"]).status.code(), Some(2));
    assert_eq!(ntk(d.path(), &["gram", "--kind", "bogus"]).status.code(), Some(2));
    assert_eq!(ntk(d.path(), &["bench"]).status.code(), Some(2));
}

#[test]
fn conv_gram_from_flags() {
    let d = TempDir::new().unwrap();
    let xp = d.path().join("img.csv");
    std::fs::write(&xp, "1,0,0,1,0.5,0.2\n0,1,1,0,0.1,0.9\n").unwrap();
    ok(d.path(), &["gram", "--dataset", s(&xp), "--arch-kind", "conv1d", "--channels", "2", "--ker", "-1,0,1", "--arch-depth", "2"]);
    let g = ntk_core::io::read_gram(&d.path().join("gram.ntkg")).unwrap();
    assert_eq!(g.m(), 2);
    assert_eq!(report(&d.path().join("gram_report.json"))["d"], 3);
    let o = ntk(d.path(), &["gram", "--dataset", s(&xp), "--arch-kind", "conv1d", "--channels", "4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empirical_gram_averages_seeds() {
    let d = TempDir::new().unwrap();
    let (xp, ..) = write_data(d.path(), 3);
    ok(d.path(), &["gram", "--dataset", s(&xp), "--kind", "empirical", "--widths", "64", "--seeds", "3"]);
    let g = ntk_core::io::read_gram(&d.path().join("gram.ntkg")).unwrap();
    assert_eq!(g.kind, ntk_core::analytic::KernelKind::Empirical);
    assert!(report(&d.path().join("gram_report.json"))["fingerprint"].as_str().unwrap().starts_with("empirical@"));
}

#[test]
fn embedding_written() {
    let d = TempDir::new().unwrap();
    let xp = d.path().join("t.csv");
    std::fs::write(&xp, "0.1\n0.4\n1.1\n").unwrap();
    ok(d.path(), &["embed", "--dataset", s(&xp), "--embedding", "positional", "--embed-m", "4", "--sigma", "16"]);
    let e = ntk_core::io::read_embedded(&d.path().join("embedded.ntke")).unwrap();
    assert_eq!(e.tag, 1);
    assert_eq!(e.rows.len(), 3);
    assert_eq!(e.rows[0].len(), 8);
    // Integer shifts leave integer-frequency features unchanged.
    for (a, b) in e.rows[0].iter().zip(&e.rows[2]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn bench_sweeps() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["bench", "--sweep-m", "64,128,256", "--steps", "10"]);
    let b = report(&d.path().join("bench.json"));
    let slopes = b["slopes"].as_array().unwrap();
    let gram = slopes.iter().find(|s| s["stage"] == "gram").unwrap();
    assert!((gram["flop_slope"].as_f64().unwrap() - 2.0).abs() < 0.3);
    let solve = slopes.iter().find(|s| s["stage"] == "solve").unwrap();
    assert!((solve["flop_slope"].as_f64().unwrap() - 3.0).abs() < 0.5);
    assert_eq!(csv_rows(&d.path().join("bench.csv")).len(), 9);
    ok(d.path(), &["bench", "--sweep-d", "8,16,32", "--points", "4", "--arch-depth", "2"]);
    assert_eq!(csv_rows(&d.path().join("bench.csv")).len(), 3);
    assert_eq!(ntk(d.path(), &["bench", "--sweep-m", "64,32"]).status.code(), Some(2));
}

#[test]
fn outputs_are_reproducible() {
    let d = TempDir::new().unwrap();
    let (xp, yp, ..) = write_data(d.path(), 20);
    let run = |sub: &str| {
        let o = d.path().join(sub);
        ok(&o, &["gram", "--dataset", s(&xp)]);
        ok(&o, &["empirical", "--dataset", s(&xp), "--labels", s(&yp), "--widths", "16", "--steps", "5", "--seed", "9"]);
        (std::fs::read(o.join("gram.ntkg")).unwrap(), std::fs::read(o.join("empirical.csv")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}
