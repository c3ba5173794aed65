mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use ntk_core::analytic::{cross_gram, gram, ArchSpec, GramMatrix, KernelKind};
use ntk_core::dynamics::*;
use ntk_core::linalg::SpectralDecomposition;
use proptest::prelude::*;

fn g(a: &DMatrix<f64>) -> GramMatrix {
    GramMatrix::from_matrix(a, KernelKind::Ntk, 0).unwrap()
}

fn euler(theta: &DMatrix<f64>, y: &[f64], f0: &[f64], dt: f64, steps: usize) -> DVector<f64> {
    let y = DVector::from_column_slice(y);
    let mut f = DVector::from_column_slice(f0);
    for _ in 0..steps {
        f += theta * (&y - &f) * dt;
    }
    f
}

#[test]
fn scalar_ode() {
    let gm = g(&DMatrix::from_element(1, 1, 2.0));
    for t in [0.0, 0.1, 1.0, 3.0] {
        let f = exact_train_predictions(&gm, &[1.0], &[0.0], t).unwrap();
        assert!((f[0] - (1.0 - (-2.0 * t).exp())).abs() < 1e-15);
    }
}

#[test]
fn time_zero_returns_initial_predictions() {
    let a = random_spd(5, 0.1, 30);
    let f0 = [0.1, -0.2, 0.3, 0.0, 0.5];
    let f = exact_train_predictions(&g(&a), &[1.0; 5], &f0, 0.0).unwrap();
    assert!(max_abs_diff(&f, &f0) < 1e-14);
    assert!(exact_train_predictions(&g(&a), &[1.0; 5], &f0, -1.0).is_err());
}

#[test]
fn residual_after_ten_time_constants() {
    let a = random_spd(6, 0.5, 31);
    let d = SpectralDecomposition::of(&a).unwrap();
    let t = 10.0 / d.smallest();
    let y = [1.0, -1.0, 0.5, 0.0, 2.0, -0.3];
    let f0 = [0.0; 6];
    let f = exact_train_predictions(&g(&a), &y, &f0, t).unwrap();
    let res: f64 = y.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let r0: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(res <= (-10.0f64).exp() * r0 * (1.0 + 1e-9));

    let short = 0.5;
    let dt = 1e-3;
    let fe = euler(&a, &y, &f0, dt, (short / dt) as usize);
    let fx = exact_train_predictions(&g(&a), &y, &f0, short).unwrap();
    assert!(max_abs_diff(fe.as_slice(), &fx) < 1e-3);
}

#[test]
fn test_prediction_matches_euler() {
    let xs: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 0.5, 1.0].iter().map(|&t: &f64| vec![t, 1.0]).collect();
    let arch = ArchSpec::fc(2, 2);
    let gm = gram(&xs, &arch, KernelKind::Ntk).unwrap();
    let x_test = vec![vec![0.25, 1.0]];
    let row = cross_gram(&x_test, &xs, &arch, KernelKind::Ntk).unwrap();
    let y = [0.2, -0.4, 0.6, 0.1, -0.2];
    let f0 = [0.0; 5];
    let (eta, steps) = (1e-4, 20_000);
    // joint Euler over train and test outputs
    let mut f = DVector::from_column_slice(&f0);
    let mut ft = 0.0;
    let yv = DVector::from_column_slice(&y);
    let a = gm.matrix();
    let r = DVector::from_iterator(5, row.row(0).iter().cloned());
    for _ in 0..steps {
        let res = &yv - &f;
        ft += eta * r.dot(&res);
        f += &a * res * eta;
    }
    let p = exact_test_prediction(row.row(0).clone_owned().as_slice(), &gm, &y, &f0, 0.0, eta * steps as f64).unwrap();
    assert!((p - ft).abs() < 1e-4, "{p} vs {ft}");
    assert_eq!(exact_test_prediction(row.row(0).clone_owned().as_slice(), &gm, &y, &f0, 0.3, 0.0).unwrap(), 0.3);
}

#[test]
fn interpolation_at_infinity() {
    let xs = unit_points(4, 3, 32);
    let arch = ArchSpec::fc(3, 3);
    let gm = gram(&xs, &arch, KernelKind::Ntk).unwrap();
    let y = [1.0, 2.0, 3.0, 4.0];
    let row: Vec<f64> = (0..4).map(|j| gm.get(2, j)).collect();
    let p = exact_test_prediction(&row, &gm, &y, &[0.0; 4], 0.0, f64::INFINITY).unwrap();
    assert!((p - 3.0).abs() < 1e-9);
}

#[test]
fn null_modes_stay_frozen() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let dynm = ExactDynamics::new(&g(&a), &[1.0, -1.0], &[0.0, 0.0]).unwrap();
    assert_eq!(dynm.frozen_modes().len(), 1);
    let s = dynm.train_predictions(100.0).unwrap();
    // y is orthogonal to the range, so nothing moves
    assert!(s.train_predictions.iter().all(|v| v.abs() < 1e-12));
    assert!(max_abs_diff(&s.residual, &[1.0, -1.0]) < 1e-12);
}

#[test]
fn discrete_modes_edge_cases() {
    let d = SpectralDecomposition::of(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))).unwrap();
    let one = discrete_mode_dynamics(&d, &[1.0, 1.0], &[0.0, 0.0], 0.5, 1).unwrap();
    // the λ = 2 mode converges in one step
    let k = d.lambdas.iter().position(|&l| l == 2.0).unwrap();
    assert!((one.coefficients[k] - one.targets[k]).abs() < 1e-15);
    let osc = discrete_mode_dynamics(&d, &[1.0, 1.0], &[0.0, 0.0], 1.0, 7).unwrap();
    assert!(osc.unstable[k]);
    assert!(((osc.coefficients[k] - osc.targets[k]).abs() - osc.targets[k].abs()).abs() < 1e-12);
}

#[test]
fn discrete_modes_match_explicit_descent() {
    let a = random_spd(4, 0.2, 33);
    let d = SpectralDecomposition::of(&a).unwrap();
    let eta = 0.9 / d.largest();
    let y = [0.5, -1.0, 0.2, 0.9];
    let u0 = [0.1, 0.0, -0.3, 0.4];
    let brute = euler(&a, &y, &u0, eta, 50);
    let modes = discrete_mode_dynamics(&d, &y, &u0, eta, 50).unwrap();
    assert!(max_abs_diff(&modes.predictions, brute.as_slice()) < 1e-10);
}

#[test]
fn stability_and_conditioning() {
    let id = SpectralDecomposition::of(&DMatrix::identity(3, 3)).unwrap();
    assert_eq!(max_stable_lr(&id).unwrap(), 2.0);
    assert_eq!(trainability_condition_number(&id), 1.0);
    let d41 = SpectralDecomposition::of(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))).unwrap();
    assert!((max_stable_lr(&d41).unwrap() - 0.5).abs() < 1e-15);
    let d21 = SpectralDecomposition::of(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))).unwrap();
    assert!((trainability_condition_number(&d21) - 0.5).abs() < 1e-15);
    let sing = SpectralDecomposition::of(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
    assert!(trainability_condition_number(&sing).abs() < 1e-15);
    let a = random_spd(3, 0.1, 34);
    let l = max_stable_lr(&SpectralDecomposition::of(&a).unwrap()).unwrap();
    let l3 = max_stable_lr(&SpectralDecomposition::of(&(a * 3.0)).unwrap()).unwrap();
    assert!((l / l3 - 3.0).abs() < 1e-12);
    assert!(max_stable_lr(&SpectralDecomposition::of(&DMatrix::zeros(2, 2)).unwrap()).is_err());
}

/// Conditions a joint Gaussian through its precision matrix.
fn condition_by_precision(joint: &DMatrix<f64>, m: usize, y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = joint.nrows();
    let p = joint.clone().try_inverse().unwrap();
    let ptt = p.view((m, m), (n - m, n - m)).clone_owned();
    let pto = p.view((m, 0), (n - m, m)).clone_owned();
    let cov = ptt.clone().try_inverse().unwrap();
    let mean = -&cov * pto * DVector::from_column_slice(y);
    (mean, cov)
}

#[test]
fn posterior_matches_joint_conditioning() {
    let all = unit_points(4, 3, 35);
    let arch = ArchSpec::fc(3, 2);
    let joint = gram(&all, &arch, KernelKind::Nngp).unwrap().matrix();
    let kt = joint.view((0, 0), (3, 3)).clone_owned();
    let kc = joint.view((3, 0), (1, 3)).clone_owned();
    let ks = joint.view((3, 3), (1, 1)).clone_owned();
    let y = [0.3, -0.7, 1.1];
    let post = nngp_posterior(&kt, &kc, &ks, &y, 0.0).unwrap();
    let (mean, cov) = condition_by_precision(&joint, 3, &y);
    assert!((post.mean[0] - mean[0]).abs() < 1e-10);
    assert!((post.cov[(0, 0)] - cov[(0, 0)]).abs() < 1e-10);
}

#[test]
fn posterior_edge_cases() {
    let kt = random_spd(3, 0.3, 36);
    let y = [1.0, 2.0, -1.0];
    // test point equal to a train point
    let kc = kt.rows(1, 1).clone_owned();
    let ks = DMatrix::from_element(1, 1, kt[(1, 1)]);
    let p = nngp_posterior(&kt, &kc, &ks, &y, 0.0).unwrap();
    assert!((p.mean[0] - 2.0).abs() < 1e-10 && p.cov[(0, 0)].abs() < 1e-8);
    // independent test point
    let ks = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let p = nngp_posterior(&kt, &DMatrix::zeros(2, 3), &ks, &y, 0.0).unwrap();
    assert!(p.mean.iter().all(|v| *v == 0.0));
    assert_eq!(p.cov, ks);
}

fn gp_instance(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let all = unit_points(7, 3, seed);
    let (tr, te) = all.split_at(5);
    let arch = ArchSpec::fc(3, 3);
    (
        gram(tr, &arch, KernelKind::Ntk).unwrap().matrix(),
        gram(tr, &arch, KernelKind::Nngp).unwrap().matrix(),
        cross_gram(te, tr, &arch, KernelKind::Ntk).unwrap(),
        cross_gram(te, tr, &arch, KernelKind::Nngp).unwrap(),
        gram(te, &arch, KernelKind::Nngp).unwrap().matrix(),
    )
}

#[test]
fn ntk_gp_prior_at_time_zero() {
    let (tt, nt, tc, nc, ns) = gp_instance(37);
    let b = GpBlocks { theta_train: &tt, nngp_train: &nt, theta_cross: &tc, nngp_cross: &nc, nngp_test: &ns };
    let m = ntk_gp_moments(&b, &[1.0, 0.0, -1.0, 0.5, 0.2], 0.0).unwrap();
    assert!(m.mean.iter().all(|v| *v == 0.0));
    assert!((&m.cov - &ns).norm() < 1e-14);
}

#[test]
fn ntk_gp_limit_matches_direct_formula() {
    let (tt, nt, tc, nc, ns) = gp_instance(38);
    let y = DVector::from_vec(vec![1.0, 0.0, -1.0, 0.5, 0.2]);
    let b = GpBlocks { theta_train: &tt, nngp_train: &nt, theta_cross: &tc, nngp_cross: &nc, nngp_test: &ns };
    let m = ntk_gp_moments(&b, y.as_slice(), f64::INFINITY).unwrap();
    let inv = tt.clone().try_inverse().unwrap();
    let mean = &tc * &inv * &y;
    let cov = &ns + &tc * &inv * &nt * &inv * tc.transpose() - (&tc * &inv * nc.transpose() + &nc * &inv * tc.transpose());
    assert!((m.mean - mean).amax() < 1e-9);
    assert!((m.cov - cov).amax() < 1e-9);
}

#[test]
fn width_certificate_examples() {
    let v = width_certificate(2, 1.0, 0.5, 1.0, 1.0, CertificateVariant::CubicDelta).unwrap();
    assert!((v - 512.0).abs() < 1e-9);
    let near_one = width_certificate(1, 1.0, 1.0 - 1e-9, 1.0, 1.0, CertificateVariant::LogDelta).unwrap();
    assert!((near_one - 2f64.ln()).abs() < 1e-6);
    let mut prev = 0.0;
    for m in 1..20 {
        let v = width_certificate(m, 0.3, 0.1, 1.0, 1.0, CertificateVariant::LogDelta).unwrap();
        assert!(v >= prev);
        prev = v;
    }
    assert!(width_certificate(0, 1.0, 0.5, 1.0, 1.0, CertificateVariant::CubicDelta).is_err());
    assert!(width_certificate(2, 1.0, 1.5, 1.0, 1.0, CertificateVariant::CubicDelta).is_err());
}

#[test]
fn generalization_bound_examples() {
    let id = DMatrix::<f64>::identity(3, 3);
    let b = generalization_bound(&id, &[1.0, 0.0, 0.0], &[0.0; 3], 100, 0.1, 0.1, 0.0).unwrap();
    assert!((b.b - 1.0).abs() < 1e-14 && (b.sqrt_b - 1.0).abs() < 1e-14);
    let z = generalization_bound(&id, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 100, 0.1, 0.1, 0.0).unwrap();
    assert_eq!(z.b, 0.0);
    let mut prev = f64::INFINITY;
    for m in [2, 4, 8, 16, 32] {
        let h = DMatrix::<f64>::identity(m, m);
        let y = vec![0.0; m];
        let v = generalization_bound(&h, &y, &y, 100, 0.1, 0.1, 0.0).unwrap().bound;
        assert!(v < prev);
        prev = v;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn semigroup(seed in 0u64..1000, t1 in 0.0f64..3.0, t2 in 0.0f64..3.0) {
        let a = random_spd(5, 0.05, seed);
        let mut r = rng(seed + 1);
        let y = gaussian_vec(5, &mut r);
        let f0 = gaussian_vec(5, &mut r);
        let direct = exact_train_predictions(&g(&a), &y, &f0, t1 + t2).unwrap();
        let mid = exact_train_predictions(&g(&a), &y, &f0, t1).unwrap();
        let two = exact_train_predictions(&g(&a), &y, &mid, t2).unwrap();
        prop_assert!(max_abs_diff(&direct, &two) < 1e-10);
    }

    #[test]
    fn residual_decays_at_least_at_the_smallest_rate(seed in 0u64..1000, t in 0.0f64..5.0) {
        let a = random_spd(5, 0.05, seed);
        let lm = SpectralDecomposition::of(&a).unwrap().smallest();
        let mut r = rng(seed + 2);
        let y = gaussian_vec(5, &mut r);
        let f0 = gaussian_vec(5, &mut r);
        let f = exact_train_predictions(&g(&a), &y, &f0, t).unwrap();
        let rt: f64 = y.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum();
        let r0: f64 = y.iter().zip(&f0).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!(rt <= (-2.0 * lm * t).exp() * r0 * (1.0 + 1e-10) + 1e-14);
    }

    #[test]
    fn modes_decouple(seed in 0u64..1000, t in 0.0f64..4.0) {
        let a = random_spd(4, 0.1, seed);
        let d = SpectralDecomposition::of(&a).unwrap();
        let mut r = rng(seed + 3);
        let y = gaussian_vec(4, &mut r);
        let f0 = gaussian_vec(4, &mut r);
        let f = exact_train_predictions(&g(&a), &y, &f0, t).unwrap();
        let pf = d.project(&DVector::from_vec(f));
        let py = d.project(&DVector::from_column_slice(&y));
        let p0 = d.project(&DVector::from_column_slice(&f0));
        for k in 0..4 {
            let want = py[k] + (p0[k] - py[k]) * (-d.lambdas[k] * t).exp();
            prop_assert!((pf[k] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn gp_variances_nonnegative(seed in 0u64..300, t in 0.0f64..50.0) {
        let (tt, nt, tc, nc, ns) = gp_instance(seed);
        let b = GpBlocks { theta_train: &tt, nngp_train: &nt, theta_cross: &tc, nngp_cross: &nc, nngp_test: &ns };
        let m = ntk_gp_moments(&b, &[1.0, -1.0, 0.0, 0.5, 0.5], t).unwrap();
        prop_assert!(m.variances().iter().all(|v| *v >= -1e-8));
    }

    #[test]
    fn condition_ranking_is_scale_free(seed in 0u64..1000, c in 0.01f64..100.0) {
        let a = random_spd(4, 0.05, seed);
        let b = random_spd(4, 0.2, seed + 7);
        let k = |m: &DMatrix<f64>| trainability_condition_number(&SpectralDecomposition::of(m).unwrap());
        prop_assert_eq!(k(&a) < k(&b), k(&(&a * c)) < k(&(&b * c)));
    }
}
