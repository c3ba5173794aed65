use std::f64::consts::PI;

use ntk_wasm::{angle_profile, circle_spectrum, spectral_bias};

#[test]
fn profile_peaks_at_zero_angle() {
    let rows = angle_profile(3, 50).unwrap();
    assert_eq!(rows.len(), 150);
    assert_eq!(rows[0], 0.0);
    assert!((rows[147] - PI).abs() < 1e-15);
    // Unit inputs: L·2^{−(L−1)} on the diagonal.
    assert!((rows[1] - 0.75).abs() < 1e-12);
    let ntk: Vec<f64> = rows.chunks(3).map(|r| r[1]).collect();
    assert!(ntk.iter().all(|v| *v <= ntk[0]));
}

#[test]
fn spectrum_decays_quadratically() {
    let out = circle_spectrum(3, 64).unwrap();
    assert_eq!(out.len(), 65 + 2);
    assert!((out[65] - 2.0).abs() < 0.5);
    assert!(out[..65].iter().all(|l| *l >= -1e-6 * out[0]));
}

#[test]
fn higher_frequencies_are_learned_later() {
    let times = 40;
    let curves = spectral_bias(3, 64, &[1, 2, 4, 8], 200.0, times).unwrap();
    assert_eq!(curves.len(), 4 * times);
    let first_below = |row: &[f64]| row.iter().position(|&r| r <= 0.1).unwrap_or(times);
    let hits: Vec<usize> = curves.chunks(times).map(first_below).collect();
    assert!(hits.windows(2).all(|w| w[0] <= w[1]), "{hits:?}");
    assert!(curves.chunks(times).all(|row| (row[0] - 1.0).abs() < 1e-12));
}

#[test]
fn bad_depth_is_an_error() {
    assert!(angle_profile(0, 3).is_err());
    assert!(spectral_bias(0, 8, &[1], 1.0, 2).is_err());
}
