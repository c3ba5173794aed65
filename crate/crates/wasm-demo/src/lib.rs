//! Browser bindings for three small views of the infinite-width kernels:
//! the kernel as a function of the angle between inputs, its spectrum on
//! the circle with a power-law fit, and how fast gradient flow learns
//! targets of increasing frequency.

use std::f64::consts::PI;

use ntk_core::analytic::{fc_ntk, gram, ArchSpec, KernelKind};
use ntk_core::dynamics::ExactDynamics;
use ntk_core::spectral::{powerlaw_fit, zonal_spectrum};
use ntk_core::Result;
use wasm_bindgen::prelude::*;

fn unit_at(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

/// Rows `[θ, Θ, Σ]` for `samples` angles spread over [0, π].
pub fn angle_profile(depth: usize, samples: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(3 * samples);
    for i in 0..samples {
        let th = if samples > 1 { PI * i as f64 / (samples - 1) as f64 } else { 0.0 };
        let (ntk, nngp) = fc_ntk(&unit_at(0.0), &unit_at(th), depth)?;
        out.extend([th, ntk, nngp]);
    }
    Ok(out)
}

/// λ₀..λ_{k_max} of the depth-`depth` NTK on the circle, followed by the
/// fitted decay exponent p and its 95% half-width over [k_max/8, k_max].
pub fn circle_spectrum(depth: usize, k_max: usize) -> Result<Vec<f64>> {
    let nodes = (4 * k_max).max(4096).next_power_of_two();
    let kernel = |t: f64| {
        let th = t.clamp(-1.0, 1.0).acos();
        fc_ntk(&unit_at(0.0), &unit_at(th), depth).map_or(f64::NAN, |p| p.0)
    };
    let s = zonal_spectrum(&kernel, k_max, nodes)?;
    let fit = powerlaw_fit(&s, (k_max / 8).max(1), k_max)?;
    let mut out = s.lambdas;
    out.extend([fit.p, fit.ci95]);
    Ok(out)
}

/// Relative training residual ‖y − f_t‖/‖y‖ under gradient flow for the
/// targets cos(kθ), on `m` equispaced circle points, at `times` evenly
/// spaced times in [0, t_max]. One row per harmonic.
pub fn spectral_bias(depth: usize, m: usize, harmonics: &[u32], t_max: f64, times: usize) -> Result<Vec<f64>> {
    let thetas: Vec<f64> = (0..m).map(|j| 2.0 * PI * j as f64 / m as f64).collect();
    let xs: Vec<Vec<f64>> = thetas.iter().map(|&t| unit_at(t).to_vec()).collect();
    let g = gram(&xs, &ArchSpec::fc(2, depth), KernelKind::Ntk)?;
    let decomp = ntk_core::dynamics::decompose(&g)?;
    let mut out = Vec::with_capacity(harmonics.len() * times);
    for &k in harmonics {
        let y: Vec<f64> = thetas.iter().map(|t| (k as f64 * t).cos()).collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dynamics = ExactDynamics::from_decomposition(decomp.clone(), &y, &vec![0.0; m])?;
        for i in 0..times {
            let t = if times > 1 { t_max * i as f64 / (times - 1) as f64 } else { 0.0 };
            let r = dynamics.train_predictions(t)?.residual;
            out.push(r.iter().map(|v| v * v).sum::<f64>().sqrt() / norm);
        }
    }
    Ok(out)
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = angleProfile)]
pub fn angle_profile_js(depth: usize, samples: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(angle_profile(depth, samples))
}

#[wasm_bindgen(js_name = circleSpectrum)]
pub fn circle_spectrum_js(depth: usize, k_max: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(circle_spectrum(depth, k_max))
}

#[wasm_bindgen(js_name = spectralBias)]
pub fn spectral_bias_js(depth: usize, m: usize, harmonics: Vec<u32>, t_max: f64, times: usize) -> std::result::Result<Vec<f64>, JsError> {
    js(spectral_bias(depth, m, &harmonics, t_max, times))
}
