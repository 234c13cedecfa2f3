//! WebAssembly bindings for the demo page in `www/`.
//!
//! All three entry points take a two-state source: rate `alpha` out of the
//! second state, `beta` out of the first, arrival rates `lambda1`, `lambda2`
//! and playout rate `mu`. Results come back as `Float64Array`s.

use fluidqoe::events::starvation_count_pmf_sweep;
use fluidqoe::inversion::InversionParams;
use fluidqoe::starvation::starvation_probability;
use fluidqoe::startup::session_startup_cdf;
use fluidqoe::util::linspace;
use fluidqoe::{FluidModel, SessionParams};
use wasm_bindgen::prelude::*;

fn model(alpha: f64, beta: f64, lambda1: f64, lambda2: f64, mu: f64) -> fluidqoe::Result<FluidModel> {
    FluidModel::two_state(alpha, beta, lambda1, lambda2, mu)
}

fn js(e: fluidqoe::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Starvation probability on `n` thresholds from `x_min` to `x_max` for file size `z`.
pub fn starvation_curve(
    alpha: f64,
    beta: f64,
    lambda1: f64,
    lambda2: f64,
    mu: f64,
    z: f64,
    x_min: f64,
    x_max: f64,
    n: usize,
) -> fluidqoe::Result<Vec<f64>> {
    let m = model(alpha, beta, lambda1, lambda2, mu)?;
    let p = InversionParams::default();
    linspace(x_min, x_max, n)
        .into_iter()
        .map(|x| starvation_probability(&m, &SessionParams::new(x, z)?, &p))
        .collect()
}

/// Start-up delay CDF from the stationary state, on `n` times in `[0, t_max]`.
pub fn startup_curve(
    alpha: f64,
    beta: f64,
    lambda1: f64,
    lambda2: f64,
    mu: f64,
    x: f64,
    t_max: f64,
    n: usize,
) -> fluidqoe::Result<Vec<f64>> {
    let m = model(alpha, beta, lambda1, lambda2, mu)?;
    let pi = m.stationary_distribution()?;
    let p = InversionParams::default();
    linspace(0.0, t_max, n).into_iter().map(|t| session_startup_cdf(&m, x, t, &pi, &p)).collect()
}

/// `P(0..=jmax)` followed by the mass beyond `jmax`.
pub fn count_distribution(
    alpha: f64,
    beta: f64,
    lambda1: f64,
    lambda2: f64,
    mu: f64,
    x: f64,
    z: f64,
    jmax: usize,
) -> fluidqoe::Result<Vec<f64>> {
    let m = model(alpha, beta, lambda1, lambda2, mu)?;
    SessionParams::new(x, z)?;
    let pmf = starvation_count_pmf_sweep(&m, x, &[z], jmax, 16, &InversionParams::default())?.remove(0);
    let mut out = pmf.p;
    out.push(pmf.tail);
    Ok(out)
}

#[wasm_bindgen(js_name = starvationCurve)]
#[allow(clippy::too_many_arguments)]
pub fn starvation_curve_js(
    alpha: f64,
    beta: f64,
    lambda1: f64,
    lambda2: f64,
    mu: f64,
    z: f64,
    x_min: f64,
    x_max: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    starvation_curve(alpha, beta, lambda1, lambda2, mu, z, x_min, x_max, n).map_err(js)
}

#[wasm_bindgen(js_name = startupCurve)]
#[allow(clippy::too_many_arguments)]
pub fn startup_curve_js(
    alpha: f64,
    beta: f64,
    lambda1: f64,
    lambda2: f64,
    mu: f64,
    x: f64,
    t_max: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    startup_curve(alpha, beta, lambda1, lambda2, mu, x, t_max, n).map_err(js)
}

#[wasm_bindgen(js_name = countDistribution)]
#[allow(clippy::too_many_arguments)]
pub fn count_distribution_js(
    alpha: f64,
    beta: f64,
    lambda1: f64,
    lambda2: f64,
    mu: f64,
    x: f64,
    z: f64,
    jmax: usize,
) -> Result<Vec<f64>, JsError> {
    count_distribution(alpha, beta, lambda1, lambda2, mu, x, z, jmax).map_err(js)
}
