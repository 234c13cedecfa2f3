//! Starvation time of a playback that starts with `x` frames buffered.
//!
//! Time is playback time: prefetch pauses do not advance it, and the file
//! runs out at `Z / mu`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inversion::InversionParams;
use crate::model::{FluidModel, RateMode, SessionParams};
use crate::passage::{derivative_at_zero, derivative_step, real_transform, Passage};
use crate::spectral::C64;
use crate::startup::{check_entry, contract, prefetch_end_distribution};

/// Restricted mean starvation times `D_ij(x) = E[tau; ends in j | starts in i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeverityMatrix {
    pub x: f64,
    pub d: DMatrix<f64>,
    /// Largest relative gap between the step-`eps` and step-`eps/2` estimates.
    pub step_agreement: f64,
}

fn check_level(x: f64) -> Result<()> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::DomainError(format!("buffer level x = {x} must be finite and >= 0")));
    }
    Ok(())
}

/// Starvation LST matrix `H_ij(x, w)`.
pub fn starvation_transform(model: &FluidModel, x: f64, omega: C64) -> Result<DMatrix<C64>> {
    check_level(x)?;
    Passage::new(model, x, RateMode::Playback).transform(omega)
}

/// `H_ij(x, t)`: probability of starving in `j` within playback time `t`.
pub fn starvation_cdf(model: &FluidModel, x: f64, t: f64, p: &InversionParams) -> Result<DMatrix<f64>> {
    check_level(x)?;
    Passage::new(model, x, RateMode::Playback).cdf(t, p)
}

/// Density `h_ij(x, t)` of the continuous part of the starvation time.
pub fn starvation_density(model: &FluidModel, x: f64, t: f64, p: &InversionParams) -> Result<DMatrix<f64>> {
    check_level(x)?;
    Passage::new(model, x, RateMode::Playback).density(t, p)
}

/// Probability that the first playback period starves before the file ends.
pub fn starvation_probability(model: &FluidModel, params: &SessionParams, p: &InversionParams) -> Result<f64> {
    let pi = model.stationary_distribution()?;
    starvation_probability_from(model, params, &pi, p)
}

/// As [`starvation_probability`], with the initial prefetch entered from `entry`.
pub fn starvation_probability_from(
    model: &FluidModel,
    params: &SessionParams,
    entry: &[f64],
    p: &InversionParams,
) -> Result<f64> {
    check_entry(model, entry)?;
    if params.x >= params.z {
        return Ok(0.0);
    }
    if model.lambda().iter().all(|&l| l >= model.mu()) {
        return Ok(0.0);
    }
    let v = prefetch_end_distribution(model, 0.0, params.x)?;
    let psi = v.propagate(entry);
    let h = starvation_cdf(model, params.x, params.horizon(model), p)?;
    Ok(contract(&h, &psi).clamp(0.0, 1.0))
}

/// `D_ij(x) = -dH_ij(x, w)/dw` at `w = 0`.
pub fn mean_playback_time(model: &FluidModel, x: f64) -> Result<SeverityMatrix> {
    check_level(x)?;
    let drift = model.mean_drift()?;
    if !drift.stable {
        return Err(Error::Unstable(drift.drift));
    }
    let passage = Passage::new(model, x, RateMode::Playback);
    let (d, coarse, fine) = derivative_at_zero(|w| real_transform(&passage, w), derivative_step(model))?;
    let mut d = -d;
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let step_agreement = if scale > 0.0 {
        (coarse - fine).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale
    } else {
        0.0
    };
    for v in d.iter_mut() {
        if *v < -1e-8 * scale.max(1.0) {
            return Err(Error::NonConvergence(format!("restricted mean came out negative ({v})")));
        }
        *v = v.max(0.0);
    }
    Ok(SeverityMatrix { x, d, step_agreement })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> FluidModel {
        FluidModel::two_state(2.0, 6.0, 2.0, 30.0, 25.0).unwrap()
    }

    fn params() -> InversionParams {
        InversionParams::default()
    }

    #[test]
    fn boundary_at_zero_level() {
        let h = starvation_transform(&reference(), 0.0, C64::new(2.0, 1.0)).unwrap();
        assert!((h[(0, 0)] - 1.0).norm() < 1e-12);
        assert_eq!(h[(0, 1)], C64::new(0.0, 0.0));
        assert_eq!(h[(1, 1)], C64::new(0.0, 0.0));
    }

    #[test]
    fn starvation_certain_under_negative_drift() {
        let m = reference();
        assert!(m.mean_drift().unwrap().stable);
        let h = starvation_transform(&m, 40.0, C64::new(1e-8, 0.0)).unwrap();
        for i in 0..2 {
            let s: f64 = (0..2).map(|j| h[(i, j)].re).sum();
            assert!((s - 1.0).abs() < 1e-3, "row {i}: {s}");
        }
    }

    #[test]
    fn cdf_vanishes_before_support() {
        let h = starvation_cdf(&reference(), 40.0, 1.0, &params()).unwrap();
        assert_eq!(h.sum(), 0.0);
    }

    #[test]
    fn cdf_approaches_zero_frequency_limit() {
        let m = reference();
        let h = starvation_cdf(&m, 20.0, 400.0, &params()).unwrap();
        let lim = starvation_transform(&m, 20.0, C64::new(1e-9, 0.0)).unwrap();
        for i in 0..2 {
            assert!((h[(i, 0)] - lim[(i, 0)].re).abs() < 1e-4);
        }
    }

    #[test]
    fn cdf_includes_atom_step() {
        // Staying in state 0 for the whole x/23 seconds is an atom.
        let m = reference();
        let t0 = 20.0 / 23.0;
        let before = starvation_cdf(&m, 20.0, t0 * 0.999, &params()).unwrap();
        let after = starvation_cdf(&m, 20.0, t0 * 1.001, &params()).unwrap();
        let mass = (-6.0 * t0).exp();
        assert!(before[(0, 0)] < 1e-6);
        assert!((after[(0, 0)] - mass).abs() < 1e-3, "{} vs {mass}", after[(0, 0)]);
    }

    #[test]
    fn density_integrates_to_cdf() {
        let m = reference();
        let x = 20.0;
        let t = 3.0;
        let n = 3000;
        let start = x / 23.0;
        let h = (t - start) / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let s = start + k as f64 * h;
            let d = starvation_density(&m, x, s.max(start * (1.0 + 1e-12)), &params()).unwrap();
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += w * d[(0, 0)];
        }
        acc *= h;
        let atom = (-6.0 * start).exp();
        let cdf = starvation_cdf(&m, x, t, &params()).unwrap()[(0, 0)];
        assert!((acc + atom - cdf).abs() < 1e-4, "{} vs {cdf}", acc + atom);
    }

    #[test]
    fn no_starvation_when_all_rates_exceed_playout() {
        let m = FluidModel::two_state(2.0, 6.0, 30.0, 40.0, 25.0).unwrap();
        let s = SessionParams::new(10.0, 500.0).unwrap();
        assert_eq!(starvation_probability(&m, &s, &params()).unwrap(), 0.0);
    }

    #[test]
    fn full_prefetch_never_starves() {
        let s = SessionParams::new(500.0, 500.0).unwrap();
        assert_eq!(starvation_probability(&reference(), &s, &params()).unwrap(), 0.0);
    }

    #[test]
    fn probability_monotone_in_threshold() {
        let m = reference();
        let mut last = 1.0;
        for x in [10.0, 20.0, 40.0, 80.0, 160.0] {
            let s = SessionParams::new(x, 1000.0).unwrap();
            let ps = starvation_probability(&m, &s, &params()).unwrap();
            assert!(ps <= last + 1e-7);
            last = ps;
        }
    }

    #[test]
    fn severity_requires_stability() {
        let m = FluidModel::two_state(2.0, 6.0, 2.0, 40.0, 25.0).unwrap();
        assert!(matches!(mean_playback_time(&m, 20.0), Err(Error::Unstable(_))));
    }

    #[test]
    fn severity_steps_agree_and_terminal_zero() {
        let m = FluidModel::two_state(6.0, 2.0, 2.0, 30.0, 25.0).unwrap();
        let s = mean_playback_time(&m, 20.0).unwrap();
        assert!(s.step_agreement < 1e-4, "{}", s.step_agreement);
        assert_eq!(s.d[(0, 1)], 0.0);
        assert_eq!(s.d[(1, 1)], 0.0);
        assert!(s.d[(0, 0)] > 0.0);
    }

    #[test]
    fn severity_shrinks_with_faster_playout() {
        let m = FluidModel::two_state(6.0, 2.0, 2.0, 30.0, 25.0).unwrap();
        let slow = mean_playback_time(&m, 20.0).unwrap().d;
        let fast = mean_playback_time(&m.with_mu(28.0).unwrap(), 20.0).unwrap().d;
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!(*a <= *b + 1e-9);
        }
    }
}
