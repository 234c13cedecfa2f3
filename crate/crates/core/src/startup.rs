//! Start-up delay and prefetch-end distribution.
//!
//! Filling the buffer from 0 to `x` at rate `lambda_i` takes as long as
//! draining a level `x` at the same rates, so the start-up delay is a passage
//! time of the prefetch-mode fluid (`r_i = -lambda_i`).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inversion::InversionParams;
use crate::model::{FluidModel, RateMode};
use crate::passage::{derivative_at_zero, derivative_step, real_transform, Passage};
use crate::spectral::C64;

/// `V_ij(q, x)`: probability that a prefetch started in `i` with content `q`
/// ends in state `j` when the content reaches `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefetchEndMatrix {
    pub q: f64,
    pub x: f64,
    pub v: DMatrix<f64>,
}

impl PrefetchEndMatrix {
    /// `entry * V`.
    pub fn propagate(&self, entry: &[f64]) -> Vec<f64> {
        let row = DVector::from_column_slice(entry).transpose() * &self.v;
        row.iter().copied().collect()
    }
}

fn require_positive_arrivals(model: &FluidModel) -> Result<()> {
    if model.lambda().iter().any(|&l| l <= 0.0) {
        return Err(Error::ZeroArrivalState);
    }
    Ok(())
}

fn check_level(x: f64) -> Result<()> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::DomainError(format!("threshold x = {x} must be finite and >= 0")));
    }
    Ok(())
}

/// Start-up delay LST matrix `U_ij(x, w)`.
pub fn startup_transform(model: &FluidModel, x: f64, omega: C64) -> Result<DMatrix<C64>> {
    require_positive_arrivals(model)?;
    check_level(x)?;
    Passage::new(model, x, RateMode::Prefetch).transform(omega)
}

/// `U_ij(x, t) = P(T_x <= t, ends in j | starts in i)`.
pub fn startup_delay_cdf(model: &FluidModel, x: f64, t: f64, p: &InversionParams) -> Result<DMatrix<f64>> {
    require_positive_arrivals(model)?;
    check_level(x)?;
    Passage::new(model, x, RateMode::Prefetch).cdf(t, p)
}

/// `P(T_x <= t)` for a prefetch whose initial state is drawn from `entry`.
pub fn session_startup_cdf(
    model: &FluidModel,
    x: f64,
    t: f64,
    entry: &[f64],
    p: &InversionParams,
) -> Result<f64> {
    check_entry(model, entry)?;
    let u = startup_delay_cdf(model, x, t, p)?;
    Ok(contract(&u, entry).clamp(0.0, 1.0))
}

/// Mean start-up delay in seconds for a prefetch entered with `entry`.
pub fn expected_startup_delay(model: &FluidModel, x: f64, entry: &[f64]) -> Result<f64> {
    require_positive_arrivals(model)?;
    check_level(x)?;
    check_entry(model, entry)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let passage = Passage::new(model, x, RateMode::Prefetch);
    let (d, _, _) = derivative_at_zero(|w| real_transform(&passage, w), derivative_step(model))?;
    Ok((-contract(&d, entry)).max(0.0))
}

/// `entry * M * 1`.
pub(crate) fn contract(m: &DMatrix<f64>, entry: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, e) in entry.iter().enumerate() {
        acc += e * m.row(i).sum();
    }
    acc
}

pub(crate) fn check_entry(model: &FluidModel, entry: &[f64]) -> Result<()> {
    if entry.len() != model.states() {
        return Err(Error::DimensionMismatch(format!(
            "entry distribution has {} entries, model has {} states",
            entry.len(),
            model.states()
        )));
    }
    if entry.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::DomainError("entry distribution must be finite and >= 0".into()));
    }
    let total: f64 = entry.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::DomainError(format!("entry distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// `V(q, x) = exp((x - q) Lambda^-1 Q)`.
///
/// States with `lambda_i = 0` never end a prefetch. They are censored out:
/// the chain watched only while it fills has generator
/// `Q_PP + Q_PZ (-Q_ZZ)^-1 Q_ZP` on the filling states `P`, and a prefetch
/// started in a stalled state first jumps into `P` with probabilities
/// `(-Q_ZZ)^-1 Q_ZP`.
pub fn prefetch_end_distribution(model: &FluidModel, q: f64, x: f64) -> Result<PrefetchEndMatrix> {
    if !(0.0 <= q && q <= x) || !x.is_finite() {
        return Err(Error::DomainError(format!("need 0 <= q <= x, got q = {q}, x = {x}")));
    }
    let l = model.states();
    let y = x - q;
    if y == 0.0 {
        return Ok(PrefetchEndMatrix { q, x, v: DMatrix::identity(l, l) });
    }
    let lambda = model.lambda();
    let filling: Vec<usize> = (0..l).filter(|&i| lambda[i] > 0.0).collect();
    let stalled: Vec<usize> = (0..l).filter(|&i| lambda[i] <= 0.0).collect();
    if filling.is_empty() {
        return Err(Error::ZeroArrivalState);
    }
    let gen = model.generator();
    let sub = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |a, b| gen[(rows[a], cols[b])]);

    let mut q_hat = sub(&filling, &filling);
    let mut jump = DMatrix::zeros(0, filling.len());
    if !stalled.is_empty() {
        let neg_zz = -sub(&stalled, &stalled);
        jump = neg_zz
            .lu()
            .solve(&sub(&stalled, &filling))
            .ok_or_else(|| Error::SingularSystem("stalled-state block of Q is singular".into()))?;
        q_hat += sub(&filling, &stalled) * &jump;
    }
    let mut g = q_hat;
    for (a, &i) in filling.iter().enumerate() {
        g.row_mut(a).scale_mut(y / lambda[i]);
    }
    let vp = g.exp();

    let mut v = DMatrix::zeros(l, l);
    for (a, &i) in filling.iter().enumerate() {
        for (b, &j) in filling.iter().enumerate() {
            v[(i, j)] = vp[(a, b)];
        }
    }
    if !stalled.is_empty() {
        let vz = &jump * &vp;
        for (a, &i) in stalled.iter().enumerate() {
            for (b, &j) in filling.iter().enumerate() {
                v[(i, j)] = vz[(a, b)];
            }
        }
    }
    for i in 0..l {
        let mut row = v.row_mut(i);
        row.iter_mut().for_each(|e| *e = e.clamp(0.0, 1.0));
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    Ok(PrefetchEndMatrix { q, x, v })
}
