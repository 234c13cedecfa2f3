//! First-passage distributions shared by the starvation and start-up analyses.
//!
//! Both are hitting times of level 0 by a fluid level that starts at `x` and
//! moves at rate `r_i` in state `i`. If the chain never leaves a state with
//! `r_i < 0`, the level hits 0 at exactly `x / |r_i|`, so the distribution has
//! an atom there with mass `exp(q_ii x / |r_i|)`. These atoms are removed from
//! the transform before numerical inversion and added back exactly; what is
//! left has a continuous CDF, which the Euler inversion handles well.
//!
//! When every rate is negative the level only falls, so the passage ends by
//! `x / min |r_i|` and the end-state distribution is `exp(x |R|^-1 Q)`. Past
//! that time the CDF is returned exactly; nearly equal rates would otherwise
//! leave a near point mass for the inversion.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::Result;
use crate::inversion::{invert_many, CdfValue, InversionParams};
use crate::model::{FluidModel, RateMode, ZERO_RATE_REL};
use crate::spectral::{assemble_shifted, characteristic_roots, transform_matrix, C64};

/// Below `t0 (1 + MIN_OFFSET)` the inversion frequencies grow too large to
/// resolve the continuous part, which starts out linear there anyway.
const MIN_OFFSET: f64 = 1e-4;

/// A point mass of the passage time on the diagonal entry `(state, state)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub state: usize,
    pub time: f64,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct Passage<'a> {
    model: &'a FluidModel,
    x: f64,
    mode: RateMode,
    terminal: Vec<usize>,
    atoms: Vec<Atom>,
    support_start: f64,
    support_end: f64,
    limit: Option<DMatrix<f64>>,
}

impl<'a> Passage<'a> {
    pub fn new(model: &'a FluidModel, x: f64, mode: RateMode) -> Self {
        let rates = model.effective_rates(mode);
        let scale = rates.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let terminal: Vec<usize> = (0..rates.len())
            .filter(|&i| rates[i] < -ZERO_RATE_REL * scale)
            .collect();
        let q = model.generator();
        let atoms = terminal
            .iter()
            .map(|&i| {
                let time = x / -rates[i];
                Atom { state: i, time, mass: (q[(i, i)] * time).exp() }
            })
            .collect();
        let fastest = terminal.iter().fold(0.0f64, |m, &i| m.max(-rates[i]));
        let support_start = if fastest > 0.0 { x / fastest } else { f64::INFINITY };
        let (support_end, limit) = if !terminal.is_empty() && terminal.len() == rates.len() {
            let slowest = terminal.iter().fold(f64::INFINITY, |m, &i| m.min(-rates[i]));
            let mut a = q.clone();
            for i in 0..rates.len() {
                a.row_mut(i).scale_mut(x / -rates[i]);
            }
            (x / slowest, Some(a.exp()))
        } else {
            (f64::INFINITY, None)
        };
        Passage { model, x, mode, terminal, atoms, support_start, support_end, limit }
    }

    pub fn state_count(&self) -> usize {
        self.model.states()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// No passage can complete before this time.
    pub fn support_start(&self) -> f64 {
        self.support_start
    }

    /// Every passage has completed by this time; infinite unless all rates are negative.
    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    /// States in which the passage can end.
    pub fn terminal_states(&self) -> &[usize] {
        &self.terminal
    }

    pub fn transform(&self, omega: C64) -> Result<DMatrix<C64>> {
        transform_matrix(self.model, self.x, omega, self.mode)
    }

    /// The transform with the atoms taken out.
    pub fn continuous_transform(&self, omega: C64) -> Result<DMatrix<C64>> {
        self.shifted_continuous_transform(omega, 0.0)
    }

    /// `exp(w shift)` times the continuous transform: the transform of the
    /// continuous part moved `shift` earlier in time.
    fn shifted_continuous_transform(&self, omega: C64, shift: f64) -> Result<DMatrix<C64>> {
        let sol = characteristic_roots(self.model, omega, self.mode)?;
        let mut h = assemble_shifted(&sol, self.x, shift)?;
        for a in &self.atoms {
            h[(a.state, a.state)] -= a.mass * (-omega * (a.time - shift)).exp();
        }
        Ok(h)
    }

    /// Atom mass at or before `t`, as a matrix.
    fn atom_cdf(&self, t: f64) -> DMatrix<f64> {
        let l = self.model.states();
        let mut out = DMatrix::zeros(l, l);
        for a in &self.atoms {
            if a.time <= t {
                out[(a.state, a.state)] += a.mass;
            }
        }
        out
    }

    fn invert_terminal_columns<F>(&self, t: f64, p: &InversionParams, f: F) -> Result<DMatrix<f64>>
    where
        F: Fn(C64, C64) -> C64,
    {
        let l = self.model.states();
        let cols = &self.terminal;
        let width = l * cols.len();
        // Inverting in s = t - t0 puts the density jump at the start of the
        // support onto the origin.
        let shift = self.support_start;
        if t <= shift {
            return Ok(DMatrix::zeros(l, l));
        }
        let raw = invert_many(
            |w, out| {
                let h = self.shifted_continuous_transform(w, shift)?;
                for (c, &j) in cols.iter().enumerate() {
                    for i in 0..l {
                        out[c * l + i] = f(h[(i, j)], w);
                    }
                }
                Ok(())
            },
            width,
            t - shift,
            p,
        )?;
        let mut out = DMatrix::zeros(l, l);
        for (c, &j) in cols.iter().enumerate() {
            for i in 0..l {
                out[(i, j)] = raw[c * l + i];
            }
        }
        Ok(out)
    }

    /// `P(T <= t, ends in j | starts in i)`, entries clamped into `[0, 1]`.
    pub fn cdf(&self, t: f64, p: &InversionParams) -> Result<DMatrix<f64>> {
        let l = self.model.states();
        if t < self.support_start || self.terminal.is_empty() {
            return Ok(DMatrix::zeros(l, l));
        }
        if let Some(limit) = self.limit.as_ref().filter(|_| t >= self.support_end) {
            return Ok(limit.map(|v| v.clamp(0.0, 1.0)));
        }
        let floor = self.support_start * (1.0 + MIN_OFFSET);
        let cont = if t < floor {
            let at_floor = self.invert_terminal_columns(floor, p, |h, w| h / w)?;
            at_floor * ((t - self.support_start) / (floor - self.support_start))
        } else {
            self.invert_terminal_columns(t, p, |h, w| h / w)?
        };
        let mut out = cont + self.atom_cdf(t);
        for v in out.iter_mut() {
            *v = CdfValue::from_raw(*v, t)?.value;
        }
        Ok(out)
    }

    /// Density of the continuous part at `t`; zero before the support starts.
    pub fn density(&self, t: f64, p: &InversionParams) -> Result<DMatrix<f64>> {
        let l = self.model.states();
        if t < self.support_start || t > self.support_end || self.terminal.is_empty() {
            return Ok(DMatrix::zeros(l, l));
        }
        let floor = self.support_start * (1.0 + MIN_OFFSET);
        let mut out = self.invert_terminal_columns(t.max(floor), p, |h, _| h)?;
        for v in out.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(out)
    }
}

/// Derivative at `w = 0+` of a real matrix function, from two forward
/// difference pairs and a linear extrapolation. Returns `(value, coarse, fine)`
/// where `coarse` and `fine` are the unextrapolated estimates at step `eps`
/// and `eps / 2`.
pub(crate) fn derivative_at_zero<F>(f: F, eps: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>
where
    F: Fn(f64) -> Result<DMatrix<f64>>,
{
    let coarse = (f(3.0 * eps)? - f(eps)?) / (2.0 * eps);
    let fine = (f(1.5 * eps)? - f(0.5 * eps)?) / eps;
    let value = &fine * 2.0 - &coarse;
    Ok((value, coarse, fine))
}

pub(crate) fn derivative_step(model: &FluidModel) -> f64 {
    1e-6 * model.max_exit_rate().max(1.0)
}

pub(crate) fn real_transform(passage: &Passage, omega: f64) -> Result<DMatrix<f64>> {
    Ok(passage.transform(C64::new(omega, 0.0))?.map(|v| v.re))
}
