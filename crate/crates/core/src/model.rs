//! Markov-modulated fluid model: the background CTMC, its arrival rates and
//! the playout rate of the buffer it feeds.
//!
//! Units are frames and seconds everywhere. A state `i` delivers frames at
//! `lambda[i]` while the generator `Q` drives the state process.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Which rate matrix a pencil uses.
///
/// `Playback` drains the buffer at `mu` while frames arrive (`r_i = lambda_i - mu`).
/// `Prefetch` is the dual fill process, read as depletion of the threshold at
/// `r_i = -lambda_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    Playback,
    Prefetch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidModel {
    q: DMatrix<f64>,
    lambda: Vec<f64>,
    mu: f64,
}

/// Prefetch threshold `x` and file size `z`, both in frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    pub x: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub pi: Vec<f64>,
    pub drift: f64,
    pub stable: bool,
}

impl SessionParams {
    pub fn new(x: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && z.is_finite()) {
            return Err(Error::InvalidSession("x and Z must be finite".into()));
        }
        if x <= 0.0 {
            return Err(Error::InvalidSession(format!("threshold x = {x} must be > 0")));
        }
        if z <= 0.0 {
            return Err(Error::InvalidSession(format!("file size Z = {z} must be > 0")));
        }
        if x > z {
            return Err(Error::InvalidSession(format!(
                "threshold x = {x} exceeds file size Z = {z}"
            )));
        }
        Ok(SessionParams { x, z })
    }

    /// Playback time of the whole file, `Z / mu`.
    pub fn horizon(&self, model: &FluidModel) -> f64 {
        self.z / model.mu()
    }
}

impl FluidModel {
    /// Validates raw generator rows, arrival rates and playout rate.
    pub fn new(q_rows: Vec<Vec<f64>>, lambda: Vec<f64>, mu: f64) -> Result<Self> {
        let l = q_rows.len();
        if l == 0 {
            return Err(Error::DimensionMismatch("Q has no rows".into()));
        }
        if let Some((i, row)) = q_rows.iter().enumerate().find(|(_, r)| r.len() != l) {
            return Err(Error::DimensionMismatch(format!(
                "Q is {l} rows but row {i} has {} entries",
                row.len()
            )));
        }
        if lambda.len() != l {
            return Err(Error::DimensionMismatch(format!(
                "Q has {l} states but lambda has {} entries",
                lambda.len()
            )));
        }
        let q = DMatrix::from_fn(l, l, |i, j| q_rows[i][j]);
        Self::from_matrix(q, lambda, mu)
    }

    pub fn from_matrix(q: DMatrix<f64>, lambda: Vec<f64>, mu: f64) -> Result<Self> {
        let l = q.nrows();
        if q.ncols() != l || l == 0 {
            return Err(Error::DimensionMismatch(format!(
                "Q must be square and non-empty, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if lambda.len() != l {
            return Err(Error::DimensionMismatch(format!(
                "Q has {l} states but lambda has {} entries",
                lambda.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q"));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lambda"));
        }
        if !mu.is_finite() || mu <= 0.0 {
            return Err(Error::NonPositivePlayoutRate(mu));
        }
        for i in 0..l {
            for j in 0..l {
                let v = q[(i, j)];
                if i != j && v < 0.0 {
                    return Err(Error::NegativeOffDiagonal { row: i, col: j, value: v });
                }
            }
            if q[(i, i)] > 0.0 {
                return Err(Error::PositiveDiagonal { row: i, value: q[(i, i)] });
            }
            let sum: f64 = q.row(i).iter().sum();
            if sum.abs() > ROW_SUM_TOL {
                return Err(Error::RowSumViolation { row: i, sum });
            }
        }
        if let Some((state, &value)) = lambda.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeArrivalRate { state, value });
        }
        check_irreducible(&q)?;
        Ok(FluidModel { q, lambda, mu })
    }

    /// Two-state model with `Q = [[-beta, beta], [alpha, -alpha]]` and
    /// arrival rates `(lambda1, lambda2)` in row order.
    pub fn two_state(alpha: f64, beta: f64, lambda1: f64, lambda2: f64, mu: f64) -> Result<Self> {
        Self::new(
            vec![vec![-beta, beta], vec![alpha, -alpha]],
            vec![lambda1, lambda2],
            mu,
        )
    }

    pub fn states(&self) -> usize {
        self.lambda.len()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Same chain and arrivals, different playout rate.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::from_matrix(self.q.clone(), self.lambda.clone(), mu)
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.states()).map(|i| -self.q[(i, i)]).fold(0.0, f64::max)
    }

    /// Stationary vector `pi` with `pi Q = 0`, `sum(pi) = 1`.
    ///
    /// Solves `Q^T pi = 0` with the last equation replaced by the
    /// normalization row.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let l = self.states();
        if l == 1 {
            return Ok(vec![1.0]);
        }
        let mut a = self.q.transpose();
        let mut b = DVector::zeros(l);
        for j in 0..l {
            a[(l - 1, j)] = 1.0;
        }
        b[l - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::SingularSystem("stationary equations are singular".into()))?;
        let mut pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= total);
        Ok(pi)
    }

    pub fn mean_drift(&self) -> Result<DriftReport> {
        let pi = self.stationary_distribution()?;
        let drift = pi.iter().zip(&self.lambda).map(|(p, l)| p * l).sum::<f64>() - self.mu;
        Ok(DriftReport { pi, drift, stable: drift < 0.0 })
    }

    pub fn effective_rates(&self, mode: RateMode) -> Vec<f64> {
        match mode {
            RateMode::Playback => self.lambda.iter().map(|l| l - self.mu).collect(),
            RateMode::Prefetch => self.lambda.iter().map(|l| -l).collect(),
        }
    }

    /// States whose effective rate vanishes; they lower the degree of the
    /// characteristic polynomial.
    pub fn zero_rate_states(&self, mode: RateMode) -> Vec<usize> {
        let scale = self.rate_scale();
        self.effective_rates(mode)
            .iter()
            .enumerate()
            .filter(|(_, r)| r.abs() <= ZERO_RATE_REL * scale)
            .map(|(i, _)| i)
            .collect()
    }

    pub(crate) fn rate_scale(&self) -> f64 {
        self.lambda.iter().copied().fold(self.mu, f64::max)
    }
}

/// Rates below this fraction of `max(mu, lambda)` count as zero.
pub(crate) const ZERO_RATE_REL: f64 = 1e-12;

fn check_irreducible(q: &DMatrix<f64>) -> Result<()> {
    let l = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; l];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..l {
                let rate = if forward { q[(i, j)] } else { q[(j, i)] };
                if i != j && rate > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let back = reach(false);
    match (0..l).find(|&i| !(fwd[i] && back[i])) {
        Some(unreachable) => Err(Error::Reducible { unreachable }),
        None => Ok(()),
    }
}
