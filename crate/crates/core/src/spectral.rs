//! Spectral solution of `R dH/dx = (wI - Q) H`.
//!
//! For a fixed complex frequency `w` the bounded solutions are sums of
//! `exp(s_k x) phi^k` over roots `s_k` of `det(Q + sR - wI) = 0` with
//! `Re(s_k) < 0`. The roots are the finite generalized eigenvalues of the
//! pencil `(wI - Q, R)`. Zero-rate states are eliminated first with a Schur
//! complement, which leaves an ordinary eigenproblem of size equal to the
//! number of non-zero rates. The infinite eigenvalues never appear.
//!
//! Boundary conditions sit at `x = 0`: a state with `r_i < 0` starves (or, in
//! prefetch mode, reaches the threshold) immediately, so `H_ij(0, w) = 1{i=j}`
//! over those rows. States with `r_j >= 0` can never be terminal for `x > 0`
//! and their columns vanish.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FluidModel, RateMode};

pub type C64 = Complex64;

/// Roots in `|Re s| <= NEGATIVE_BAND` are numerically marginal.
pub const NEGATIVE_BAND: f64 = 1e-12;
const ILL_CONDITIONED: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum SpectralWarning {
    /// A root whose real part lies inside the marginal band.
    BoundaryRoot { index: usize, re: f64 },
    /// The boundary system has condition number above `1e12`.
    IllConditioned { condition: f64 },
}

#[derive(Debug, Clone)]
pub struct SpectralSolution {
    pub omega: C64,
    pub mode: RateMode,
    pub rates: Vec<f64>,
    /// Roots sorted by real part, then imaginary part.
    pub roots: Vec<C64>,
    /// `eigvecs[k]` pairs with `roots[k]`; unit max-magnitude entry, made real positive.
    pub eigvecs: Vec<DVector<C64>>,
    /// Indices into `roots` with `Re < -NEGATIVE_BAND`.
    pub negative_set: Vec<usize>,
    pub warnings: Vec<SpectralWarning>,
}

impl SpectralSolution {
    /// States carrying a boundary condition at `x = 0` (`r_i < 0`).
    pub fn boundary_rows(&self) -> Vec<usize> {
        let scale = self.rates.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        self.rates
            .iter()
            .enumerate()
            .filter(|(_, r)| **r < -crate::model::ZERO_RATE_REL * scale)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryCoefficients {
    pub target: usize,
    /// Root indices the coefficients multiply.
    pub roots: Vec<usize>,
    /// `a[k]` multiplies `exp(s_{roots[k]} x) phi^{roots[k]}`.
    pub a: Vec<C64>,
    pub condition: f64,
    pub ill_conditioned: bool,
}

pub fn characteristic_roots(model: &FluidModel, omega: C64, mode: RateMode) -> Result<SpectralSolution> {
    if !(omega.re.is_finite() && omega.im.is_finite()) || omega.re < 0.0 {
        return Err(Error::DomainError(format!("frequency {omega} must have Re >= 0")));
    }
    let l = model.states();
    let rates = model.effective_rates(mode);
    let zero = model.zero_rate_states(mode);
    let nonzero: Vec<usize> = (0..l).filter(|i| !zero.contains(i)).collect();

    // M = wI - Q, so that the pencil reads s R phi = M phi.
    let m = DMatrix::from_fn(l, l, |i, j| {
        let q = C64::new(-model.generator()[(i, j)], 0.0);
        if i == j {
            q + omega
        } else {
            q
        }
    });
    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
    };

    // Zero-rate rows are algebraic: phi_z = -M_zz^{-1} M_zn phi_n.
    let elim = if zero.is_empty() {
        None
    } else {
        let mzz = sub(&zero, &zero);
        let mzn = sub(&zero, &nonzero);
        let lu = mzz.lu();
        let x = lu
            .solve(&mzn)
            .filter(|x| x.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
            .ok_or_else(|| Error::DegenerateRank(format!("{omega}")))?;
        Some(-x)
    };

    let p = nonzero.len();
    if p == 0 {
        let full = sub(&zero, &zero);
        if full.lu().determinant().norm() == 0.0 {
            return Err(Error::DegenerateRank(format!("{omega}")));
        }
        return Ok(SpectralSolution {
            omega,
            mode,
            rates,
            roots: vec![],
            eigvecs: vec![],
            negative_set: vec![],
            warnings: vec![],
        });
    }

    let mut schur = sub(&nonzero, &nonzero);
    if let Some(ref phi_z) = elim {
        schur += sub(&nonzero, &zero) * phi_z;
    }
    // A = R_n^{-1} S
    let a = DMatrix::from_fn(p, p, |i, j| schur[(i, j)] / rates[nonzero[i]]);
    let eig = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .and_then(|s| s.eigenvalues())
        .ok_or_else(|| Error::NonConvergence(format!("Schur iteration failed at w = {omega}")))?;

    let mut pairs: Vec<(C64, DVector<C64>)> = eig
        .iter()
        .map(|&s| {
            let shifted = &a - DMatrix::<C64>::identity(p, p) * s;
            let phi_n = null_vector(&shifted);
            let mut phi = DVector::from_element(l, C64::new(0.0, 0.0));
            for (k, &i) in nonzero.iter().enumerate() {
                phi[i] = phi_n[k];
            }
            if let Some(ref e) = elim {
                let phi_z = e * &phi_n;
                for (k, &i) in zero.iter().enumerate() {
                    phi[i] = phi_z[k];
                }
            }
            (s, normalize(phi))
        })
        .collect();
    pairs.sort_by(|x, y| {
        x.0.re
            .total_cmp(&y.0.re)
            .then_with(|| x.0.im.total_cmp(&y.0.im))
    });

    for k in 0..pairs.len() {
        for j in k + 1..pairs.len() {
            let (sk, vk) = (&pairs[k].0, &pairs[k].1);
            let (sj, vj) = (&pairs[j].0, &pairs[j].1);
            if (sk - sj).norm() <= 1e-8 * sk.norm().max(1.0) {
                let overlap = vk.dotc(vj).norm() / (vk.norm() * vj.norm());
                if overlap > 1.0 - 1e-6 {
                    return Err(Error::DefectivePencil(k, j));
                }
            }
        }
    }

    let mut negative_set = Vec::new();
    let mut warnings = Vec::new();
    for (k, (s, _)) in pairs.iter().enumerate() {
        if s.re < -NEGATIVE_BAND {
            negative_set.push(k);
        } else if s.re.abs() <= NEGATIVE_BAND {
            warnings.push(SpectralWarning::BoundaryRoot { index: k, re: s.re });
        }
    }
    let (roots, eigvecs) = pairs.into_iter().unzip();
    Ok(SpectralSolution { omega, mode, rates, roots, eigvecs, negative_set, warnings })
}

fn null_vector(m: &DMatrix<C64>) -> DVector<C64> {
    let n = m.ncols();
    if n == 1 {
        return DVector::from_element(1, C64::new(1.0, 0.0));
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    DVector::from_iterator(n, v_t.row(k).iter().map(|v| v.conj()))
}

fn normalize(mut phi: DVector<C64>) -> DVector<C64> {
    let pivot = phi
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(_, v)| v)
        .unwrap_or(C64::new(1.0, 0.0));
    if pivot.norm() > 0.0 {
        phi /= pivot;
    }
    phi
}

fn boundary_system(sol: &SpectralSolution) -> Result<(Vec<usize>, DMatrix<C64>)> {
    let rows = sol.boundary_rows();
    if rows.len() != sol.negative_set.len() {
        return Err(Error::RootCountMismatch { roots: sol.negative_set.len(), rows: rows.len() });
    }
    let b = DMatrix::from_fn(rows.len(), rows.len(), |i, k| sol.eigvecs[sol.negative_set[k]][rows[i]]);
    Ok((rows, b))
}

fn condition_number(b: &DMatrix<C64>) -> f64 {
    if b.is_empty() {
        return 1.0;
    }
    let sv = b.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Coefficients `a_kj` with `sum_k a_kj phi_i^k = 1{i=j}` over the boundary rows.
///
/// A target state with `r_j >= 0` is never terminal and gets an empty
/// coefficient list.
pub fn boundary_coefficients(sol: &SpectralSolution, target: usize) -> Result<BoundaryCoefficients> {
    if target >= sol.rates.len() {
        return Err(Error::DimensionMismatch(format!("target state {target} out of range")));
    }
    let (rows, b) = boundary_system(sol)?;
    let Some(pos) = rows.iter().position(|&r| r == target) else {
        return Ok(BoundaryCoefficients {
            target,
            roots: vec![],
            a: vec![],
            condition: 1.0,
            ill_conditioned: false,
        });
    };
    let mut rhs = DVector::from_element(rows.len(), C64::new(0.0, 0.0));
    rhs[pos] = C64::new(1.0, 0.0);
    let condition = condition_number(&b);
    let a = b
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("boundary system is singular".into()))?;
    Ok(BoundaryCoefficients {
        target,
        roots: sol.negative_set.clone(),
        a: a.iter().copied().collect(),
        condition,
        ill_conditioned: condition > ILL_CONDITIONED,
    })
}

/// The full `L x L` transform matrix at level `x` from an existing solution.
pub fn assemble(sol: &SpectralSolution, x: f64) -> Result<DMatrix<C64>> {
    assemble_shifted(sol, x, 0.0)
}

/// `exp(w shift)` times the transform matrix, with the factor folded into
/// each exponential so that neither part overflows on its own.
pub(crate) fn assemble_shifted(sol: &SpectralSolution, x: f64, shift: f64) -> Result<DMatrix<C64>> {
    let l = sol.rates.len();
    let (rows, b) = boundary_system(sol)?;
    let mut out = DMatrix::from_element(l, l, C64::new(0.0, 0.0));
    if rows.is_empty() {
        return Ok(out);
    }
    let coeffs = b
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("boundary system is singular".into()))?;
    let decay: Vec<C64> = sol
        .negative_set
        .iter()
        .map(|&k| (sol.roots[k] * x + sol.omega * shift).exp())
        .collect();
    for i in 0..l {
        for (c, &j) in rows.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (k, &root) in sol.negative_set.iter().enumerate() {
                acc += sol.eigvecs[root][i] * decay[k] * coeffs[(k, c)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Transform matrix `T_ij(x, w)`: the starvation LST in playback mode, the
/// start-up delay LST in prefetch mode.
pub fn transform_matrix(model: &FluidModel, x: f64, omega: C64, mode: RateMode) -> Result<DMatrix<C64>> {
    if !(x >= 0.0) {
        return Err(Error::DomainError(format!("level x = {x} must be >= 0")));
    }
    let sol = characteristic_roots(model, omega, mode)?;
    assemble(&sol, x)
}

/// Parameters of the two-state source, `Q = [[-beta, beta], [alpha, -alpha]]`
/// with arrival rate `lambda1` in the first state and `lambda2` in the second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStateParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Starvation,
    Startup,
}

impl TransformKind {
    pub fn mode(self) -> RateMode {
        match self {
            TransformKind::Starvation => RateMode::Playback,
            TransformKind::Startup => RateMode::Prefetch,
        }
    }
}

impl TwoStateParams {
    pub fn model(&self) -> Result<FluidModel> {
        FluidModel::two_state(self.alpha, self.beta, self.lambda1, self.lambda2, self.mu)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::DomainError("alpha and beta must be > 0".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::NonPositivePlayoutRate(self.mu));
        }
        Ok(())
    }

    pub fn rates(&self, mode: RateMode) -> [f64; 2] {
        match mode {
            RateMode::Playback => [self.lambda1 - self.mu, self.lambda2 - self.mu],
            RateMode::Prefetch => [-self.lambda1, -self.lambda2],
        }
    }

    /// Roots `(s1, s2)` of
    /// `r1 r2 s^2 - [r1 (w + alpha) + r2 (w + beta)] s + w (w + alpha + beta)`,
    /// with `s1` on the `+sqrt` branch. A single zero rate leaves one root.
    pub fn roots(&self, omega: C64, mode: RateMode) -> Vec<C64> {
        let [r1, r2] = self.rates(mode);
        let a = C64::new(r1 * r2, 0.0);
        let b = (omega + self.alpha) * r1 + (omega + self.beta) * r2;
        let c = omega * (omega + self.alpha + self.beta);
        match (r1 == 0.0, r2 == 0.0) {
            (true, true) => vec![],
            (true, false) | (false, true) => vec![c / b],
            (false, false) => {
                let sq = (b * b - a * c * 4.0).sqrt();
                let (plus, minus) = (b + sq, b - sq);
                if plus.norm() >= minus.norm() {
                    vec![plus / (a * 2.0), c * 2.0 / plus]
                } else {
                    vec![c * 2.0 / minus, minus / (a * 2.0)]
                }
            }
        }
    }

    /// Second eigenvector entry for `phi = [1, (beta + w - r1 s) / beta]`.
    fn phi2(&self, omega: C64, r1: f64, s: C64) -> C64 {
        (omega + self.beta - s * r1) / self.beta
    }
}

/// Closed-form transform for the two-state source.
///
/// Cases follow the sign pattern of the effective rates: no negative rate
/// (no terminal state), one negative rate (one decaying root, `a = 1` after
/// scaling the eigenvector to 1 on the terminal state), two negative rates
/// (both roots, explicit 2x2 coefficients).
pub fn two_state_transform(p: &TwoStateParams, x: f64, omega: C64, kind: TransformKind) -> Result<DMatrix<C64>> {
    p.validate()?;
    if !(x >= 0.0) {
        return Err(Error::DomainError(format!("level x = {x} must be >= 0")));
    }
    if !(omega.re > 0.0) {
        return Err(Error::DomainError(format!("frequency {omega} must have Re > 0")));
    }
    let mode = kind.mode();
    let [r1, r2] = p.rates(mode);
    let zero = C64::new(0.0, 0.0);
    let mut h = DMatrix::from_element(2, 2, zero);
    let roots = p.roots(omega, mode);
    let negative: Vec<C64> = roots.iter().copied().filter(|s| s.re < 0.0).collect();

    match (r1 < 0.0, r2 < 0.0) {
        (false, false) => {}
        (true, false) | (false, true) => {
            let j = if r1 < 0.0 { 0 } else { 1 };
            let s = *negative
                .first()
                .ok_or(Error::RootCountMismatch { roots: 0, rows: 1 })?;
            let phi = [C64::new(1.0, 0.0), p.phi2(omega, r1, s)];
            let e = (s * x).exp();
            h[(0, j)] = e * phi[0] / phi[j];
            h[(1, j)] = e * phi[1] / phi[j];
        }
        (true, true) => {
            let (s1, s2) = (roots[0], roots[1]);
            let (e1, e2) = ((s1 * x).exp(), (s2 * x).exp());
            let (f1, f2) = (p.phi2(omega, r1, s1), p.phi2(omega, r1, s2));
            let bw = omega + p.beta;
            // terminal state 1
            let a1 = (bw - s2 * r1) / ((s1 - s2) * r1);
            let a2 = (bw - s1 * r1) / ((s2 - s1) * r1);
            h[(0, 0)] = a1 * e1 + a2 * e2;
            h[(1, 0)] = a1 * e1 * f1 + a2 * e2 * f2;
            // terminal state 2
            let b1 = C64::new(p.beta, 0.0) / ((s2 - s1) * r1);
            let b2 = C64::new(p.beta, 0.0) / ((s1 - s2) * r1);
            h[(0, 1)] = b1 * e1 + b2 * e2;
            h[(1, 1)] = b1 * e1 * f1 + b2 * e2 * f2;
        }
    }
    Ok(h)
}
