//! Distribution of the number of starvations in a session.
//!
//! A session with `j` starvations is a first playback period that starves at
//! `t_1`, `j - 1` further periods each started from a fresh prefetch of `x`
//! frames, and a last period that reaches the end of the file. Playback time
//! stops during prefetch, so every period starts its own clock and the
//! continuation kernel depends on `t_{l+1} - t_l` only.
//!
//! Densities are discretized as cell masses on a uniform grid whose step
//! divides `x / mu`: the mass of node `k` is `G((k + 1/2) s) - G((k - 1/2) s)`
//! with `G` the starvation CDF. Cell masses keep the point masses of the
//! starvation time intact, which a pointwise density would lose. The chain
//! `f_{l+1} = f_l * K` is causal, so one chain serves every file size up to
//! the grid horizon.

use nalgebra::{DMatrix, RowDVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inversion::InversionParams;
use crate::model::{FluidModel, RateMode, SessionParams};
use crate::passage::Passage;
use crate::startup::prefetch_end_distribution;
use crate::util::{par_map, CompensatedSum};

/// Default number of grid steps per prefetch quantum `x / mu`.
pub const DEFAULT_POINTS_PER_PREFETCH: usize = 16;
const MIN_POINTS_PER_PREFETCH: usize = 8;
const TAIL_LIMIT: f64 = 0.05;
const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathGrid {
    pub step: f64,
    pub n_t: usize,
}

impl PathGrid {
    /// Grid with `points` steps per `x / mu`, long enough for `Z / mu`.
    pub fn aligned(model: &FluidModel, params: &SessionParams, points: usize) -> Result<Self> {
        if points < MIN_POINTS_PER_PREFETCH {
            return Err(Error::GridTooCoarse(format!(
                "{points} points per prefetch quantum, need at least {MIN_POINTS_PER_PREFETCH}"
            )));
        }
        let step = params.x / model.mu() / points as f64;
        let n_t = (params.horizon(model) / step - ALIGN_TOL).ceil() as usize + 1;
        Ok(PathGrid { step, n_t })
    }

    /// Steps per prefetch quantum.
    pub fn points_per_prefetch(&self, model: &FluidModel, params: &SessionParams) -> Result<usize> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidGrid(format!("step {} must be positive", self.step)));
        }
        let ratio = params.x / model.mu() / self.step;
        let k = ratio.round();
        if (ratio - k).abs() > ALIGN_TOL * ratio.max(1.0) {
            return Err(Error::InvalidGrid(format!("step {} does not divide x/mu = {}", self.step, params.x / model.mu())));
        }
        if k < MIN_POINTS_PER_PREFETCH as f64 {
            return Err(Error::GridTooCoarse(format!(
                "x/mu is resolved by {k} steps, need at least {MIN_POINTS_PER_PREFETCH}"
            )));
        }
        if (self.step * self.n_t as f64) < params.horizon(model) * (1.0 - ALIGN_TOL) {
            return Err(Error::InvalidGrid(format!(
                "grid covers {} s, the file lasts {} s",
                self.step * self.n_t as f64,
                params.horizon(model)
            )));
        }
        Ok(k as usize)
    }
}

/// `p[j] = P(j starvations)` for `j = 0..=J`; `tail = P(more than J)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StarvationPmf {
    pub p: Vec<f64>,
    pub tail: f64,
}

impl StarvationPmf {
    pub fn total(&self) -> f64 {
        self.p.iter().sum::<f64>() + self.tail
    }

    /// `sum j p_j` with the tail counted at `J + 1`.
    pub fn expected_count(&self) -> f64 {
        let j = self.p.len() as f64;
        self.p.iter().enumerate().map(|(k, v)| k as f64 * v).sum::<f64>() + j * self.tail
    }
}

/// Density of the first starvation at playback time `t` (continuous part,
/// summed over starvation states); zero outside `x <= mu t < Z`.
pub fn first_starvation_density(model: &FluidModel, params: &SessionParams, t: f64, p: &InversionParams) -> Result<f64> {
    let mu = model.mu();
    if !(mu * t >= params.x && mu * t < params.z) {
        return Ok(0.0);
    }
    let psi = entry_after_prefetch(model, params.x)?;
    let h = Passage::new(model, params.x, RateMode::Playback).density(t, p)?;
    Ok((psi * h).sum())
}

/// Probability, per state of the `j`-th starvation at time `t`, that no
/// further starvation happens before the file ends.
pub fn terminal_probability(
    model: &FluidModel,
    params: &SessionParams,
    t: f64,
    j: usize,
    p: &InversionParams,
) -> Result<Vec<f64>> {
    let l = model.states();
    let mu = model.mu();
    if mu * t < j as f64 * params.x || mu * t >= params.z {
        return Ok(vec![0.0; l]);
    }
    if params.z - mu * t <= params.x {
        return Ok(vec![1.0; l]);
    }
    let v = prefetch_end_distribution(model, 0.0, params.x)?.v;
    let g = Passage::new(model, params.x, RateMode::Playback).cdf(params.horizon(model) - t, p)?;
    Ok(survival(&v, &g))
}

/// Transition density from the `l`-th starvation at `t_l` to the next one at
/// `t_next` in a session with `j` starvations, as an `L x L` state matrix
/// (continuous part).
#[allow(clippy::too_many_arguments)]
pub fn continuation_kernel(
    model: &FluidModel,
    params: &SessionParams,
    t_l: f64,
    t_next: f64,
    l: usize,
    j: usize,
    p: &InversionParams,
) -> Result<DMatrix<f64>> {
    let n = model.states();
    let mu = model.mu();
    let x = params.x;
    let upper = params.z - (j as f64 - l as f64 - 1.0) * x;
    if mu * t_l < l as f64 * x || mu * t_l + x > mu * t_next || mu * t_next >= upper {
        return Ok(DMatrix::zeros(n, n));
    }
    let v = prefetch_end_distribution(model, 0.0, x)?.v;
    let h = Passage::new(model, x, RateMode::Playback).density(t_next - t_l, p)?;
    Ok(v * h)
}

/// Starvation-count distribution of one session.
pub fn starvation_count_pmf(
    model: &FluidModel,
    params: &SessionParams,
    jmax: usize,
    grid: &PathGrid,
    p: &InversionParams,
) -> Result<StarvationPmf> {
    if jmax < 1 {
        return Err(Error::DomainError("jmax must be >= 1".into()));
    }
    let points = grid.points_per_prefetch(model, params)?;
    let mut chain = Chain::new(model, params.x, grid.step, points, grid.n_t, p)?;
    let pmf = chain.pmf(params.z, jmax)?;
    if pmf.tail > TAIL_LIMIT {
        return Err(Error::TailTooLarge { tail: pmf.tail, jmax });
    }
    Ok(pmf)
}

/// [`starvation_count_pmf`] for several file sizes sharing one chain. The
/// tail is reported but not checked.
pub fn starvation_count_pmf_sweep(
    model: &FluidModel,
    x: f64,
    z_values: &[f64],
    jmax: usize,
    points: usize,
    p: &InversionParams,
) -> Result<Vec<StarvationPmf>> {
    if jmax < 1 {
        return Err(Error::DomainError("jmax must be >= 1".into()));
    }
    let mut chain = Chain::for_sweep(model, x, z_values, points, p)?;
    z_values.iter().map(|&z| chain.pmf(z, jmax)).collect()
}

/// Expected number of starvations, summing `P(N >= l)` until the chain dies out.
pub fn expected_starvation_counts(
    model: &FluidModel,
    x: f64,
    z_values: &[f64],
    points: usize,
    p: &InversionParams,
) -> Result<Vec<f64>> {
    let mut chain = Chain::for_sweep(model, x, z_values, points, p)?;
    z_values.iter().map(|&z| chain.expected_count(z)).collect()
}

fn entry_after_prefetch(model: &FluidModel, x: f64) -> Result<RowDVector<f64>> {
    let pi = model.stationary_distribution()?;
    let v = prefetch_end_distribution(model, 0.0, x)?.v;
    Ok(RowDVector::from_vec(pi) * v)
}

/// `V (1 - G 1)`: chance of surviving a fresh playback period, per state.
fn survival(v: &DMatrix<f64>, g: &DMatrix<f64>) -> Vec<f64> {
    let n = v.nrows();
    let miss: Vec<f64> = (0..n).map(|i| (1.0 - g.row(i).sum()).clamp(0.0, 1.0)).collect();
    (0..n).map(|a| (0..n).map(|b| v[(a, b)] * miss[b]).sum()).collect()
}

struct Chain<'a> {
    model: &'a FluidModel,
    passage: Passage<'a>,
    params: InversionParams,
    x: f64,
    step: f64,
    n: usize,
    v: DMatrix<f64>,
    psi0: RowDVector<f64>,
    /// `G((k + 1/2) s)` for `k = 0..n`.
    bounds: Vec<DMatrix<f64>>,
    /// `V * cell(k)`, row-major, one `L x L` block per node.
    kernel_flat: Vec<f64>,
    first_kernel: usize,
    /// `levels[l - 1][k]`: untruncated mass of the `l`-th starvation at node `k`.
    levels: Vec<Vec<RowDVector<f64>>>,
    /// `G(k s)`, filled on demand.
    nodes: Option<Vec<DMatrix<f64>>>,
}

impl<'a> Chain<'a> {
    fn for_sweep(model: &'a FluidModel, x: f64, z_values: &[f64], points: usize, p: &InversionParams) -> Result<Self> {
        if z_values.is_empty() {
            return Err(Error::InvalidGrid("empty file-size grid".into()));
        }
        let zmax = z_values.iter().copied().fold(f64::NAN, f64::max);
        for &z in z_values {
            SessionParams::new(x, z)?;
        }
        let params = SessionParams::new(x, zmax)?;
        let grid = PathGrid::aligned(model, &params, points)?;
        Chain::new(model, x, grid.step, points, grid.n_t, p)
    }

    fn new(model: &'a FluidModel, x: f64, step: f64, points: usize, n_t: usize, p: &InversionParams) -> Result<Self> {
        p.validate()?;
        let passage = Passage::new(model, x, RateMode::Playback);
        let v = prefetch_end_distribution(model, 0.0, x)?.v;
        let psi0 = entry_after_prefetch(model, x)?;
        let n = n_t + 1;
        let times: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * step).collect();
        let bounds = par_map(&times, |&t| passage.cdf(t, p)).into_iter().collect::<Result<Vec<_>>>()?;
        let kernel: Vec<DMatrix<f64>> = (0..n).map(|k| &v * cell(&bounds, k)).collect();
        let first_kernel = kernel.iter().position(|m| m.iter().any(|e| *e > 0.0)).unwrap_or(n).max(points);
        let kernel_flat = kernel.iter().flat_map(|m| m.transpose().iter().copied().collect::<Vec<_>>()).collect();
        Ok(Chain {
            model,
            passage,
            params: *p,
            x,
            step,
            n,
            v,
            psi0,
            bounds,
            kernel_flat,
            first_kernel,
            levels: Vec::new(),
            nodes: None,
        })
    }

    fn level(&mut self, l: usize) -> &[RowDVector<f64>] {
        while self.levels.len() < l {
            let next = match self.levels.last() {
                None => (0..self.n).map(|k| &self.psi0 * cell(&self.bounds, k)).collect(),
                Some(prev) => {
                    let states = self.model.states();
                    let flat: Vec<f64> = prev.iter().flat_map(|r| r.iter().copied()).collect();
                    let mut out = vec![0.0; self.n * states];
                    for u in 0..self.n {
                        let src = &flat[u * states..(u + 1) * states];
                        if src.iter().all(|e| *e == 0.0) {
                            continue;
                        }
                        for k in (u + self.first_kernel)..self.n {
                            let ker = &self.kernel_flat[(k - u) * states * states..(k - u + 1) * states * states];
                            let dst = &mut out[k * states..(k + 1) * states];
                            for (a, &pa) in src.iter().enumerate() {
                                if pa == 0.0 {
                                    continue;
                                }
                                for (b, d) in dst.iter_mut().enumerate() {
                                    *d += pa * ker[a * states + b];
                                }
                            }
                        }
                    }
                    out.chunks(states).map(RowDVector::from_row_slice).collect()
                }
            };
            self.levels.push(next);
        }
        &self.levels[l - 1]
    }

    fn node_cdf(&mut self) -> Result<&Vec<DMatrix<f64>>> {
        if self.nodes.is_none() {
            let times: Vec<usize> = (0..self.n).collect();
            let step = self.step;
            let passage = &self.passage;
            let p = &self.params;
            let table = par_map(&times, |&k| {
                if k == 0 {
                    let l = passage.state_count();
                    Ok(DMatrix::zeros(l, l))
                } else {
                    passage.cdf(k as f64 * step, p)
                }
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            self.nodes = Some(table);
        }
        Ok(self.nodes.as_ref().unwrap())
    }

    /// Everything that depends on the file size: the partial last cell and
    /// the survival weights.
    fn horizon(&mut self, z: f64) -> Result<Horizon> {
        let mu = self.model.mu();
        let t_end = z / mu;
        let kt = (t_end / self.step + 0.5).floor() as usize;
        if kt >= self.n {
            return Err(Error::InvalidGrid(format!("file size {z} exceeds the grid")));
        }
        let partial = (t_end / self.step + 0.5 - kt as f64).clamp(0.0, 1.0);
        let ratio = t_end / self.step;
        let aligned = (ratio - ratio.round()).abs() <= ALIGN_TOL * ratio.max(1.0);
        let last_x = self.x;
        let g_end = if aligned {
            self.node_cdf()?[ratio.round() as usize].clone()
        } else {
            self.passage.cdf(t_end, &self.params)?
        };
        // Survival weight per node: 1 once the rest of the file fits in one prefetch.
        let needed: Vec<usize> = (0..=kt).filter(|&k| z - mu * k as f64 * self.step > last_x).collect();
        let cdfs: Vec<DMatrix<f64>> = if aligned {
            let nodes = self.node_cdf()?;
            let end = ratio.round() as usize;
            needed.iter().map(|&k| nodes[end - k].clone()).collect()
        } else {
            let step = self.step;
            let passage = &self.passage;
            let p = &self.params;
            par_map(&needed, |&k| passage.cdf(t_end - k as f64 * step, p)).into_iter().collect::<Result<Vec<_>>>()?
        };
        let states = self.model.states();
        let mut weight = vec![vec![1.0; states]; kt + 1];
        for (k, g) in needed.iter().zip(&cdfs) {
            weight[*k] = survival(&self.v, g);
        }
        Ok(Horizon { kt, partial, g_end, weight })
    }

    /// Mass of level `l` inside the file horizon, per node.
    fn truncated(&mut self, l: usize, h: &Horizon) -> Vec<RowDVector<f64>> {
        let kt = h.kt;
        let partial = h.partial;
        let exact_last = if l == 1 && kt > 0 {
            Some(&self.psi0 * (&h.g_end - &self.bounds[kt - 1]))
        } else if l == 1 {
            Some(&self.psi0 * &h.g_end)
        } else {
            None
        };
        let level = self.level(l);
        let mut out: Vec<RowDVector<f64>> = level[..=kt].to_vec();
        out[kt] = match exact_last {
            Some(m) => m.map(|e| e.max(0.0)),
            None => &out[kt] * partial,
        };
        out
    }

    fn pmf(&mut self, z: f64, jmax: usize) -> Result<StarvationPmf> {
        let h = self.horizon(z)?;
        let p_s = (&self.psi0 * &h.g_end).sum().clamp(0.0, 1.0);
        let mut p = vec![1.0 - p_s];
        for l in 1..=jmax {
            let f = self.truncated(l, &h);
            let mut acc = CompensatedSum::default();
            for (k, row) in f.iter().enumerate() {
                for (i, m) in row.iter().enumerate() {
                    acc.add(m * h.weight[k][i]);
                }
            }
            p.push(acc.value().max(0.0));
        }
        let tail = self.truncated(jmax + 1, &h).iter().map(|r| r.sum()).sum::<f64>().max(0.0);
        Ok(StarvationPmf { p, tail })
    }

    fn expected_count(&mut self, z: f64) -> Result<f64> {
        let h = self.horizon(z)?;
        let max_levels = (z / self.x).ceil() as usize + 1;
        let mut acc = CompensatedSum::default();
        for l in 1..=max_levels {
            let mass: f64 = self.truncated(l, &h).iter().map(|r| r.sum()).sum();
            acc.add(mass.max(0.0));
            if mass < 1e-14 {
                break;
            }
        }
        Ok(acc.value())
    }
}

/// Probability mass of cell `k`, clipped at 0 against inversion ripple.
fn cell(bounds: &[DMatrix<f64>], k: usize) -> DMatrix<f64> {
    let m = if k == 0 { bounds[0].clone() } else { &bounds[k] - &bounds[k - 1] };
    m.map(|e| e.max(0.0))
}

struct Horizon {
    kt: usize,
    partial: f64,
    g_end: DMatrix<f64>,
    weight: Vec<Vec<f64>>,
}
