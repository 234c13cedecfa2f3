//! Session cost and the progressive versus adaptive comparison.
//!
//! `C = c1 * E[starvations] + c2 * E[start-up delay] + c3 * quality loss`,
//! where the quality loss is the stationary share of time spent on a lower
//! quality level, weighted by that level's loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{expected_starvation_counts, starvation_count_pmf_sweep, DEFAULT_POINTS_PER_PREFETCH};
use crate::inversion::InversionParams;
use crate::model::{FluidModel, SessionParams};
use crate::startup::expected_startup_delay;
use crate::util::par_map;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl CostWeights {
    pub fn new(c1: f64, c2: f64, c3: f64) -> Result<Self> {
        let w = CostWeights { c1, c2, c3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidWeights(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Parses `c1,c2,c3`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidWeights(format!("expected c1,c2,c3, got '{s}'")));
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| Error::InvalidWeights(format!("'{p}' is not a number"))))
            .collect::<Result<_>>()?;
        CostWeights::new(v[0], v[1], v[2])
    }

    pub fn scaled(&self, k: f64) -> Self {
        CostWeights { c1: self.c1 * k, c2: self.c2 * k, c3: self.c3 * k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// The highest quality level in every state.
    Progressive,
    /// The highest level the current throughput sustains at playout rate.
    #[default]
    Adaptive,
}

fn default_mu() -> f64 {
    15.0
}

/// A two-state network with a two-level (or longer) bitrate ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub mode: Policy,
    /// Throughput per state, bits/s.
    pub throughput: Vec<f64>,
    /// Frame size per quality level, bits, lowest quality first.
    pub frame_bits: Vec<f64>,
    /// Quality loss per level relative to the best one.
    pub quality_loss: Vec<f64>,
    /// Rate of leaving state 1 for state 2, 1/s.
    pub alpha: f64,
    /// Rate of leaving state 0 for state 1, 1/s.
    pub beta: f64,
    /// Playout rate, frames/s.
    #[serde(default = "default_mu")]
    pub mu: f64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.throughput.len() != 2 {
            return bad(format!("throughput needs one entry per state (2), got {}", self.throughput.len()));
        }
        if self.throughput.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return bad("throughput must be > 0".into());
        }
        if self.frame_bits.is_empty() || self.frame_bits.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return bad("frame_bits must be non-empty and > 0".into());
        }
        if self.frame_bits.windows(2).any(|w| w[0] >= w[1]) {
            return bad("frame_bits must be strictly increasing".into());
        }
        if self.quality_loss.len() != self.frame_bits.len() {
            return bad("quality_loss needs one entry per level".into());
        }
        if self.quality_loss.iter().any(|q| !q.is_finite() || *q < 0.0) {
            return bad("quality_loss must be >= 0".into());
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return bad("alpha and beta must be > 0".into());
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::NonPositivePlayoutRate(self.mu));
        }
        Ok(())
    }

    /// Quality level used in each state.
    pub fn levels(&self, policy: Policy) -> Vec<usize> {
        let top = self.frame_bits.len() - 1;
        self.throughput
            .iter()
            .map(|&bw| match policy {
                Policy::Progressive => top,
                Policy::Adaptive => (0..=top).rev().find(|&k| self.frame_bits[k] * self.mu <= bw).unwrap_or(0),
            })
            .collect()
    }

    /// Stationary quality loss `sum_i pi_i dF(level_i)`.
    pub fn quality_term(&self, policy: Policy) -> Result<f64> {
        let model = scenario_to_model(self, policy)?;
        let pi = model.stationary_distribution()?;
        Ok(self.levels(policy).iter().zip(&pi).map(|(&k, p)| p * self.quality_loss[k]).sum())
    }
}

/// The fluid model a policy induces: `lambda_i = throughput_i / frame_bits(level_i)`.
pub fn scenario_to_model(spec: &ScenarioSpec, policy: Policy) -> Result<FluidModel> {
    spec.validate()?;
    let lambda: Vec<f64> = spec
        .throughput
        .iter()
        .zip(spec.levels(policy))
        .map(|(bw, k)| bw / spec.frame_bits[k])
        .collect();
    if lambda.iter().all(|l| *l == 0.0) {
        return Err(Error::InfeasiblePlayout);
    }
    FluidModel::two_state(spec.alpha, spec.beta, lambda[0], lambda[1], spec.mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostOptions {
    /// Truncate the starvation count at this many events; `None` sums the
    /// whole distribution.
    pub jmax: Option<usize>,
    pub points_per_prefetch: usize,
    pub inversion: InversionParams,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions { jmax: None, points_per_prefetch: DEFAULT_POINTS_PER_PREFETCH, inversion: InversionParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub expected_starvations: f64,
    pub expected_startup: f64,
    pub quality_term: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(expected_starvations: f64, expected_startup: f64, quality_term: f64, w: &CostWeights) -> Self {
        let total = w.c1 * expected_starvations + w.c2 * expected_startup + w.c3 * quality_term;
        CostBreakdown { expected_starvations, expected_startup, quality_term, total }
    }

    pub fn reweighted(&self, w: &CostWeights) -> Self {
        CostBreakdown::new(self.expected_starvations, self.expected_startup, self.quality_term, w)
    }
}

fn starvation_terms(model: &FluidModel, x: f64, zs: &[f64], opts: &CostOptions) -> Result<Vec<f64>> {
    if model.lambda().iter().all(|&l| l >= model.mu()) {
        return Ok(vec![0.0; zs.len()]);
    }
    match opts.jmax {
        None => expected_starvation_counts(model, x, zs, opts.points_per_prefetch, &opts.inversion),
        Some(j) => Ok(starvation_count_pmf_sweep(model, x, zs, j, opts.points_per_prefetch, &opts.inversion)?
            .iter()
            .map(|pmf| pmf.expected_count())
            .collect()),
    }
}

/// Cost of one session; `quality_term` is the policy's stationary quality loss.
pub fn session_cost(
    model: &FluidModel,
    params: &SessionParams,
    w: &CostWeights,
    quality_term: f64,
    opts: &CostOptions,
) -> Result<CostBreakdown> {
    w.validate()?;
    let pi = model.stationary_distribution()?;
    let startup = expected_startup_delay(model, params.x, &pi)?;
    let starv = starvation_terms(model, params.x, &[params.z], opts)?[0];
    Ok(CostBreakdown::new(starv, startup, quality_term, w))
}

/// Cost of `policy` on every file size in `zs`.
pub fn scenario_costs(
    spec: &ScenarioSpec,
    policy: Policy,
    x: f64,
    zs: &[f64],
    w: &CostWeights,
    opts: &CostOptions,
) -> Result<Vec<CostBreakdown>> {
    w.validate()?;
    let model = scenario_to_model(spec, policy)?;
    let quality = spec.quality_term(policy)?;
    let pi = model.stationary_distribution()?;
    let startup = expected_startup_delay(&model, x, &pi)?;
    let starv = starvation_terms(&model, x, zs, opts)?;
    Ok(starv.iter().map(|&s| CostBreakdown::new(s, startup, quality, w)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub z: f64,
    pub progressive: CostBreakdown,
    pub adaptive: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub x: f64,
    pub weights: CostWeights,
    pub rows: Vec<ComparisonRow>,
    /// Smallest file size at which adaptive streaming is strictly cheaper.
    pub crossover: Option<f64>,
    /// Adaptive costs no more than progressive at every file size.
    pub adaptive_dominates: bool,
}

impl ComparisonReport {
    pub fn reweighted(&self, w: &CostWeights) -> Self {
        let rows: Vec<ComparisonRow> = self
            .rows
            .iter()
            .map(|r| ComparisonRow { z: r.z, progressive: r.progressive.reweighted(w), adaptive: r.adaptive.reweighted(w) })
            .collect();
        summarize(self.x, *w, rows)
    }
}

/// Relative slack under which two costs count as equal.
const TIE: f64 = 1e-12;

fn summarize(x: f64, weights: CostWeights, rows: Vec<ComparisonRow>) -> ComparisonReport {
    let cheaper = |r: &ComparisonRow| {
        let scale = r.adaptive.total.abs().max(r.progressive.total.abs());
        r.adaptive.total < r.progressive.total - TIE * scale
    };
    let not_worse = |r: &ComparisonRow| {
        let scale = r.adaptive.total.abs().max(r.progressive.total.abs());
        r.adaptive.total <= r.progressive.total + TIE * scale
    };
    let crossover = rows.iter().find(|r| cheaper(r)).map(|r| r.z);
    let adaptive_dominates = rows.iter().all(not_worse);
    ComparisonReport { x, weights, rows, crossover, adaptive_dominates }
}

fn check_ascending(grid: &[f64], what: &str) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidGrid(format!("{what} grid must be non-empty and strictly ascending")));
    }
    Ok(())
}

pub fn compare_scenarios(
    spec: &ScenarioSpec,
    w: &CostWeights,
    z_grid: &[f64],
    x: f64,
    opts: &CostOptions,
) -> Result<ComparisonReport> {
    check_ascending(z_grid, "Z")?;
    let prog = scenario_costs(spec, Policy::Progressive, x, z_grid, w, opts)?;
    let adap = scenario_costs(spec, Policy::Adaptive, x, z_grid, w, opts)?;
    let rows = z_grid
        .iter()
        .zip(prog.into_iter().zip(adap))
        .map(|(&z, (progressive, adaptive))| ComparisonRow { z, progressive, adaptive })
        .collect();
    Ok(summarize(x, *w, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub x: f64,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub z: f64,
    pub weights: CostWeights,
    pub rows: Vec<ThresholdRow>,
    pub x_star: f64,
}

impl ThresholdReport {
    pub fn reweighted(&self, w: &CostWeights) -> Self {
        let rows: Vec<ThresholdRow> =
            self.rows.iter().map(|r| ThresholdRow { x: r.x, cost: r.cost.reweighted(w) }).collect();
        let x_star = argmin(&rows);
        ThresholdReport { z: self.z, weights: *w, rows, x_star }
    }
}

/// First minimizer, so ties go to the smaller threshold.
fn argmin(rows: &[ThresholdRow]) -> f64 {
    let mut best = &rows[0];
    for r in &rows[1..] {
        if r.cost.total < best.cost.total {
            best = r;
        }
    }
    best.x
}

/// Grid search for the prefetch threshold minimizing the session cost.
pub fn optimize_threshold(
    model: &FluidModel,
    z: f64,
    w: &CostWeights,
    quality_term: f64,
    x_grid: &[f64],
    opts: &CostOptions,
) -> Result<ThresholdReport> {
    check_ascending(x_grid, "x")?;
    if x_grid[0] <= 0.0 || x_grid[x_grid.len() - 1] > z {
        return Err(Error::InvalidGrid(format!("x grid must lie in (0, Z = {z}]")));
    }
    w.validate()?;
    let costs = par_map(x_grid, |&x| {
        let params = SessionParams::new(x, z)?;
        session_cost(model, &params, w, quality_term, opts)
    });
    let rows: Vec<ThresholdRow> = x_grid
        .iter()
        .zip(costs)
        .map(|(&x, c)| c.map(|cost| ThresholdRow { x, cost }))
        .collect::<Result<_>>()?;
    let x_star = argmin(&rows);
    Ok(ThresholdReport { z, weights: *w, rows, x_star })
}
