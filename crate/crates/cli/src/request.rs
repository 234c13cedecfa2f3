//! Fully resolved subcommand inputs. A request is what a manifest records,
//! so running it twice gives the same bytes.

use fluidqoe::config::ModelConfig;
use fluidqoe::events::{starvation_count_pmf, PathGrid};
use fluidqoe::inversion::{self_test, InversionParams};
use fluidqoe::qoe::{compare_scenarios, optimize_threshold, scenario_to_model, CostOptions, CostWeights, Policy, ScenarioSpec};
use fluidqoe::sim::{monte_carlo, ArrivalCap, SimConfig, SimGrids};
use fluidqoe::starvation::{starvation_cdf, starvation_probability};
use fluidqoe::startup::{expected_startup_delay, startup_delay_cdf};
use fluidqoe::{RateMode, SessionParams};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::format::{csv_header, csv_row};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Request {
    Validate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<ModelConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario: Option<ScenarioSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x: Option<f64>,
        #[serde(rename = "Z", default, skip_serializing_if = "Option::is_none")]
        z: Option<f64>,
    },
    Starvation {
        config: ModelConfig,
        x: f64,
        #[serde(rename = "Z")]
        z: f64,
        t_grid: Vec<f64>,
        inversion: InversionParams,
    },
    Startup {
        config: ModelConfig,
        x: f64,
        t_grid: Vec<f64>,
        inversion: InversionParams,
    },
    Events {
        config: ModelConfig,
        x: f64,
        #[serde(rename = "Z")]
        z: f64,
        jmax: usize,
        grid: usize,
        inversion: InversionParams,
    },
    Simulate {
        config: ModelConfig,
        x: f64,
        #[serde(rename = "Z")]
        z: f64,
        reps: u64,
        seed: u64,
        cap: bool,
    },
    Optimize {
        scenario: ScenarioSpec,
        weights: CostWeights,
        #[serde(rename = "Z")]
        z: f64,
        x_grid: Vec<f64>,
        jmax: Option<usize>,
        grid: usize,
        inversion: InversionParams,
    },
    Compare {
        scenario: ScenarioSpec,
        weights: CostWeights,
        x: f64,
        #[serde(rename = "Z_grid")]
        z_grid: Vec<f64>,
        jmax: Option<usize>,
        grid: usize,
        inversion: InversionParams,
    },
    InvertSelftest {
        inversion: InversionParams,
    },
}

/// What a run produces: the main payload and, for the cost sweeps, a JSON summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub primary: String,
    pub summary: Option<String>,
    /// Set when the run completed but its result is a numeric failure.
    pub failed: bool,
}

impl Output {
    fn plain(primary: String) -> Self {
        Output { primary, summary: None, failed: false }
    }
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable output");
    s.push('\n');
    s
}

impl Request {
    pub fn name(&self) -> &'static str {
        match self {
            Request::Validate { .. } => "validate",
            Request::Starvation { .. } => "starvation",
            Request::Startup { .. } => "startup",
            Request::Events { .. } => "events",
            Request::Simulate { .. } => "simulate",
            Request::Optimize { .. } => "optimize",
            Request::Compare { .. } => "compare",
            Request::InvertSelftest { .. } => "invert-selftest",
        }
    }

    pub fn run(&self) -> Result<Output, CliError> {
        match self {
            Request::Validate { config, scenario, x, z } => validate(config.as_ref(), scenario.as_ref(), *x, *z),
            Request::Starvation { config, x, z, t_grid, inversion } => {
                let model = config.model()?;
                let params = SessionParams::new(*x, *z)?;
                let ps = starvation_probability(&model, &params, inversion)?;
                let l = model.states();
                let mut cols = vec!["t".to_string()];
                for i in 1..=l {
                    for j in 1..=l {
                        cols.push(format!("H_{i}{j}"));
                    }
                }
                cols.push("P_s".into());
                let mut out = csv_header(&cols);
                for &t in t_grid {
                    let h = starvation_cdf(&model, *x, t, inversion)?;
                    let mut row = vec![t];
                    row.extend((0..l).flat_map(|i| (0..l).map(move |j| (i, j))).map(|ij| h[ij]));
                    row.push(ps);
                    out.push_str(&csv_row(&row));
                }
                Ok(Output::plain(out))
            }
            Request::Startup { config, x, t_grid, inversion } => {
                let model = config.model()?;
                let pi = model.stationary_distribution()?;
                let mean = expected_startup_delay(&model, *x, &pi)?;
                let l = model.states();
                let mut cols = vec!["t".to_string()];
                for i in 1..=l {
                    for j in 1..=l {
                        cols.push(format!("U_{i}{j}"));
                    }
                }
                cols.push("mean".into());
                let mut out = csv_header(&cols);
                for &t in t_grid {
                    let u = startup_delay_cdf(&model, *x, t, inversion)?;
                    let mut row = vec![t];
                    row.extend((0..l).flat_map(|i| (0..l).map(move |j| (i, j))).map(|ij| u[ij]));
                    row.push(mean);
                    out.push_str(&csv_row(&row));
                }
                Ok(Output::plain(out))
            }
            Request::Events { config, x, z, jmax, grid, inversion } => {
                let model = config.model()?;
                let params = SessionParams::new(*x, *z)?;
                let g = PathGrid::aligned(&model, &params, *grid)?;
                let pmf = starvation_count_pmf(&model, &params, *jmax, &g, inversion)?;
                Ok(Output::plain(pretty(&json!({ "pmf": pmf.p, "tail": pmf.tail }))))
            }
            Request::Simulate { config, x, z, reps, seed, cap } => {
                let model = config.model()?;
                let params = SessionParams::new(*x, *z)?;
                let mut cfg = SimConfig::new(*reps, *seed);
                if *cap {
                    cfg.arrival_cap = ArrivalCap::CappedAtZ;
                }
                let stats = monte_carlo(&model, &params, &cfg, &SimGrids::default())?;
                Ok(Output::plain(pretty(&stats)))
            }
            Request::Optimize { scenario, weights, z, x_grid, jmax, grid, inversion } => {
                let policy = scenario.mode;
                let model = scenario_to_model(scenario, policy)?;
                let quality = scenario.quality_term(policy)?;
                let opts = CostOptions { jmax: *jmax, points_per_prefetch: *grid, inversion: *inversion };
                let report = optimize_threshold(&model, *z, weights, quality, x_grid, &opts)?;
                let mut out = csv_header(&["x", "expected_starvations", "expected_startup", "quality_term", "total"]);
                for r in &report.rows {
                    let c = &r.cost;
                    out.push_str(&csv_row(&[r.x, c.expected_starvations, c.expected_startup, c.quality_term, c.total]));
                }
                let best = report.rows.iter().find(|r| r.x == report.x_star).map(|r| r.cost.total);
                let summary = json!({
                    "policy": policy,
                    "Z": z,
                    "weights": weights,
                    "x_star": report.x_star,
                    "min_total": best,
                });
                Ok(Output { primary: out, summary: Some(pretty(&summary)), failed: false })
            }
            Request::Compare { scenario, weights, x, z_grid, jmax, grid, inversion } => {
                let opts = CostOptions { jmax: *jmax, points_per_prefetch: *grid, inversion: *inversion };
                let report = compare_scenarios(scenario, weights, z_grid, *x, &opts)?;
                let mut out = csv_header(&[
                    "Z",
                    "progressive_starvations",
                    "progressive_startup",
                    "progressive_quality",
                    "progressive_total",
                    "adaptive_starvations",
                    "adaptive_startup",
                    "adaptive_quality",
                    "adaptive_total",
                ]);
                for r in &report.rows {
                    let (p, a) = (&r.progressive, &r.adaptive);
                    out.push_str(&csv_row(&[
                        r.z,
                        p.expected_starvations,
                        p.expected_startup,
                        p.quality_term,
                        p.total,
                        a.expected_starvations,
                        a.expected_startup,
                        a.quality_term,
                        a.total,
                    ]));
                }
                let summary = json!({
                    "x": x,
                    "weights": weights,
                    "Z_star": report.crossover,
                    "adaptive_dominates": report.adaptive_dominates,
                });
                Ok(Output { primary: out, summary: Some(pretty(&summary)), failed: false })
            }
            Request::InvertSelftest { inversion } => {
                let report = self_test(inversion);
                Ok(Output { primary: pretty(&report), summary: None, failed: !report.passed })
            }
        }
    }
}

fn validate(config: Option<&ModelConfig>, scenario: Option<&ScenarioSpec>, x: Option<f64>, z: Option<f64>) -> Result<Output, CliError> {
    if let Some(cfg) = config {
        let model = cfg.model()?;
        cfg.inversion_params()?;
        let drift = model.mean_drift()?;
        let session = match (x.or(cfg.x), z.or(cfg.z)) {
            (Some(x), Some(z)) => Some(SessionParams::new(x, z)?),
            _ => None,
        };
        let report = json!({
            "valid": true,
            "states": model.states(),
            "pi": drift.pi,
            "mean_drift": drift.drift,
            "stable": drift.stable,
            "playback_rates": model.effective_rates(RateMode::Playback),
            "zero_rate_states": model.zero_rate_states(RateMode::Playback),
            "session": session,
        });
        return Ok(Output::plain(pretty(&report)));
    }
    let spec = scenario.ok_or_else(|| CliError::Usage("validate needs --config or --scenario".into()))?;
    spec.validate()?;
    let mut policies = serde_json::Map::new();
    for policy in [Policy::Progressive, Policy::Adaptive] {
        let model = scenario_to_model(spec, policy)?;
        let name = serde_json::to_value(policy).expect("policy name");
        policies.insert(
            name.as_str().unwrap_or_default().to_string(),
            json!({
                "levels": spec.levels(policy),
                "lambda": model.lambda(),
                "quality_term": spec.quality_term(policy)?,
                "stable": model.mean_drift()?.stable,
            }),
        );
    }
    Ok(Output::plain(pretty(&json!({ "valid": true, "policies": policies }))))
}
