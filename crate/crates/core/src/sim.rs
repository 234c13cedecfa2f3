//! Event-driven Monte Carlo simulation of a streaming session.
//!
//! The buffer is piecewise linear between chain transitions, so every
//! threshold crossing is solved exactly; nothing is time-stepped. Replication
//! `k` draws from ChaCha8 stream `k` of the run seed, which makes results
//! independent of how replications are spread over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FluidModel, SessionParams};
use crate::util::{par_map, CompensatedSum};

const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalCap {
    /// Arrivals continue after the whole file has been received.
    #[default]
    Unbounded,
    /// The source stops once `Z` frames have arrived.
    CappedAtZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Stationary,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub replications: u64,
    pub seed: u64,
    #[serde(default)]
    pub arrival_cap: ArrivalCap,
    #[serde(default)]
    pub initial_state: InitialState,
}

impl SimConfig {
    pub fn new(replications: u64, seed: u64) -> Self {
        SimConfig { replications, seed, arrival_cap: ArrivalCap::Unbounded, initial_state: InitialState::Stationary }
    }

    pub fn validate(&self, model: &FluidModel) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::DomainError("replications must be >= 1".into()));
        }
        if let InitialState::Fixed(i) = self.initial_state {
            if i >= model.states() {
                return Err(Error::DimensionMismatch(format!(
                    "initial state {i} out of range for {} states",
                    model.states()
                )));
            }
        }
        Ok(())
    }

    /// The random stream of replication `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionOutcome {
    /// Wall-clock length of the initial prefetch.
    pub startup_delay: f64,
    /// Playback-clock instants of each starvation.
    pub starvation_times: Vec<f64>,
    pub starvation_count: usize,
    pub completed: bool,
    /// Total playback time; `Z / mu` for a completed session.
    pub playback_time: f64,
    pub max_buffer: f64,
}

/// Precomputed jump tables for sampling the chain.
#[derive(Debug, Clone)]
struct Sampler {
    exit: Vec<f64>,
    jumps: Vec<Vec<(usize, f64)>>,
    initial: Vec<(usize, f64)>,
}

impl Sampler {
    fn new(model: &FluidModel, cfg: &SimConfig) -> Result<Self> {
        let q = model.generator();
        let l = model.states();
        let exit: Vec<f64> = (0..l).map(|i| -q[(i, i)]).collect();
        let jumps = (0..l)
            .map(|i| {
                let mut acc = 0.0;
                (0..l)
                    .filter(|&j| j != i && q[(i, j)] > 0.0)
                    .map(|j| {
                        acc += q[(i, j)] / exit[i];
                        (j, acc)
                    })
                    .collect()
            })
            .collect();
        let initial = match cfg.initial_state {
            InitialState::Fixed(i) => vec![(i, 1.0)],
            InitialState::Stationary => {
                let pi = model.stationary_distribution()?;
                let mut acc = 0.0;
                pi.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(j, p)| {
                        acc += p;
                        (j, acc)
                    })
                    .collect()
            }
        };
        Ok(Sampler { exit, jumps, initial })
    }

    fn pick(table: &[(usize, f64)], u: f64) -> usize {
        let total = table.last().map(|e| e.1).unwrap_or(1.0);
        let target = u * total;
        table.iter().find(|e| target < e.1).unwrap_or(table.last().unwrap()).0
    }

    fn sojourn(&self, i: usize, rng: &mut ChaCha8Rng) -> f64 {
        if self.exit[i] > 0.0 {
            let e: f64 = rng.sample(Exp1);
            e / self.exit[i]
        } else {
            f64::INFINITY
        }
    }

    fn jump(&self, i: usize, rng: &mut ChaCha8Rng) -> usize {
        Self::pick(&self.jumps[i], rng.random::<f64>())
    }
}

struct Session<'a> {
    model: &'a FluidModel,
    sampler: &'a Sampler,
    cap: ArrivalCap,
    z: f64,
    state: usize,
    residual: f64,
    buffer: f64,
    received: f64,
    wall: f64,
    max_buffer: f64,
}

impl Session<'_> {
    fn arrival_rate(&self) -> f64 {
        match self.cap {
            ArrivalCap::CappedAtZ if self.received >= self.z => 0.0,
            _ => self.model.lambda()[self.state],
        }
    }

    /// Moves time forward by `dt` inside the current sojourn.
    fn advance(&mut self, dt: f64, drain: f64) {
        let a = self.arrival_rate();
        self.buffer += (a - drain) * dt;
        self.received += a * dt;
        if self.cap == ArrivalCap::CappedAtZ && self.received > self.z {
            self.received = self.z;
        }
        self.buffer = self.buffer.max(0.0);
        self.max_buffer = self.max_buffer.max(self.buffer);
        self.wall += dt;
        self.residual -= dt;
    }

    fn transition(&mut self, rng: &mut ChaCha8Rng) {
        self.state = self.sampler.jump(self.state, rng);
        self.residual = self.sampler.sojourn(self.state, rng);
    }

    /// Fills the buffer to `target` frames.
    fn prefetch(&mut self, target: f64, rng: &mut ChaCha8Rng) {
        loop {
            let need = target - self.buffer;
            if need <= 0.0 {
                self.buffer = target;
                return;
            }
            let a = self.arrival_rate();
            let hit = if a > 0.0 { need / a } else { f64::INFINITY };
            // Under the cap the source stops exactly when the remainder has arrived.
            let cap_hit = match self.cap {
                ArrivalCap::CappedAtZ if a > 0.0 => (self.z - self.received) / a,
                _ => f64::INFINITY,
            };
            if hit <= self.residual && hit <= cap_hit {
                self.advance(hit, 0.0);
                self.buffer = target;
                self.max_buffer = self.max_buffer.max(target);
                return;
            }
            if cap_hit < self.residual {
                // The target never exceeds what is left of the file, so the
                // cap and the target coincide up to rounding.
                self.advance(cap_hit, 0.0);
                self.received = self.z;
                self.buffer = self.buffer.max(target);
                return;
            }
            self.advance(self.residual, 0.0);
            self.transition(rng);
        }
    }
}

/// Runs one session to the end of the file.
pub fn simulate_session(
    model: &FluidModel,
    params: &SessionParams,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SessionOutcome> {
    cfg.validate(model)?;
    let sampler = Sampler::new(model, cfg)?;
    Ok(run(model, params, cfg, &sampler, rng))
}

fn run(model: &FluidModel, params: &SessionParams, cfg: &SimConfig, sampler: &Sampler, rng: &mut ChaCha8Rng) -> SessionOutcome {
    let mu = model.mu();
    let z = params.z;
    let end = z / mu;
    let state = Sampler::pick(&sampler.initial, rng.random::<f64>());
    let residual = sampler.sojourn(state, rng);
    let mut s = Session {
        model,
        sampler,
        cap: cfg.arrival_cap,
        z,
        state,
        residual,
        buffer: 0.0,
        received: 0.0,
        wall: 0.0,
        max_buffer: 0.0,
    };
    s.prefetch(params.x, rng);
    let startup_delay = s.wall;

    let mut clock = 0.0;
    let mut starvations = Vec::new();
    loop {
        let a = s.arrival_rate();
        let net = a - mu;
        let to_end = end - clock;
        let to_empty = if net < 0.0 { s.buffer / -net } else { f64::INFINITY };
        let to_cap = match s.cap {
            ArrivalCap::CappedAtZ if a > 0.0 => (z - s.received) / a,
            _ => f64::INFINITY,
        };
        let dt = to_end.min(to_empty).min(to_cap).min(s.residual);
        if to_end <= dt {
            s.advance(to_end, mu);
            clock = end;
            break;
        }
        s.advance(dt, mu);
        clock += dt;
        if to_empty <= dt {
            s.buffer = 0.0;
            let remaining = z - mu * clock;
            // Running dry together with the last frame is not a starvation.
            if remaining <= 1e-9 * z.max(1.0) {
                clock = end;
                break;
            }
            starvations.push(clock);
            s.prefetch(params.x.min(remaining), rng);
            continue;
        }
        if to_cap <= dt {
            s.received = z;
            continue;
        }
        s.transition(rng);
    }
    SessionOutcome {
        startup_delay,
        starvation_count: starvations.len(),
        starvation_times: starvations,
        completed: true,
        playback_time: clock,
        max_buffer: s.max_buffer,
    }
}

/// Runs `cfg.replications` sessions; outcome `k` always comes from stream `k`.
pub fn run_replications(model: &FluidModel, params: &SessionParams, cfg: &SimConfig) -> Result<Vec<SessionOutcome>> {
    cfg.validate(model)?;
    let sampler = Sampler::new(model, cfg)?;
    let indices: Vec<u64> = (0..cfg.replications).collect();
    Ok(par_map(&indices, |&k| {
        let mut rng = cfg.stream(k);
        run(model, params, cfg, &sampler, &mut rng)
    }))
}

/// Sample mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub variance: f64,
    pub ci_half_width: f64,
}

impl Estimate {
    pub fn from_samples<I: IntoIterator<Item = f64> + Clone>(samples: I) -> Self {
        let mut n = 0usize;
        let mut sum = CompensatedSum::default();
        for v in samples.clone() {
            sum.add(v);
            n += 1;
        }
        if n == 0 {
            return Estimate { mean: f64::NAN, variance: f64::NAN, ci_half_width: f64::NAN };
        }
        let mean = sum.value() / n as f64;
        let mut sq = CompensatedSum::default();
        for v in samples {
            sq.add((v - mean) * (v - mean));
        }
        let variance = if n > 1 { sq.value() / (n - 1) as f64 } else { 0.0 };
        Estimate { mean, variance, ci_half_width: Z95 * (variance / n as f64).sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EcdfPoint {
    pub t: f64,
    pub value: f64,
    pub ci_half_width: f64,
}

/// Time grids on which empirical CDFs are reported.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimGrids {
    pub startup: Vec<f64>,
    /// Playback-clock grid for the first starvation time.
    pub first_starvation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub replications: u64,
    pub seed: u64,
    /// Fraction of sessions with at least one starvation.
    pub starvation_probability: Estimate,
    pub starvation_count: Estimate,
    pub startup_delay: Estimate,
    /// `histogram[j]`: fraction of sessions with exactly `j` starvations.
    pub histogram: Vec<f64>,
    pub startup_cdf: Vec<EcdfPoint>,
    pub first_starvation_cdf: Vec<EcdfPoint>,
}

impl SimStats {
    pub fn histogram_value(&self, j: usize) -> f64 {
        self.histogram.get(j).copied().unwrap_or(0.0)
    }

    /// 95% half-width for the histogram entry `j`.
    pub fn histogram_ci(&self, j: usize) -> f64 {
        let p = self.histogram_value(j);
        Z95 * (p * (1.0 - p) / self.replications as f64).sqrt()
    }
}

/// Aggregates replications into summary statistics.
pub fn monte_carlo(model: &FluidModel, params: &SessionParams, cfg: &SimConfig, grids: &SimGrids) -> Result<SimStats> {
    let outcomes = run_replications(model, params, cfg)?;
    Ok(summarize(&outcomes, cfg, grids))
}

pub fn summarize(outcomes: &[SessionOutcome], cfg: &SimConfig, grids: &SimGrids) -> SimStats {
    let n = outcomes.len();
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    let starved = Estimate::from_samples(outcomes.iter().map(|o| indicator(o.starvation_count > 0)));
    let count = Estimate::from_samples(outcomes.iter().map(|o| o.starvation_count as f64));
    let startup = Estimate::from_samples(outcomes.iter().map(|o| o.startup_delay));
    let max_count = outcomes.iter().map(|o| o.starvation_count).max().unwrap_or(0);
    let mut tally = vec![0u64; max_count + 1];
    for o in outcomes {
        tally[o.starvation_count] += 1;
    }
    let histogram = tally.iter().map(|&c| c as f64 / n as f64).collect();
    let ecdf = |grid: &[f64], sample: &dyn Fn(&SessionOutcome) -> Option<f64>| -> Vec<EcdfPoint> {
        grid.iter()
            .map(|&t| {
                let e = Estimate::from_samples(outcomes.iter().map(|o| indicator(sample(o).is_some_and(|v| v <= t))));
                EcdfPoint { t, value: e.mean, ci_half_width: e.ci_half_width }
            })
            .collect()
    };
    SimStats {
        replications: cfg.replications,
        seed: cfg.seed,
        starvation_probability: starved,
        starvation_count: count,
        startup_delay: startup,
        histogram,
        startup_cdf: ecdf(&grids.startup, &|o| Some(o.startup_delay)),
        first_starvation_cdf: ecdf(&grids.first_starvation, &|o| o.starvation_times.first().copied()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(lambda: f64, mu: f64) -> FluidModel {
        FluidModel::new(vec![vec![0.0]], vec![lambda], mu).unwrap()
    }

    #[test]
    fn fast_source_never_starves() {
        let m = single(30.0, 25.0);
        let s = SessionParams::new(50.0, 1000.0).unwrap();
        let cfg = SimConfig::new(1, 1);
        let o = simulate_session(&m, &s, &cfg, &mut cfg.stream(0)).unwrap();
        assert!((o.startup_delay - 50.0 / 30.0).abs() < 1e-12);
        assert_eq!(o.starvation_count, 0);
        assert!((o.playback_time - 40.0).abs() < 1e-9);
    }

    /// Closed-form cycle arithmetic for a single slow state.
    fn expected_cycles(lambda: f64, mu: f64, x: f64, z: f64) -> usize {
        let mut played = 0.0;
        let mut buffer = x;
        let mut count = 0;
        loop {
            // Playback drains `buffer` at net rate mu - lambda while mu frames/s play.
            let leg = buffer / (mu - lambda);
            if played + mu * leg >= z - 1e-9 {
                return count;
            }
            played += mu * leg;
            count += 1;
            buffer = x.min(z - played);
        }
    }

    #[test]
    fn slow_source_cycles() {
        let cfg = SimConfig::new(1, 1);
        for (x, z) in [(100.0, 1000.0), (100.0, 1300.0), (40.0, 777.0)] {
            let m = single(20.0, 25.0);
            let s = SessionParams::new(x, z).unwrap();
            let o = simulate_session(&m, &s, &cfg, &mut cfg.stream(0)).unwrap();
            assert_eq!(o.starvation_count, expected_cycles(20.0, 25.0, x, z), "x={x} z={z}");
            assert!((o.startup_delay - x / 20.0).abs() < 1e-12);
            assert!((o.playback_time - z / 25.0).abs() < 1e-9);
        }
        // Worked case: one starvation at t = 20 s.
        let s = SessionParams::new(100.0, 1000.0).unwrap();
        let o = simulate_session(&single(20.0, 25.0), &s, &cfg, &mut cfg.stream(0)).unwrap();
        assert_eq!(o.starvation_times.len(), 1);
        assert!((o.starvation_times[0] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn outcomes_satisfy_session_invariants() {
        let m = FluidModel::two_state(2.0, 6.0, 2.0, 30.0, 25.0).unwrap();
        let s = SessionParams::new(20.0, 500.0).unwrap();
        let mut cfg = SimConfig::new(500, 9);
        cfg.arrival_cap = ArrivalCap::CappedAtZ;
        for o in run_replications(&m, &s, &cfg).unwrap() {
            assert!(o.starvation_times.windows(2).all(|w| w[0] < w[1]));
            assert!(o.starvation_times.iter().all(|&t| t >= 20.0 / 25.0 - 1e-12 && t < 20.0));
            assert!((o.playback_time - 20.0).abs() < 1e-9);
            assert!(o.max_buffer <= 500.0 + 1e-9);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let m = FluidModel::two_state(2.0, 6.0, 2.0, 30.0, 25.0).unwrap();
        let s = SessionParams::new(20.0, 500.0).unwrap();
        let cfg = SimConfig::new(2000, 42);
        let grids = SimGrids { startup: vec![0.5, 1.0], first_starvation: vec![5.0] };
        let a = monte_carlo(&m, &s, &cfg, &grids).unwrap();
        let b = monte_carlo(&m, &s, &cfg, &grids).unwrap();
        assert_eq!(a, b);
        assert!((a.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ci_is_scaled_standard_error() {
        let e = Estimate::from_samples([0.0, 1.0, 0.0, 1.0]);
        assert_eq!(e.mean, 0.5);
        assert!((e.variance - 1.0 / 3.0).abs() < 1e-15);
        assert!((e.ci_half_width - 1.96 * (e.variance / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stationary_start_is_mixture_of_fixed_starts() {
        let m = FluidModel::two_state(2.0, 6.0, 2.0, 30.0, 25.0).unwrap();
        let s = SessionParams::new(20.0, 250.0).unwrap();
        let pi = m.stationary_distribution().unwrap();
        let grids = SimGrids::default();
        let mut cfg = SimConfig::new(20000, 3);
        let mixed = monte_carlo(&m, &s, &cfg, &grids).unwrap().starvation_probability;
        let mut mix = 0.0;
        let mut ci = mixed.ci_half_width;
        for (i, p) in pi.iter().enumerate() {
            cfg.initial_state = InitialState::Fixed(i);
            cfg.seed = 100 + i as u64;
            let e = monte_carlo(&m, &s, &cfg, &grids).unwrap().starvation_probability;
            mix += p * e.mean;
            ci += p * e.ci_half_width;
        }
        assert!((mixed.mean - mix).abs() <= ci, "{} vs {mix}", mixed.mean);
    }
}
