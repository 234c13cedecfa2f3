//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fluidqoe::events::{starvation_count_pmf, starvation_count_pmf_sweep, PathGrid};
use fluidqoe::inversion::{self_test, InversionParams};
use fluidqoe::qoe::{compare_scenarios, CostOptions, CostWeights, Policy, ScenarioSpec};
use fluidqoe::sim::{monte_carlo, run_replications, SimConfig, SimGrids};
use fluidqoe::spectral::{characteristic_roots, transform_matrix, two_state_transform, TransformKind, TwoStateParams, C64};
use fluidqoe::starvation::starvation_probability;
use fluidqoe::startup::session_startup_cdf;
use fluidqoe::{FluidModel, RateMode, SessionParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn reference() -> FluidModel {
    FluidModel::two_state(2.0, 6.0, 2.0, 30.0, 25.0).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_inversion() -> Outcome {
    let r = self_test(&InversionParams::default());
    ensure(r.max_error < 1e-6, || format!("max error {:.3e} at t = {}", r.max_error, r.worst_t))?;
    Ok(format!("max error {:.2e} over t = 0.1..5.0", r.max_error))
}

fn c2_closed_form() -> Outcome {
    let cases = [
        ("lambda1 < mu < lambda2", TwoStateParams { alpha: 2.0, beta: 6.0, lambda1: 2.0, lambda2: 30.0, mu: 25.0 }),
        ("both below mu", TwoStateParams { alpha: 2.0, beta: 6.0, lambda1: 5.0, lambda2: 20.0, mu: 25.0 }),
        ("both above mu", TwoStateParams { alpha: 2.0, beta: 6.0, lambda1: 30.0, lambda2: 40.0, mu: 25.0 }),
        ("on-off", TwoStateParams { alpha: 6.0, beta: 2.0, lambda1: 30.0, lambda2: 0.0, mu: 25.0 }),
    ];
    let res = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];
    let mut worst = 0.0f64;
    let mut count = 0;
    for (name, p) in &cases {
        let model = p.model().map_err(|e| e.to_string())?;
        for kind in [TransformKind::Starvation, TransformKind::Startup] {
            for &re in &res {
                for im in [0.0, 1.0, -1.0, re, -re] {
                    let w = C64::new(re, im);
                    for x in [0.0, 1.0, 40.0] {
                        let a = two_state_transform(p, x, w, kind).map_err(|e| format!("{name}: {e}"))?;
                        let b = transform_matrix(&model, x, w, kind.mode()).map_err(|e| format!("{name}: {e}"))?;
                        let d = (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max);
                        ensure(d < 1e-10, || format!("{name} {kind:?} w = {w} x = {x}: difference {d:.3e}"))?;
                        worst = worst.max(d);
                        count += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{count} evaluations, max difference {worst:.2e}"))
}

/// Expected `(negative, positive)` root counts for the two-state quadratic at real `w > 0`:
/// with product `c / (r1 r2)` and sum `b / (r1 r2)` of the roots, both roots
/// follow the common sign of the rates, opposite signs split them, and a
/// single zero rate leaves one root with the sign of the other rate.
fn proposition_case(r1: f64, r2: f64) -> (usize, usize) {
    let sign = |r: f64| (r < 0.0) as usize;
    match (r1 == 0.0, r2 == 0.0) {
        (true, true) => (0, 0),
        (true, false) => (sign(r2), 1 - sign(r2)),
        (false, true) => (sign(r1), 1 - sign(r1)),
        (false, false) => (sign(r1) + sign(r2), 2 - sign(r1) - sign(r2)),
    }
}

fn c3_propositions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut zero_rate = 0;
    let mut equal = 0;
    for k in 0..200 {
        let alpha = rng.random_range(0.1..10.0);
        let beta = rng.random_range(0.1..10.0);
        let mu = rng.random_range(1.0..50.0);
        let mut l1 = rng.random_range(0.0..2.0 * mu);
        let mut l2 = rng.random_range(0.0..2.0 * mu);
        match k % 5 {
            0 => {
                l1 = mu;
                zero_rate += 1;
            }
            1 => {
                l2 = l1;
                equal += 1;
            }
            2 if k % 10 == 2 => {
                l2 = 0.0;
            }
            _ => {}
        }
        let model = FluidModel::two_state(alpha, beta, l1, l2, mu).map_err(|e| e.to_string())?;
        let w = rng.random_range(0.001..20.0);
        for mode in [RateMode::Playback, RateMode::Prefetch] {
            let rates = model.effective_rates(mode);
            let (neg, pos) = proposition_case(rates[0], rates[1]);
            let sol = characteristic_roots(&model, C64::new(w, 0.0), mode).map_err(|e| e.to_string())?;
            let got_neg = sol.roots.iter().filter(|s| s.re < 0.0).count();
            let got_pos = sol.roots.iter().filter(|s| s.re > 0.0).count();
            ensure((got_neg, got_pos) == (neg, pos), || {
                format!(
                    "config {k} (alpha {alpha}, beta {beta}, lambda ({l1}, {l2}), mu {mu}, w {w}, {mode:?}): roots {:?}, expected {neg} negative and {pos} positive",
                    sol.roots
                )
            })?;
        }
    }
    Ok(format!("200 configurations ({zero_rate} with lambda = mu, {equal} with equal lambdas), both modes"))
}

fn c4_starvation_vs_sim() -> Outcome {
    let m = reference();
    let p = InversionParams::default();
    let mut worst = 0.0f64;
    for x in [20.0, 40.0, 80.0, 160.0] {
        for z in [250.0, 500.0, 1000.0] {
            let s = SessionParams::new(x, z).map_err(|e| e.to_string())?;
            let analytic = starvation_probability(&m, &s, &p).map_err(|e| e.to_string())?;
            let sim = monte_carlo(&m, &s, &SimConfig::new(100_000, 1000 + x as u64 + z as u64), &SimGrids::default())
                .map_err(|e| e.to_string())?;
            let e = sim.starvation_probability;
            let gap = (analytic - e.mean).abs();
            ensure(gap <= e.ci_half_width + 0.01, || {
                format!("x = {x}, Z = {z}: analytic {analytic:.5} vs simulated {:.5} +- {:.5}", e.mean, e.ci_half_width)
            })?;
            worst = worst.max(gap - e.ci_half_width);
        }
    }
    Ok(format!("12 (x, Z) pairs, largest excess over CI {worst:.4}"))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let k = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[k]
}

fn c5_startup() -> Outcome {
    let m = reference();
    let p = InversionParams::default();
    let pi = m.stationary_distribution().map_err(|e| e.to_string())?;
    let xs = [20.0, 50.0, 100.0];
    let mut worst = 0.0f64;
    let mut all_t = Vec::new();
    for (k, &x) in xs.iter().enumerate() {
        let s = SessionParams::new(x, 1000.0).map_err(|e| e.to_string())?;
        let runs = run_replications(&m, &s, &SimConfig::new(20_000, 70 + k as u64)).map_err(|e| e.to_string())?;
        let mut delays: Vec<f64> = runs.iter().map(|o| o.startup_delay).collect();
        delays.sort_by(f64::total_cmp);
        for i in 0..10 {
            let t = quantile(&delays, 0.05 + 0.1 * i as f64);
            let empirical = delays.partition_point(|&d| d <= t) as f64 / delays.len() as f64;
            let analytic = session_startup_cdf(&m, x, t, &pi, &p).map_err(|e| e.to_string())?;
            let gap = (analytic - empirical).abs();
            ensure(gap < 0.02, || format!("x = {x}, t = {t:.4}: analytic {analytic:.4} vs empirical {empirical:.4}"))?;
            worst = worst.max(gap);
            all_t.push(t);
        }
    }
    all_t.sort_by(f64::total_cmp);
    for &t in &all_t {
        let f: Vec<f64> = xs
            .iter()
            .map(|&x| session_startup_cdf(&m, x, t, &pi, &p))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for w in f.windows(2) {
            ensure(w[1] <= w[0] + 1e-7, || format!("CDF not ordered in x at t = {t}: {f:?}"))?;
        }
    }
    Ok(format!("30 quantile points, max gap {:.2} pp, ordered in x at {} points", worst * 100.0, all_t.len()))
}

fn onoff() -> FluidModel {
    FluidModel::two_state(6.0, 2.0, 30.0, 0.0, 25.0).unwrap()
}

fn c6_count_pmf() -> Outcome {
    let m = onoff();
    let p = InversionParams::default();
    let s = SessionParams::new(100.0, 600.0).map_err(|e| e.to_string())?;
    let grid = PathGrid::aligned(&m, &s, 16).map_err(|e| e.to_string())?;
    let pmf = starvation_count_pmf(&m, &s, 3, &grid, &p).map_err(|e| e.to_string())?;
    let total: f64 = pmf.p.iter().sum::<f64>() + pmf.tail;
    ensure((0.98..=1.02).contains(&total), || format!("sum of P(j <= 3) + tail = {total}"))?;
    let sim = monte_carlo(&m, &s, &SimConfig::new(100_000, 606), &SimGrids::default()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for j in 0..=2 {
        let gap = (pmf.p[j] - sim.histogram_value(j)).abs();
        let tol = sim.histogram_ci(j).max(0.02);
        ensure(gap <= tol, || format!("P({j}) = {:.4} vs simulated {:.4}", pmf.p[j], sim.histogram_value(j)))?;
        worst = worst.max(gap);
    }

    let zs: Vec<f64> = (1..=30).map(|k| 200.0 * k as f64).collect();
    let sweep = starvation_count_pmf_sweep(&m, 100.0, &zs, 12, 16, &p).map_err(|e| e.to_string())?;
    let mut shape = Vec::new();
    for j in [1, 2] {
        let series: Vec<f64> = sweep.iter().map(|r| r.p[j]).collect();
        let (peak, top) = series
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let rises = series[..=peak].windows(2).all(|w| w[1] >= w[0] - 1e-9);
        let decays = series[peak..].windows(2).all(|w| w[1] <= w[0] + 1e-9);
        let last = series[series.len() - 1];
        ensure(peak > 0 && peak < series.len() - 1 && rises && decays && last < 0.01 * top, || {
            format!("P({j}) over Z is not rise-then-decay: {series:?}")
        })?;
        shape.push(format!("P({j}) peaks {top:.3} at Z = {}", zs[peak]));
    }
    Ok(format!("mass {total:.6}, max gap to simulation {:.2} pp, {}", worst * 100.0, shape.join(", ")))
}

fn c7_monotone() -> Outcome {
    let m = reference();
    let p = InversionParams::default();
    let z = 1000.0;
    let xs = fluidqoe::util::linspace(10.0, 950.0, 30);
    let ps: Vec<f64> = xs
        .iter()
        .map(|&x| starvation_probability(&m, &SessionParams::new(x, z).unwrap(), &p))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for (i, w) in ps.windows(2).enumerate() {
        ensure(w[1] <= w[0], || format!("P_s increases from x = {} to x = {}: {} -> {}", xs[i], xs[i + 1], w[0], w[1]))?;
    }
    let last = ps[ps.len() - 1];
    ensure(last < 0.01, || format!("P_s at x = {} is {last}", xs[xs.len() - 1]))?;

    let zs = fluidqoe::util::linspace(50.0, 5000.0, 30);
    let pz: Vec<f64> = zs
        .iter()
        .map(|&z| starvation_probability(&m, &SessionParams::new(40.0, z).unwrap(), &p))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for (i, w) in pz.windows(2).enumerate() {
        ensure(w[1] >= w[0], || format!("P_s decreases from Z = {} to Z = {}: {} -> {}", zs[i], zs[i + 1], w[0], w[1]))?;
    }
    Ok(format!("P_s(x) {:.4} -> {last:.2e} over x = 10..950, P_s(Z) {:.4} -> {:.4}", ps[0], pz[0], pz[pz.len() - 1]))
}

fn scenario() -> ScenarioSpec {
    ScenarioSpec {
        mode: Policy::Adaptive,
        throughput: vec![200e3, 400e3],
        frame_bits: vec![10e3, 20e3],
        quality_loss: vec![1.0, 0.0],
        alpha: 3.0,
        beta: 2.0,
        mu: 15.0,
    }
}

fn c8_crossover() -> Outcome {
    let spec = scenario();
    let zs: Vec<f64> = (1..=40).map(|k| 50.0 * k as f64).collect();
    let opts = CostOptions::default();
    let mut stars = Vec::new();
    for c3 in [0.0, 1.0, 1.5] {
        let w = CostWeights::new(1.0, 0.1, c3).map_err(|e| e.to_string())?;
        let r = compare_scenarios(&spec, &w, &zs, 20.0, &opts).map_err(|e| e.to_string())?;
        if c3 == 0.0 {
            ensure(r.adaptive_dominates, || "c3 = 0: adaptive is not cheaper at every Z".into())?;
        } else {
            let z = r.crossover.ok_or_else(|| format!("c3 = {c3}: no crossover up to Z = 2000"))?;
            stars.push((c3, z));
        }
    }
    ensure(stars[1].1 >= stars[0].1, || format!("Z*(1.5) = {} < Z*(1.0) = {}", stars[1].1, stars[0].1))?;
    Ok(format!("c3 = 0 adaptive dominates, Z*(1.0) = {}, Z*(1.5) = {}", stars[0].1, stars[1].1))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fluidqoe")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_cli(args: &[&str], threads: Option<usize>) -> Result<(), String> {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    if let Some(n) = threads {
        cmd.env("FLUIDQOE_THREADS", n.to_string());
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("fluidqoe {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn same_bytes(a: &Path, b: &Path) -> Result<(), String> {
    let x = std::fs::read(a).map_err(|e| format!("{}: {e}", a.display()))?;
    let y = std::fs::read(b).map_err(|e| format!("{}: {e}", b.display()))?;
    ensure(x == y, || format!("{} and {} differ", a.display(), b.display()))
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = configs();
    let (ref_path, onoff_path, scen_path) = (cfg.join("ref2state.json"), cfg.join("onoff.json"), cfg.join("scenario.json"));
    let (r, o, s) = (ref_path.to_str().unwrap(), onoff_path.to_str().unwrap(), scen_path.to_str().unwrap());
    let runs: Vec<(&str, Vec<&str>, bool)> = vec![
        ("validate", vec!["validate", "--config", r], false),
        ("starvation", vec!["starvation", "--config", r, "--x", "40", "--Z", "500"], false),
        ("startup", vec!["startup", "--config", r, "--x", "50"], false),
        ("events", vec!["events", "--config", o, "--jmax", "4"], false),
        ("simulate", vec!["simulate", "--config", r, "--reps", "4000", "--seed", "9"], false),
        ("optimize", vec!["optimize", "--scenario", s, "--weights", "1,0.1,1", "--x-grid", "5:100:12", "--Z", "1000"], true),
        ("compare", vec!["compare", "--scenario", s, "--weights", "1,0.1,1", "--Z-grid", "50:2000:40", "--x", "20"], true),
        ("invert-selftest", vec!["invert-selftest"], false),
    ];
    for (name, args, summary) in &runs {
        let first = dir.path().join(format!("{name}.out"));
        let second = dir.path().join(format!("{name}.replay"));
        let mut a = args.clone();
        let fs = first.to_str().unwrap();
        a.extend(["--out", fs]);
        run_cli(&a, None)?;
        let manifest = dir.path().join(format!("{name}.out.manifest.json"));
        run_cli(&["replay", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()], None)?;
        same_bytes(&first, &second)?;
        if *summary {
            same_bytes(&dir.path().join(format!("{name}.out.summary.json")), &dir.path().join(format!("{name}.replay.summary.json")))?;
        }
    }

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4).max(4);
    let one = dir.path().join("sim1.json");
    let many = dir.path().join("simn.json");
    let sim_args = |p: &Path| vec!["simulate".to_string(), "--config".into(), r.into(), "--reps".into(), "20000".into(), "--seed".into(), "5".into(), "--out".into(), p.to_str().unwrap().into()];
    let a1 = sim_args(&one);
    let an = sim_args(&many);
    run_cli(&a1.iter().map(String::as_str).collect::<Vec<_>>(), Some(1))?;
    run_cli(&an.iter().map(String::as_str).collect::<Vec<_>>(), Some(workers))?;
    same_bytes(&one, &many)?;

    // the same check in-process, on explicit pools
    let m = reference();
    let session = SessionParams::new(40.0, 500.0).unwrap();
    let sim = SimConfig::new(20_000, 77);
    let in_pool = |n: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| monte_carlo(&m, &session, &sim, &SimGrids::default()))
    };
    let a = in_pool(1).map_err(|e| e.to_string())?;
    let b = in_pool(workers).map_err(|e| e.to_string())?;
    ensure(a == b, || "monte_carlo differs between 1 and N workers".into())?;
    Ok(format!("{} subcommands replayed byte-identically; simulate identical on 1 and {workers} workers", runs.len()))
}

struct Criterion {
    id: u32,
    name: &'static str,
    bound: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "inversion accuracy", bound: Duration::from_secs(1), run: c1_inversion },
        Criterion { id: 2, name: "closed form equals generic pipeline", bound: Duration::from_secs(5), run: c2_closed_form },
        Criterion { id: 3, name: "root sign placement", bound: Duration::from_secs(5), run: c3_propositions },
        Criterion { id: 4, name: "starvation probability vs simulation", bound: Duration::from_secs(120), run: c4_starvation_vs_sim },
        Criterion { id: 5, name: "start-up delay CDF", bound: Duration::from_secs(60), run: c5_startup },
        Criterion { id: 6, name: "starvation count PMF", bound: Duration::from_secs(300), run: c6_count_pmf },
        Criterion { id: 7, name: "monotonicity sweeps", bound: Duration::from_secs(120), run: c7_monotone },
        Criterion { id: 8, name: "cost crossover", bound: Duration::from_secs(180), run: c8_crossover },
        Criterion { id: 9, name: "determinism", bound: Duration::from_secs(600), run: c9_determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= c.bound => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] criterion {}: {} ({:.2} s of {} s): {}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.bound.as_secs(),
            detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
