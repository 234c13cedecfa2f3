//! Numerical Laplace inversion on the positive real axis.
//!
//! The Bromwich integral is discretized with the trapezoidal rule at
//! abscissa `b = A / (2 l t)` and step `pi / (l t)`, which turns it into a
//! nearly alternating series. Euler summation then takes the binomial
//! average of the partial sums `s_n, ..., s_{n+m}`. The discretization error
//! is about `exp(-A)` for bounded functions; the round-off error grows like
//! `exp(A / 2l) * eps`, which bounds how large `A` may be in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::C64;

/// Largest tolerated round-off amplification `exp(A/2l) * eps`.
const ROUNDOFF_BUDGET: f64 = 1e-6;
/// Inverted CDF values outside `[-OUT_OF_RANGE, 1 + OUT_OF_RANGE]` are errors.
const OUT_OF_RANGE: f64 = 1e-3;
const CLAMP_TOL: f64 = 1e-6;

/// Euler-summation tuple `(l, m, n, A)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionParams {
    pub l: u32,
    pub m: u32,
    pub n: u32,
    #[serde(rename = "A")]
    pub a: f64,
}

impl Default for InversionParams {
    fn default() -> Self {
        InversionParams { l: 1, m: 11, n: 38, a: 19.0 }
    }
}

impl InversionParams {
    /// `(1, M, M, 2 ln(10) M / 3)` with `M = 64`. Needs far more than 64-bit
    /// precision and is rejected by [`InversionParams::validate`].
    pub fn extended_precision_tuple() -> Self {
        let m = 64;
        InversionParams { l: 1, m, n: m, a: 2.0 * 10f64.ln() * m as f64 / 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 1 || self.m < 1 || self.n < 1 {
            return Err(Error::InvalidInversionParams(format!(
                "l, m and n must all be >= 1, got ({}, {}, {})",
                self.l, self.m, self.n
            )));
        }
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::InvalidInversionParams(format!("A = {} must be > 0", self.a)));
        }
        let scale = (self.a / (2.0 * self.l as f64)).exp();
        if !scale.is_finite() || scale * f64::EPSILON > ROUNDOFF_BUDGET {
            return Err(Error::OverflowRisk { a: self.a, scale });
        }
        Ok(())
    }

    /// Distinct transform evaluations per inversion: `l (n + m) + 1`.
    pub fn transform_evaluations(&self) -> usize {
        (self.l * (self.n + self.m) + 1) as usize
    }

    /// Summands in the explicit double sum `sum_{k<=m} sum_{q<=n+k}`,
    /// `(m + 1)(m + 2n + 2) / 2`.
    pub fn euler_summand_count(&self) -> usize {
        let (m, n) = (self.m as usize, self.n as usize);
        (m + 1) * (m + 2 * n + 2) / 2
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::InvalidInversionParams(format!("expected l,m,n,A, got {s:?}"));
        if parts.len() != 4 {
            return Err(bad());
        }
        Ok(InversionParams {
            l: parts[0].parse().map_err(|_| bad())?,
            m: parts[1].parse().map_err(|_| bad())?,
            n: parts[2].parse().map_err(|_| bad())?,
            a: parts[3].parse().map_err(|_| bad())?,
        })
    }
}

/// Inverts a vector-valued ordinary Laplace transform at `t`.
///
/// `eval` receives each frequency once and writes `width` transform values.
/// Only frequencies in the upper half-plane are requested; the transform must
/// satisfy `f(conj w) = conj f(w)`.
pub fn invert_many<F>(mut eval: F, width: usize, t: f64, p: &InversionParams) -> Result<Vec<f64>>
where
    F: FnMut(C64, &mut [C64]) -> Result<()>,
{
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::DomainError(format!("inversion time t = {t} must be > 0")));
    }
    p.validate()?;
    let l = p.l as f64;
    let b = p.a / (2.0 * l * t);
    let scale = (p.a / (2.0 * l)).exp() / (2.0 * l * t);
    let terms = (p.n + p.m) as usize;

    let mut buf = vec![C64::new(0.0, 0.0); width];
    let mut partial = vec![0.0; width];
    eval(C64::new(b, 0.0), &mut buf)?;
    for (s, v) in partial.iter_mut().zip(&buf) {
        *s = scale * v.re;
    }

    let weights = binomial_weights(p.m);
    let mut out = vec![0.0; width];
    for k in 1..=terms {
        for j in 1..=p.l {
            let idx = ((k as u32 - 1) * p.l + j) as f64;
            let z = C64::new(b, idx * std::f64::consts::PI / (l * t));
            let phase = C64::from_polar(1.0, idx * std::f64::consts::PI / l);
            eval(z, &mut buf)?;
            for (s, v) in partial.iter_mut().zip(&buf) {
                *s += 2.0 * scale * (v * phase).re;
            }
        }
        if k >= p.n as usize {
            accumulate(&mut out, &partial, weights[k - p.n as usize]);
        }
    }
    Ok(out)
}

fn accumulate(out: &mut [f64], partial: &[f64], w: f64) {
    for (o, s) in out.iter_mut().zip(partial) {
        *o += w * s;
    }
}

/// `C(m, k) 2^-m` for `k = 0..=m`.
fn binomial_weights(m: u32) -> Vec<f64> {
    let mut w = vec![0.0; m as usize + 1];
    let mut c = 1.0f64;
    for k in 0..=m as usize {
        w[k] = c;
        c = c * (m as usize - k) as f64 / (k + 1) as f64;
    }
    let norm = 2f64.powi(m as i32);
    w.iter_mut().for_each(|v| *v /= norm);
    w
}

/// Inverts a scalar ordinary Laplace transform at `t`.
pub fn invert<F>(f: F, t: f64, p: &InversionParams) -> Result<f64>
where
    F: Fn(C64) -> C64,
{
    invert_many(
        |w, out| {
            out[0] = f(w);
            Ok(())
        },
        1,
        t,
        p,
    )
    .map(|v| v[0])
}

/// A CDF value recovered from its Laplace-Stieltjes transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfValue {
    pub raw: f64,
    /// `raw` clamped into `[0, 1]`.
    pub value: f64,
    /// True when `raw` left `[0, 1]` by more than `1e-6`.
    pub suspicious: bool,
}

impl CdfValue {
    pub fn from_raw(raw: f64, t: f64) -> Result<Self> {
        if !(raw >= -OUT_OF_RANGE && raw <= 1.0 + OUT_OF_RANGE) {
            return Err(Error::OutOfRange { value: raw, t });
        }
        Ok(CdfValue {
            raw,
            value: raw.clamp(0.0, 1.0),
            suspicious: raw < -CLAMP_TOL || raw > 1.0 + CLAMP_TOL,
        })
    }
}

/// CDF at `t` from its LST, by inverting `lst(w) / w`.
pub fn invert_cdf<F>(lst: F, t: f64, p: &InversionParams) -> Result<CdfValue>
where
    F: Fn(C64) -> C64,
{
    let raw = invert(|w| lst(w) / w, t, p)?;
    CdfValue::from_raw(raw, t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTestReport {
    pub params: InversionParams,
    pub reference: &'static str,
    pub points: usize,
    pub max_error: f64,
    pub worst_t: f64,
    pub passed: bool,
    pub transform_evaluations: usize,
    pub error: Option<String>,
}

pub const SELF_TEST_TOLERANCE: f64 = 1e-6;

/// Inverts `pi / ((s + 2)^2 + pi^2)` on `t = 0.1, 0.2, ..., 5.0` and
/// compares against `exp(-2t) sin(pi t)`.
pub fn self_test(p: &InversionParams) -> SelfTestReport {
    use std::f64::consts::PI;
    let transform = |s: C64| C64::new(PI, 0.0) / ((s + 2.0) * (s + 2.0) + PI * PI);
    let mut report = SelfTestReport {
        params: *p,
        reference: "exp(-2t) sin(pi t)",
        points: 50,
        max_error: 0.0,
        worst_t: 0.0,
        passed: false,
        transform_evaluations: p.transform_evaluations(),
        error: None,
    };
    for k in 1..=50 {
        let t = k as f64 / 10.0;
        match invert(transform, t, p) {
            Ok(v) => {
                let err = (v - (-2.0 * t).exp() * (PI * t).sin()).abs();
                if !(err <= report.max_error) {
                    report.max_error = err;
                    report.worst_t = t;
                }
            }
            Err(e) => {
                report.max_error = f64::INFINITY;
                report.worst_t = t;
                report.error = Some(e.to_string());
                return report;
            }
        }
    }
    report.passed = report.max_error < SELF_TEST_TOLERANCE;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;
    use std::f64::consts::PI;

    fn damped_sine(s: C64) -> C64 {
        C64::new(PI, 0.0) / ((s + 2.0) * (s + 2.0) + PI * PI)
    }

    #[test]
    fn damped_sine_values() {
        let p = InversionParams::default();
        assert!(invert(damped_sine, 1.0, &p).unwrap().abs() < 1e-6);
        let half = invert(damped_sine, 0.5, &p).unwrap();
        assert!((half - (-1f64).exp()).abs() < 1e-6, "{half}");
    }

    #[test]
    fn unit_step() {
        let p = InversionParams::default();
        for t in [0.01, 0.3, 1.0, 7.5, 120.0] {
            let v = invert(|s| s.inv(), t, &p).unwrap();
            assert!((v - 1.0).abs() < 1e-8, "t={t}: {v}");
            let cdf = invert_cdf(|_| C64::new(1.0, 0.0), t, &p).unwrap();
            assert!((cdf.value - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn self_test_default_passes() {
        let r = self_test(&InversionParams::default());
        assert!(r.passed, "{r:?}");
        assert!(r.max_error < 1e-6);
    }

    #[test]
    fn extended_precision_tuple_is_refused() {
        let p = InversionParams::extended_precision_tuple();
        assert!((p.a - 98.2436).abs() < 1e-3);
        assert!(matches!(p.validate(), Err(Error::OverflowRisk { .. })));
        let r = self_test(&p);
        assert!(!r.passed);
        assert!(r.error.unwrap().contains("OverflowRisk"));
    }

    #[test]
    fn degenerate_params_report_without_panicking() {
        let r = self_test(&InversionParams { l: 1, m: 0, n: 1, a: 19.0 });
        assert!(!r.passed);
        assert!(r.max_error.is_infinite());
    }

    #[test]
    fn rejects_nonpositive_time() {
        let p = InversionParams::default();
        assert!(matches!(invert(damped_sine, 0.0, &p), Err(Error::DomainError(_))));
        assert!(invert(damped_sine, -1.0, &p).is_err());
    }

    #[test]
    fn evaluation_count() {
        for p in [
            InversionParams::default(),
            InversionParams { l: 2, m: 9, n: 20, a: 19.0 },
        ] {
            let calls = Cell::new(0usize);
            invert(
                |s| {
                    calls.set(calls.get() + 1);
                    damped_sine(s)
                },
                0.7,
                &p,
            )
            .unwrap();
            assert_eq!(calls.get(), p.transform_evaluations());
        }
        assert_eq!(InversionParams::default().euler_summand_count(), 12 * 89 / 2);
    }

    #[test]
    fn larger_l_also_converges() {
        let p = InversionParams { l: 2, m: 11, n: 38, a: 19.0 };
        let v = invert(damped_sine, 0.5, &p).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn linear_and_deterministic() {
        let p = InversionParams::default();
        let g = |s: C64| (s + 1.0).inv();
        let (a, b) = (0.3, -1.7);
        for t in [0.2, 1.1, 3.0] {
            let lhs = invert(|s| damped_sine(s) * a + g(s) * b, t, &p).unwrap();
            let rhs = a * invert(damped_sine, t, &p).unwrap() + b * invert(g, t, &p).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
            assert_eq!(
                invert(g, t, &p).unwrap().to_bits(),
                invert(g, t, &p).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn cdf_range_checks() {
        assert!(CdfValue::from_raw(1.0005, 1.0).unwrap().suspicious);
        assert_eq!(CdfValue::from_raw(-1e-7, 1.0).unwrap().value, 0.0);
        assert!(matches!(CdfValue::from_raw(1.01, 1.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn parse_tuple() {
        let p = InversionParams::parse("1, 11, 38, 19").unwrap();
        assert_eq!(p, InversionParams::default());
        assert!(InversionParams::parse("1,2,3").is_err());
    }
}
