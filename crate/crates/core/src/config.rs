//! JSON configuration files. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::InversionParams;
use crate::model::{FluidModel, SessionParams};
use crate::qoe::ScenarioSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub content: String,
    pub time: String,
}

impl Units {
    fn check(&self) -> Result<()> {
        if self.content != "frames" || self.time != "seconds" {
            return Err(Error::Config(format!(
                "units must be frames and seconds, got {} and {}",
                self.content, self.time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub states: usize,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(rename = "Z", default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Units>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion: Option<InversionParams>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(u) = &cfg.units {
            u.check()?;
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<FluidModel> {
        if self.q.len() != self.states || self.lambda.len() != self.states {
            return Err(Error::DimensionMismatch(format!(
                "states = {} but Q has {} rows and lambda has {} entries",
                self.states,
                self.q.len(),
                self.lambda.len()
            )));
        }
        FluidModel::new(self.q.clone(), self.lambda.clone(), self.mu)
    }

    /// Session parameters, command-line values taking precedence.
    pub fn session(&self, x: Option<f64>, z: Option<f64>) -> Result<SessionParams> {
        let x = x.or(self.x).ok_or_else(|| Error::Config("x is neither in the config nor given".into()))?;
        let z = z.or(self.z).ok_or_else(|| Error::Config("Z is neither in the config nor given".into()))?;
        SessionParams::new(x, z)
    }

    pub fn inversion_params(&self) -> Result<InversionParams> {
        let p = self.inversion.unwrap_or_default();
        p.validate()?;
        Ok(p)
    }
}

pub fn scenario_from_json(text: &str) -> Result<ScenarioSpec> {
    let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Parses the inclusive grid notation `start:end:count`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::InvalidGrid(format!("expected start:end:count, got '{s}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() || (n > 1 && b < a) || (n == 1 && a != b) {
        return Err(bad());
    }
    Ok(crate::util::linspace(a, b, n))
}
