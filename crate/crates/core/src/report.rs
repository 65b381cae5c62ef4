//! The JSON bounds report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsReport {
    pub l_hat: f64,
    pub sigma_l: f64,
    pub u_hat: f64,
    pub sigma_u: f64,
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub m_l: usize,
    pub m_u: usize,
    pub j_inner: usize,
    pub seed_train: u64,
    pub seed_eval: u64,
    pub runtime_seconds: f64,
}

impl BoundsReport {
    /// JSON with a fixed key order; reals carry 17 significant digits so they
    /// parse back to the same bits.
    pub fn to_json(&self) -> Result<String> {
        let reals = [
            ("l_hat", self.l_hat),
            ("sigma_l", self.sigma_l),
            ("u_hat", self.u_hat),
            ("sigma_u", self.sigma_u),
            ("point_estimate", self.point_estimate),
            ("ci_low", self.ci_low),
            ("ci_high", self.ci_high),
            ("alpha", self.alpha),
        ];
        let counts = [
            ("m_l", self.m_l as u64),
            ("m_u", self.m_u as u64),
            ("j_inner", self.j_inner as u64),
            ("seed_train", self.seed_train),
            ("seed_eval", self.seed_eval),
        ];
        let mut out = String::from("{\n");
        for (key, v) in reals {
            writeln!(out, "  \"{key}\": {},", real(key, v)?).expect("write to string");
        }
        for (key, v) in counts {
            writeln!(out, "  \"{key}\": {v},").expect("write to string");
        }
        writeln!(out, "  \"runtime_seconds\": {}", real("runtime_seconds", self.runtime_seconds)?).expect("write to string");
        out.push_str("}\n");
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("bad report: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn real(key: &str, v: f64) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::Data(format!("report field {key} is not finite ({v})")));
    }
    Ok(format!("{v:.16e}"))
}
