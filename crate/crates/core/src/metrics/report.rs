use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance stamped on every report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub method: String,
    pub seed: u64,
    pub lambda: f64,
    pub beta: f64,
    pub dataset_hash: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub delta_eo: f64,
    pub delta_dp: f64,
    pub estimation_auc: Option<f64>,
    pub metadata: RunMetadata,
}

impl FairnessReport {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("accuracy", self.accuracy),
            ("delta_eo", self.delta_eo),
            ("delta_dp", self.delta_dp),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Metric(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if let Some(auc) = self.estimation_auc {
            if !(0.5..=1.0).contains(&auc) {
                return Err(Error::Metric(format!("estimation_auc = {auc} outside [0.5, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat `key=value` lines; floats use the shortest round-trip form.
    pub fn to_key_value(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        let _ = writeln!(out, "method={}", m.method);
        let _ = writeln!(out, "seed={}", m.seed);
        let _ = writeln!(out, "lambda={}", m.lambda);
        let _ = writeln!(out, "beta={}", m.beta);
        let _ = writeln!(out, "dataset_hash={}", m.dataset_hash);
        let _ = writeln!(out, "config_hash={}", m.config_hash);
        let _ = writeln!(out, "accuracy={}", self.accuracy);
        let _ = writeln!(out, "delta_eo={}", self.delta_eo);
        let _ = writeln!(out, "delta_dp={}", self.delta_dp);
        match self.estimation_auc {
            Some(a) => {
                let _ = writeln!(out, "estimation_auc={a}");
            }
            None => {
                let _ = writeln!(out, "estimation_auc=");
            }
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.txt` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let kv = dir.join(format!("{stem}.txt"));
        std::fs::write(&kv, self.to_key_value()).map_err(|e| Error::io(&kv, e))?;
        Ok(())
    }
}
