use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::flops::FlopReport;
use crate::error::{Error, Result};

/// Loss and accuracy of one model on one split after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    /// `semantic`, `rgb` or `fusion`.
    pub model: String,
    /// `train` records are running averages over the epoch's batches;
    /// `test` records are inference-mode evaluations.
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub fused: f64,
    pub semantic: f64,
    pub rgb: f64,
}

/// Evidence that stage two leaves the branches untouched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub checksum_before: u64,
    pub checksum_after: u64,
    /// Largest `|∂L/∂θ|` over branch parameters in a full-graph stage-two
    /// pass, as raw bits so exact zero is unambiguous.
    pub probe_max_abs_grad_bits: u64,
    pub probe_parameters: usize,
}

impl FreezeReport {
    pub fn probe_max_abs_grad(&self) -> f64 {
        f64::from_bits(self.probe_max_abs_grad_bits)
    }

    pub fn holds(&self) -> bool {
        self.checksum_before == self.checksum_after && self.probe_max_abs_grad() == 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub updates: usize,
    pub max_step: f64,
    pub max_lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
    pub train: Accuracies,
    pub test: Accuracies,
    pub freeze: FreezeReport,
    pub steps: StepSummary,
    pub flops: FlopReport,
}

impl RunMetrics {
    /// A copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut m = self.clone();
        for r in &mut m.records {
            r.wall_ms = 0;
        }
        m
    }

    /// Writes one JSON line per epoch record followed by a summary line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let ser = |v: serde_json::Value| serde_json::to_string(&v).map_err(|e| Error::Serde(e.to_string()));
        for r in &self.records {
            let mut v = serde_json::to_value(r).map_err(|e| Error::Serde(e.to_string()))?;
            v["kind"] = "epoch".into();
            writeln!(w, "{}", ser(v)?).map_err(io)?;
        }
        let summary = serde_json::json!({
            "kind": "summary",
            "train": self.train,
            "test": self.test,
            "freeze": self.freeze,
            "freeze_holds": self.freeze.holds(),
            "steps": self.steps,
            "flops": self.flops,
        });
        writeln!(w, "{}", ser(summary)?).map_err(io)?;
        w.flush().map_err(io)
    }
}
