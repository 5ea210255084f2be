//! Grid of training runs over filter window, channel attention, fusion head
//! and vocabulary size.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{train_two_stage, Dataset};
use crate::error::{Error, Result};
use crate::fusion::FusionKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationMatrix {
    pub windows: Vec<usize>,
    pub cham: Vec<bool>,
    pub fusion: Vec<FusionKind>,
    /// `None` keeps the full vocabulary.
    pub vocabulary: Vec<Option<usize>>,
}

impl Default for AblationMatrix {
    fn default() -> Self {
        Self {
            windows: vec![1, 2, 4],
            cham: vec![true, false],
            fusion: FusionKind::ALL.to_vec(),
            vocabulary: vec![None],
        }
    }
}

impl AblationMatrix {
    pub fn cells(&self) -> usize {
        self.windows.len() * self.cham.len() * self.fusion.len() * self.vocabulary.len()
    }

    /// One configuration per cell, varying the last axis fastest.
    pub fn configs(&self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let mut out = Vec::with_capacity(self.cells());
        for &w in &self.windows {
            for &c in &self.cham {
                for &f in &self.fusion {
                    for &v in &self.vocabulary {
                        let mut cfg = base.clone();
                        cfg.filter_window = w;
                        cfg.cham = Some(c);
                        cfg.fusion.kind = f;
                        cfg.vocabulary = v;
                        out.push(cfg);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub window: usize,
    pub cham: bool,
    pub fusion: FusionKind,
    pub vocabulary: Option<usize>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub semantic_test_accuracy: f64,
    pub rgb_test_accuracy: f64,
    pub semantic_macs: u64,
    pub fusion_head_macs: u64,
}

/// Trains every cell on the same scenes with the base seed and returns one
/// row per cell.
pub fn ablate(base: &ExperimentConfig, matrix: &AblationMatrix, data: &Dataset) -> Result<Vec<AblationRow>> {
    if matrix.cells() == 0 {
        return Err(Error::Config("ablation matrix has an empty axis".into()));
    }
    matrix
        .configs(base)
        .iter()
        .map(|cfg| {
            let out = train_two_stage(cfg, data, None)?;
            let m = &out.metrics;
            Ok(AblationRow {
                window: cfg.filter_window,
                cham: cfg.cham.unwrap_or(true),
                fusion: cfg.fusion.kind,
                vocabulary: cfg.vocabulary,
                train_accuracy: m.train.fused,
                test_accuracy: m.test.fused,
                semantic_test_accuracy: m.test.semantic,
                rgb_test_accuracy: m.test.rgb,
                semantic_macs: m.flops.semantic,
                fusion_head_macs: m.flops.fusion_head,
            })
        })
        .collect()
}

pub fn write_rows(rows: &[AblationRow], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::fs::File::create(path).map_err(io)?;
    for r in rows {
        let line = serde_json::to_string(r).map_err(|e| Error::Serde(e.to_string()))?;
        writeln!(f, "{line}").map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_count_is_product_of_axes() {
        let m = AblationMatrix {
            vocabulary: vec![None, Some(6)],
            ..AblationMatrix::default()
        };
        assert_eq!(m.cells(), 3 * 2 * 3 * 2);
        let cfgs = m.configs(&ExperimentConfig::default());
        assert_eq!(cfgs.len(), 36);
        assert_eq!(cfgs[1].vocabulary, Some(6));
        assert_eq!(cfgs[35].filter_window, 4);
    }
}
