//! Parameter updates: ALI-G adaptive steps, plain SGD, and freeze masks.
//!
//! ALI-G takes `step = min(η, loss / (‖g‖² + δ))` using the global squared
//! norm over all trainable gradients, then moves `θ ← θ − step·g` (or, with
//! momentum `μ > 0`, `v ← μv − step·g; θ ← θ + v`).

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{name_matches, Gradients, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Alig,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// ALI-G step cap `η`; the fixed learning rate for SGD.
    pub max_lr: f64,
    pub delta: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Alig,
            max_lr: 0.1,
            delta: 1e-8,
            momentum: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::Config(format!("max_lr {} must be positive", self.max_lr)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta {} must be positive", self.delta)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// What one update did.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: f64,
    pub grad_norm_sq: f64,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    frozen: Vec<String>,
    velocity: IndexMap<String, Vec<f64>>,
    history: Vec<StepInfo>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            frozen: Vec::new(),
            velocity: IndexMap::new(),
            history: Vec::new(),
        })
    }

    /// Freezes parameters by exact name or dotted prefix (`"rgb"` covers `"rgb.stem.w"`).
    pub fn freeze<S: AsRef<str>>(&mut self, names: &[S]) {
        for n in names {
            let n = n.as_ref();
            if !self.frozen.iter().any(|f| f == n) {
                self.frozen.push(n.to_string());
            }
        }
    }

    pub fn unfreeze<S: AsRef<str>>(&mut self, names: &[S]) {
        self.frozen
            .retain(|f| !names.iter().any(|n| n.as_ref() == f.as_str()));
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|f| name_matches(name, f))
    }

    pub fn frozen(&self) -> &[String] {
        &self.frozen
    }

    /// Every update applied so far, in order.
    pub fn history(&self) -> &[StepInfo] {
        &self.history
    }

    fn trainable_norm_sq(&self, store: &ParamStore, grads: &Gradients) -> Result<f64> {
        let mut sq = 0.0;
        for (name, g) in grads {
            let p = store.require(name)?;
            if p.numel() != g.len() {
                return Err(Error::shape("optimizer", p.numel(), g.len()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            if !self.is_frozen(name) {
                sq += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        Ok(sq)
    }

    fn apply(&mut self, store: &mut ParamStore, grads: &Gradients, step: f64) {
        let mu = self.config.momentum;
        for (name, g) in grads {
            if self.is_frozen(name) {
                continue;
            }
            let p = store.get_mut(name).expect("checked").value_mut();
            if mu > 0.0 {
                let v = self
                    .velocity
                    .entry(name.clone())
                    .or_insert_with(|| vec![0.0; g.len()]);
                for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = mu * *vi - step * gi;
                    *pi += *vi;
                }
            } else {
                for (pi, gi) in p.iter_mut().zip(g) {
                    *pi -= step * gi;
                }
            }
        }
    }

    /// ALI-G update. A non-finite or negative loss, or any non-finite
    /// gradient, is refused before any parameter changes.
    pub fn alig_step(&mut self, store: &mut ParamStore, grads: &Gradients, loss: f64) -> Result<StepInfo> {
        if !loss.is_finite() || loss < 0.0 {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        let sq = self.trainable_norm_sq(store, grads)?;
        let step = self.config.max_lr.min(loss / (sq + self.config.delta));
        self.apply(store, grads, step);
        let info = StepInfo {
            step,
            grad_norm_sq: sq,
        };
        self.history.push(info);
        Ok(info)
    }

    /// `θ ← θ − lr·g` on trainable parameters.
    pub fn sgd_step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<StepInfo> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::Config(format!("learning rate {lr}")));
        }
        let sq = self.trainable_norm_sq(store, grads)?;
        self.apply(store, grads, lr);
        let info = StepInfo {
            step: lr,
            grad_norm_sq: sq,
        };
        self.history.push(info);
        Ok(info)
    }

    /// Update with the configured rule.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, loss: f64) -> Result<StepInfo> {
        match self.config.kind {
            OptimizerKind::Alig => self.alig_step(store, grads, loss),
            OptimizerKind::Sgd => {
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss {loss}")));
                }
                let lr = self.config.max_lr;
                self.sgd_step(store, grads, lr)
            }
        }
    }
}
