use super::tape::{accumulate, Node, Op};
use super::{Tape, Var};
use crate::error::{Error, Result};

/// Softmax of a 1-D slice, shifted by the max for stability.
pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl Tape {
    /// `−log softmax(logits)[target]` for a 1-D logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = match self.shape(logits) {
            [n] => *n,
            s => return Err(Error::shape("cross_entropy", "1-D logits", format!("{s:?}"))),
        };
        if target >= n {
            return Err(Error::shape(
                "cross_entropy",
                format!("target < {n}"),
                target,
            ));
        }
        let lv = self.value(logits);
        let m = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lv.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - lv[target];
        let probs = softmax_slice(lv);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }
}

pub(super) fn cross_entropy_backward(
    prev: &mut [Node],
    logits: Var,
    target: usize,
    probs: &[f64],
    g: f64,
) {
    let mut gl: Vec<f64> = probs.iter().map(|p| p * g).collect();
    gl[target] -= g;
    accumulate(prev, logits, &gl);
}
