//! Channel attention: pooled channel descriptors through a shared bottleneck
//! MLP, summed and squashed into per-channel weights.

use rand::Rng;

use super::params::{kaiming_uniform, Bound, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{DiffTensor, Tape, Var};

/// Weights of the shared MLP: `w0: (l0/r)×l0`, `w1: l0×(l0/r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChamParams {
    pub w0: DiffTensor,
    pub w1: DiffTensor,
    pub reduction: usize,
}

impl ChamParams {
    pub fn new(w0: DiffTensor, w1: DiffTensor, reduction: usize) -> Result<Self> {
        let p = Self { w0, w1, reduction };
        p.channels()?;
        if p.w0.value().iter().chain(p.w1.value()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ChAM weights".into()));
        }
        Ok(p)
    }

    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        let hidden = hidden_width(channels, reduction)?;
        Self::new(
            DiffTensor::zeros(&[hidden, channels]),
            DiffTensor::zeros(&[channels, hidden]),
            reduction,
        )
    }

    pub fn init(channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        let hidden = hidden_width(channels, reduction)?;
        Self::new(
            kaiming_uniform(&[hidden, channels], channels, rng),
            kaiming_uniform(&[channels, hidden], hidden, rng),
            reduction,
        )
    }

    /// Channel count `l0`, after checking the two matrices agree with `r`.
    pub fn channels(&self) -> Result<usize> {
        let (h, l0) = match self.w0.shape() {
            [h, l0] => (*h, *l0),
            s => return Err(Error::shape("ChamParams", "rank-2 w0", format!("{s:?}"))),
        };
        let hidden = hidden_width(l0, self.reduction)?;
        if h != hidden || self.w1.shape() != [l0, hidden] {
            return Err(Error::shape(
                "ChamParams",
                format!("w0 {hidden}x{l0}, w1 {l0}x{hidden}"),
                format!("w0 {:?}, w1 {:?}", self.w0.shape(), self.w1.shape()),
            ));
        }
        Ok(l0)
    }

    pub fn store(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        store.insert(format!("{prefix}.w0"), self.w0.clone())?;
        store.insert(format!("{prefix}.w1"), self.w1.clone())
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ChamVars {
        let (w0, w1) = if trainable {
            (tape.variable(self.w0.clone()), tape.variable(self.w1.clone()))
        } else {
            (tape.constant(self.w0.clone()), tape.constant(self.w1.clone()))
        };
        ChamVars { w0, w1 }
    }
}

/// Hidden width `l0 / r`; `r` must divide `l0`.
pub fn hidden_width(channels: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || channels == 0 || channels % reduction != 0 {
        return Err(Error::Config(format!(
            "reduction ratio {reduction} must divide channel count {channels}"
        )));
    }
    Ok(channels / reduction)
}

/// ChAM weights recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ChamVars {
    pub w0: Var,
    pub w1: Var,
}

impl ChamVars {
    pub fn from_bound(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(Self {
            w0: bound.get(&format!("{prefix}.w0"))?,
            w1: bound.get(&format!("{prefix}.w1"))?,
        })
    }
}

fn shared_mlp(tape: &mut Tape, pooled: Var, p: ChamVars) -> Result<Var> {
    let l0 = tape.shape(pooled)[0];
    let col = tape.reshape(pooled, &[l0, 1])?;
    let h = tape.matmul(p.w0, col)?;
    let h = tape.relu(h);
    tape.matmul(p.w1, h)
}

/// `σ(W1·relu(W0·avg(f)) + W1·relu(W0·max(f)))` for `f: l0×H×W`.
pub fn cham_map(tape: &mut Tape, f: Var, p: ChamVars) -> Result<Var> {
    let l0 = match tape.shape(f) {
        [c, _, _] => *c,
        s => return Err(Error::shape("cham_map", "l0×H×W", format!("{s:?}"))),
    };
    let w0_cols = tape.shape(p.w0).get(1).copied().unwrap_or(0);
    if w0_cols != l0 {
        return Err(Error::shape(
            "cham_map",
            format!("w0 with {l0} columns"),
            format!("{:?}", tape.shape(p.w0)),
        ));
    }
    let avg = tape.global_avg_pool(f)?;
    let max = tape.global_max_pool(f)?;
    let a = shared_mlp(tape, avg, p)?;
    let m = shared_mlp(tape, max, p)?;
    let s = tape.add(a, m)?;
    let s = tape.reshape(s, &[l0])?;
    Ok(tape.sigmoid(s))
}

/// `F + M_c ⊙ F`, with `M_c` broadcast over the spatial axes.
pub fn cham_apply(tape: &mut Tape, f: Var, mc: Var) -> Result<Var> {
    let c = tape.shape(f).first().copied().unwrap_or(0);
    if tape.shape(f).len() != 3 || tape.shape(mc) != [c] {
        return Err(Error::shape(
            "cham_apply",
            format!("map [{c}] for {:?}", tape.shape(f)),
            format!("{:?}", tape.shape(mc)),
        ));
    }
    let weighted = tape.scale_channels(f, mc)?;
    tape.add(f, weighted)
}
