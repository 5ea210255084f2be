use super::tape::{accumulate, shape_of, Node, Op};
use super::{Tape, Var};
use crate::error::{Error, Result};

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [c, h, w] if *h >= 1 && *w >= 1 => Ok((*c, h * w)),
        _ => Err(Error::shape(op, "C×H×W with H, W ≥ 1", format!("{shape:?}"))),
    }
}

impl Tape {
    /// Per-channel spatial mean, `C×H×W → C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, hw) = chw("global_avg_pool", self.shape(x))?;
        let xv = self.value(x);
        let out = (0..c)
            .map(|ch| xv[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(self.push(vec![c], out, Op::AvgPool { x }))
    }

    /// Per-channel spatial max, `C×H×W → C`. The gradient flows to the first
    /// maximal cell in row-major order.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (c, hw) = chw("global_max_pool", self.shape(x))?;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for ch in 0..c {
            let plane = &xv[ch * hw..(ch + 1) * hw];
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            out.push(plane[best]);
            argmax.push(ch * hw + best);
        }
        Ok(self.push(vec![c], out, Op::MaxPool { x, argmax }))
    }
}

pub(super) fn avg_pool_backward(prev: &mut [Node], x: Var, g: &[f64]) {
    let s = shape_of(prev, x);
    let hw = s[1] * s[2];
    let mut gx = Vec::with_capacity(s[0] * hw);
    for gc in g {
        gx.extend(std::iter::repeat_n(gc / hw as f64, hw));
    }
    accumulate(prev, x, &gx);
}

pub(super) fn max_pool_backward(prev: &mut [Node], x: Var, argmax: &[usize], g: &[f64]) {
    let n = prev[x.0].tensor.numel();
    let mut gx = vec![0.0; n];
    for (idx, gc) in argmax.iter().zip(g) {
        gx[*idx] += gc;
    }
    accumulate(prev, x, &gx);
}
