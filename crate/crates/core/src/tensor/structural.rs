//! Shape plumbing, broadcasts, reductions and dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{accumulate, shape_of, val, wants_grad, Node, Op};
use super::{numel, DiffTensor, Tape, Var};
use crate::error::{Error, Result};

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.tensor(x).numel() {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", self.tensor(x).numel()),
                format!("{shape:?}"),
            ));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape { x }))
    }

    /// A constant copy of `x`: gradients stop here.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = DiffTensor::new(self.shape(x), self.value(x).to_vec()).expect("same shape");
        self.constant(t)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack", "at least one part", "none"))?;
        let inner = self.shape(*first).to_vec();
        for p in parts {
            if self.shape(*p) != inner.as_slice() {
                return Err(Error::shape(
                    "stack",
                    format!("{inner:?}"),
                    format!("{:?}", self.shape(*p)),
                ));
            }
        }
        let mut out = Vec::with_capacity(parts.len() * numel(&inner));
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        Ok(self.push(
            shape,
            out,
            Op::Stack {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Concatenates 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for p in parts {
            if self.shape(*p).len() != 1 {
                return Err(Error::shape(
                    "concat",
                    "1-D parts",
                    format!("{:?}", self.shape(*p)),
                ));
            }
            out.extend_from_slice(self.value(*p));
        }
        let n = out.len();
        Ok(self.push(
            vec![n],
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Row `row` of an `n×m` matrix as a length-`m` vector.
    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let (n, m) = match self.shape(x) {
            [n, m] => (*n, *m),
            s => return Err(Error::shape("select_row", "rank-2 tensor", format!("{s:?}"))),
        };
        if row >= n {
            return Err(Error::shape("select_row", format!("row < {n}"), row));
        }
        let out = self.value(x)[row * m..(row + 1) * m].to_vec();
        Ok(self.push(vec![m], out, Op::SelectRow { x, row }))
    }

    /// Column sums of an `n×m` matrix.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = match self.shape(x) {
            [n, m] => (*n, *m),
            s => return Err(Error::shape("sum_rows", "rank-2 tensor", format!("{s:?}"))),
        };
        let xv = self.value(x);
        let mut out = vec![0.0; m];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(&xv[r * m..(r + 1) * m]) {
                *o += v;
            }
        }
        Ok(self.push(vec![m], out, Op::SumRows { x }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(Vec::new(), vec![s], Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.tensor(x).numel().max(1);
        let s = self.sum(x);
        self.scalar_mul(s, 1.0 / n as f64)
    }

    /// `x[c, ...] · s[c]`, broadcasting the channel weights over trailing axes.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (c, inner) = leading_broadcast("scale_channels", self.shape(x), self.shape(s))?;
        let xv = self.value(x);
        let sv = self.value(s);
        let mut out = Vec::with_capacity(c * inner);
        for ch in 0..c {
            out.extend(xv[ch * inner..(ch + 1) * inner].iter().map(|v| v * sv[ch]));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::ScaleChannels { x, s }))
    }

    /// `x[c, ...] + b[c]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (c, inner) = leading_broadcast("add_channel_bias", self.shape(x), self.shape(b))?;
        let xv = self.value(x);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(c * inner);
        for ch in 0..c {
            out.extend(xv[ch * inner..(ch + 1) * inner].iter().map(|v| v + bv[ch]));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::AddChannelBias { x, b }))
    }

    /// `x[n×m] + b[m]` on every row.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = match self.shape(x) {
            [n, m] => (*n, *m),
            s => return Err(Error::shape("add_row_bias", "rank-2 tensor", format!("{s:?}"))),
        };
        if self.shape(b) != [m] {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias [{m}]"),
                format!("{:?}", self.shape(b)),
            ));
        }
        let xv = self.value(x);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(n * m);
        for r in 0..n {
            out.extend(xv[r * m..(r + 1) * m].iter().zip(bv).map(|(a, b)| a + b));
        }
        Ok(self.push(vec![n, m], out, Op::AddRowBias { x, b }))
    }

    /// Inverted dropout. In training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 − rate)`; in
    /// inference mode this is the identity. The mask is drawn from `seed`.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let n = self.tensor(x).numel();
        let mask: Vec<f64> = if !training || rate == 0.0 {
            vec![1.0; n]
        } else {
            let keep = 1.0 / (1.0 - rate);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::Dropout { x, mask }))
    }
}

fn leading_broadcast(op: &'static str, xs: &[usize], cs: &[usize]) -> Result<(usize, usize)> {
    match (xs.first(), cs) {
        (Some(&c), [c2]) if c == *c2 => Ok((c, xs[1..].iter().product())),
        _ => Err(Error::shape(
            op,
            format!("[{}]", xs.first().copied().unwrap_or(0)),
            format!("{cs:?}"),
        )),
    }
}

pub(super) fn concat_backward(prev: &mut [Node], parts: &[Var], g: &[f64]) {
    let mut offset = 0;
    for p in parts {
        let n = prev[p.0].tensor.numel();
        accumulate(prev, *p, &g[offset..offset + n]);
        offset += n;
    }
}

pub(super) fn select_row_backward(prev: &mut [Node], x: Var, row: usize, g: &[f64]) {
    let s = shape_of(prev, x);
    let m = s[1];
    let mut gx = vec![0.0; s[0] * m];
    gx[row * m..(row + 1) * m].copy_from_slice(g);
    accumulate(prev, x, &gx);
}

pub(super) fn sum_rows_backward(prev: &mut [Node], x: Var, g: &[f64]) {
    let n = shape_of(prev, x)[0];
    let gx: Vec<f64> = (0..n).flat_map(|_| g.iter().copied()).collect();
    accumulate(prev, x, &gx);
}

pub(super) fn scale_channels_backward(prev: &mut [Node], x: Var, s: Var, g: &[f64]) {
    let c = shape_of(prev, s)[0];
    let inner = g.len() / c.max(1);
    if wants_grad(prev, x) {
        let sv = val(prev, s);
        let gx: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, gi)| gi * sv[i / inner])
            .collect();
        accumulate(prev, x, &gx);
    }
    if wants_grad(prev, s) {
        let xv = val(prev, x);
        let gs: Vec<f64> = (0..c)
            .map(|ch| {
                let r = ch * inner..(ch + 1) * inner;
                g[r.clone()].iter().zip(&xv[r]).map(|(a, b)| a * b).sum()
            })
            .collect();
        accumulate(prev, s, &gs);
    }
}

pub(super) fn add_channel_bias_backward(prev: &mut [Node], x: Var, b: Var, g: &[f64]) {
    accumulate(prev, x, g);
    if wants_grad(prev, b) {
        let c = shape_of(prev, b)[0];
        let inner = g.len() / c.max(1);
        let gb: Vec<f64> = (0..c)
            .map(|ch| g[ch * inner..(ch + 1) * inner].iter().sum())
            .collect();
        accumulate(prev, b, &gb);
    }
}

pub(super) fn add_row_bias_backward(prev: &mut [Node], x: Var, b: Var, g: &[f64]) {
    accumulate(prev, x, g);
    if wants_grad(prev, b) {
        let m = shape_of(prev, b)[0];
        let mut gb = vec![0.0; m];
        for row in g.chunks(m) {
            for (o, v) in gb.iter_mut().zip(row) {
                *o += v;
            }
        }
        accumulate(prev, b, &gb);
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{DiffTensor, Tape};

    #[test]
    fn dropout_rate_zero_and_inference_are_identity() {
        let mut tape = Tape::new();
        let xv: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let x = tape.constant(DiffTensor::new(&[50], xv.clone()).unwrap());
        let a = tape.dropout(x, 0.0, true, 7).unwrap();
        let b = tape.dropout(x, 0.8, false, 7).unwrap();
        assert_eq!(tape.value(a), xv.as_slice());
        assert_eq!(tape.value(b), xv.as_slice());
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut tape = Tape::new();
        let x = tape.constant(DiffTensor::zeros(&[3]));
        assert!(tape.dropout(x, 1.0, true, 0).is_err());
        assert!(tape.dropout(x, -0.1, true, 0).is_err());
    }

    #[test]
    fn dropout_statistics_at_half_rate() {
        let n = 100_000;
        let mut tape = Tape::new();
        let x = tape.constant(DiffTensor::full(&[n], 1.0));
        let y = tape.dropout(x, 0.5, true, 42).unwrap();
        let v = tape.value(y);
        let survivors = v.iter().filter(|&&e| e != 0.0).count() as f64 / n as f64;
        let mean = v.iter().sum::<f64>() / n as f64;
        assert!((0.49..=0.51).contains(&survivors), "{survivors}");
        assert!((mean - 1.0).abs() <= 0.02, "{mean}");
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
    }

    #[test]
    fn dropout_is_seed_deterministic() {
        let mut tape = Tape::new();
        let x = tape.constant(DiffTensor::full(&[64], 1.0));
        let a = tape.dropout(x, 0.3, true, 9).unwrap();
        let b = tape.dropout(x, 0.3, true, 9).unwrap();
        let c = tape.dropout(x, 0.3, true, 10).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert_ne!(tape.value(a), tape.value(c));
    }

    #[test]
    fn stack_and_select_recover_rows() {
        let mut tape = Tape::new();
        let a = tape.constant(DiffTensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let b = tape.constant(DiffTensor::new(&[3], vec![4.0, 5.0, 6.0]).unwrap());
        let s = tape.stack(&[a, b]).unwrap();
        assert_eq!(tape.shape(s), &[2, 3]);
        let r0 = tape.select_row(s, 0).unwrap();
        let r1 = tape.select_row(s, 1).unwrap();
        assert_eq!(tape.value(r0), tape.value(a));
        assert_eq!(tape.value(r1), tape.value(b));
        let c = tape.constant(DiffTensor::zeros(&[2]));
        assert!(tape.stack(&[a, c]).is_err());
        assert!(tape.select_row(s, 2).is_err());
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(DiffTensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let d = tape.detach(x);
        let y = tape.hadamard(x, d).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        // d(x·stop(x))/dx = stop(x)
        assert_eq!(tape.grad(x), &[1.0, 2.0]);
    }

    #[test]
    fn fan_out_gradients_add() {
        // y = 3x + x² ⇒ dy/dx = 3 + 2x
        let mut tape = Tape::new();
        let x = tape.variable(DiffTensor::new(&[1], vec![1.5]).unwrap());
        let f = tape.scalar_mul(x, 3.0);
        let g = tape.hadamard(x, x).unwrap();
        let y = tape.add(f, g).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x), &[6.0]);
    }
}
