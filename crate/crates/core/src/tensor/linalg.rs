use super::tape::{accumulate, shape_of, val, wants_grad, Node, Op};
use super::{Tape, Var};
use crate::error::{Error, Result};

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

fn matrix_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::shape(op, "rank-2 tensor", format!("{shape:?}"))),
    }
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.shape(a))?;
        let (k2, n) = matrix_dims("matmul", self.shape(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims to agree ({m}x{k} @ {k}x_)"),
                format!("{m}x{k} @ {k2}x{n}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = matrix_dims("transpose", self.shape(x))?;
        let xv = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], out, Op::Transpose { x }))
    }
}

pub(super) fn matmul_backward(prev: &mut [Node], a: Var, b: Var, g: &[f64]) {
    let (m, k) = (shape_of(prev, a)[0], shape_of(prev, a)[1]);
    let n = shape_of(prev, b)[1];
    if wants_grad(prev, a) {
        // dA = G · Bᵀ
        let bv = val(prev, b);
        let mut ga = vec![0.0; m * k];
        for i in 0..m {
            let g_row = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let b_row = &bv[p * n..(p + 1) * n];
                ga[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            }
        }
        accumulate(prev, a, &ga);
    }
    if wants_grad(prev, b) {
        // dB = Aᵀ · G
        let av = val(prev, a);
        let mut gb = vec![0.0; k * n];
        for i in 0..m {
            let g_row = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                    *o += aip * gv;
                }
            }
        }
        accumulate(prev, b, &gb);
    }
}

pub(super) fn transpose_backward(prev: &mut [Node], x: Var, g: &[f64]) {
    let (r, c) = (shape_of(prev, x)[0], shape_of(prev, x)[1]);
    let mut gx = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            gx[i * c + j] = g[j * r + i];
        }
    }
    accumulate(prev, x, &gx);
}
