//! 2-D cross-correlation over a single `C×H×W` image.

use std::ops::Range;

use super::tape::{accumulate, shape_of, val, wants_grad, Node, Op};
use super::{Tape, Var};
use crate::error::{Error, Result};

/// `floor((n + 2·padding − k) / stride) + 1`, or `None` when that is < 1.
pub fn conv2d_output_dim(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || n + 2 * padding < k {
        return None;
    }
    Some((n + 2 * padding - k) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    /// Output columns whose input column `ox·stride + kx − pad` is in bounds.
    fn valid_out(&self, k: usize, n_in: usize, n_out: usize) -> Range<usize> {
        let s = self.stride;
        let lo = if self.pad > k {
            (self.pad - k).div_ceil(s)
        } else {
            0
        };
        let hi = if n_in + self.pad > k {
            ((n_in - 1 + self.pad - k) / s + 1).min(n_out)
        } else {
            0
        };
        lo..hi.max(lo)
    }
}

fn geometry(
    xs: &[usize],
    ks: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Geom> {
    let (c_in, h, w) = match xs {
        [c, h, w] => (*c, *h, *w),
        _ => return Err(Error::shape("conv2d", "input C×H×W", format!("{xs:?}"))),
    };
    let (c_out, kc, kh, kw) = match ks {
        [o, c, kh, kw] => (*o, *c, *kh, *kw),
        _ => {
            return Err(Error::shape(
                "conv2d",
                "kernel C_out×C_in×kh×kw",
                format!("{ks:?}"),
            ))
        }
    };
    if kc != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("kernel with {c_in} input channels"),
            format!("{kc}"),
        ));
    }
    let oh = conv2d_output_dim(h, kh, stride, padding);
    let ow = conv2d_output_dim(w, kw, stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 && kh >= 1 && kw >= 1 => Ok(Geom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad: padding,
        }),
        _ => Err(Error::shape(
            "conv2d",
            "positive output dims",
            format!("input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"),
        )),
    }
}

/// Upper bound on the number of doubles held by one unrolled patch matrix.
const COL_BUDGET: usize = 1 << 20;

impl Geom {
    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output row blocks whose unrolled patches fit in `COL_BUDGET`.
    fn row_chunks(&self) -> impl Iterator<Item = Range<usize>> {
        let rows = (COL_BUDGET / (self.patch_len() * self.ow).max(1)).max(1);
        let oh = self.oh;
        (0..oh).step_by(rows).map(move |r| r..(r + rows).min(oh))
    }

    /// Unrolls output rows `rows` into `col[patch × (rows·ow)]`.
    fn im2col(&self, x: &[f64], rows: Range<usize>, col: &mut [f64]) {
        let n = rows.len() * self.ow;
        let s = self.stride;
        col[..self.patch_len() * n].fill(0.0);
        for ci in 0..self.c_in {
            let x_c = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                let oy_valid = self.valid_out(ky, self.h, self.oh);
                for kx in 0..self.kw {
                    let ox_range = self.valid_out(kx, self.w, self.ow);
                    let row = &mut col[((ci * self.kh + ky) * self.kw + kx) * n..][..n];
                    for oy in rows.start.max(oy_valid.start)..rows.end.min(oy_valid.end) {
                        let iy = oy * s + ky - self.pad;
                        let x_row = &x_c[iy * self.w..(iy + 1) * self.w];
                        let dst = &mut row[(oy - rows.start) * self.ow..][..self.ow];
                        for ox in ox_range.clone() {
                            dst[ox] = x_row[ox * s + kx - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `col` back onto the image gradient; inverse of `im2col`.
    fn col2im(&self, col: &[f64], rows: Range<usize>, gx: &mut [f64]) {
        let n = rows.len() * self.ow;
        let s = self.stride;
        for ci in 0..self.c_in {
            let gx_c = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                let oy_valid = self.valid_out(ky, self.h, self.oh);
                for kx in 0..self.kw {
                    let ox_range = self.valid_out(kx, self.w, self.ow);
                    let row = &col[((ci * self.kh + ky) * self.kw + kx) * n..][..n];
                    for oy in rows.start.max(oy_valid.start)..rows.end.min(oy_valid.end) {
                        let iy = oy * s + ky - self.pad;
                        let gx_row = &mut gx_c[iy * self.w..(iy + 1) * self.w];
                        let src = &row[(oy - rows.start) * self.ow..][..self.ow];
                        for ox in ox_range.clone() {
                            gx_row[ox * s + kx - self.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c[i, 0..n] += Σ_p a[i, p] · b[p, 0..n]` with explicit row strides.
#[allow(clippy::too_many_arguments)]
fn gemm_nn(m: usize, n: usize, k: usize, a: &[f64], lda: usize, b: &[f64], ldb: usize, c: &mut [f64], ldc: usize) {
    for i in 0..m {
        let c_row = &mut c[i * ldc..i * ldc + n];
        for p in 0..k {
            let av = a[i * lda + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in c_row.iter_mut().zip(&b[p * ldb..p * ldb + n]) {
                *o += av * bv;
            }
        }
    }
}

fn forward(x: &[f64], k: &[f64], g: &Geom) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let kl = g.patch_len();
    let mut out = vec![0.0; g.c_out * plane];
    if g.is_pointwise() {
        gemm_nn(g.c_out, plane, kl, k, kl, x, plane, &mut out, plane);
        return out;
    }
    let mut col = Vec::new();
    for rows in g.row_chunks() {
        let n = rows.len() * g.ow;
        col.resize(kl * n, 0.0);
        g.im2col(x, rows.clone(), &mut col);
        let off = rows.start * g.ow;
        gemm_nn(g.c_out, n, kl, k, kl, &col, n, &mut out[off..], plane);
    }
    out
}

impl Tape {
    /// Cross-correlation (no kernel flip) of `x: C_in×H×W` with
    /// `k: C_out×C_in×kh×kw`, zero padding on all four sides.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let g = geometry(self.shape(x), self.shape(k), stride, padding)?;
        let out = forward(self.value(x), self.value(k), &g);
        Ok(self.push(
            vec![g.c_out, g.oh, g.ow],
            out,
            Op::Conv2d {
                x,
                k,
                stride,
                padding,
            },
        ))
    }
}

pub(super) fn conv2d_backward(
    prev: &mut [Node],
    x: Var,
    k: Var,
    stride: usize,
    padding: usize,
    _out_shape: &[usize],
    gout: &[f64],
) {
    let g = geometry(shape_of(prev, x), shape_of(prev, k), stride, padding)
        .expect("geometry validated in forward");
    let plane = g.oh * g.ow;
    let kl = g.patch_len();
    let gx_wanted = wants_grad(prev, x);
    let gk_wanted = wants_grad(prev, k);
    let mut gx = vec![0.0; if gx_wanted { g.c_in * g.h * g.w } else { 0 }];
    let mut gk = vec![0.0; if gk_wanted { g.c_out * kl } else { 0 }];
    let kv = val(prev, k);
    let xv = val(prev, x);
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    let chunks: Vec<Range<usize>> = if g.is_pointwise() {
        vec![0..g.oh]
    } else {
        g.row_chunks().collect()
    };
    for rows in chunks {
        let n = rows.len() * g.ow;
        let off = rows.start * g.ow;
        if gk_wanted {
            let patches: &[f64] = if g.is_pointwise() {
                xv
            } else {
                col.resize(kl * n, 0.0);
                g.im2col(xv, rows.clone(), &mut col);
                &col
            };
            // gk[co, p] += Σ_j gout[co, j] · patches[p, j]
            for co in 0..g.c_out {
                let g_row = &gout[co * plane + off..][..n];
                for p in 0..kl {
                    let pr = &patches[p * n..(p + 1) * n];
                    gk[co * kl + p] += g_row.iter().zip(pr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        if gx_wanted {
            // dcol[p, j] = Σ_co k[co, p] · gout[co, j]
            dcol.clear();
            dcol.resize(kl * n, 0.0);
            for co in 0..g.c_out {
                let g_row = &gout[co * plane + off..][..n];
                for p in 0..kl {
                    let wv = kv[co * kl + p];
                    if wv == 0.0 {
                        continue;
                    }
                    for (d, gv) in dcol[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                        *d += wv * gv;
                    }
                }
            }
            if g.is_pointwise() {
                for (a, b) in gx.iter_mut().zip(&dcol) {
                    *a += b;
                }
            } else {
                g.col2im(&dcol, rows.clone(), &mut gx);
            }
        }
    }
    if gx_wanted {
        accumulate(prev, x, &gx);
    }
    if gk_wanted {
        accumulate(prev, k, &gk);
    }
}

#[cfg(test)]
mod tests {
    use super::conv2d_output_dim;
    use crate::tensor::{DiffTensor, Tape};

    #[test]
    fn output_dim_formula() {
        assert_eq!(conv2d_output_dim(224, 7, 2, 3), Some(112));
        assert_eq!(conv2d_output_dim(7, 3, 2, 1), Some(4));
        assert_eq!(conv2d_output_dim(2, 5, 1, 0), None);
        assert_eq!(conv2d_output_dim(5, 3, 0, 0), None);
    }

    #[test]
    fn unit_kernel_of_two_doubles_input() {
        let mut tape = Tape::new();
        let xv: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let x = tape.constant(DiffTensor::new(&[1, 3, 3], xv.clone()).unwrap());
        let k = tape.constant(DiffTensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap());
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        let want: Vec<f64> = xv.iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.value(y), want.as_slice());
    }

    #[test]
    fn impulse_imprints_kernel() {
        // Cross-correlation of a delta at (2,2) places the kernel rotated by
        // 180 degrees around it.
        let mut tape = Tape::new();
        let mut xv = vec![0.0; 25];
        xv[2 * 5 + 2] = 1.0;
        let kv: Vec<f64> = (1..=9).map(f64::from).collect();
        let x = tape.constant(DiffTensor::new(&[1, 5, 5], xv).unwrap());
        let k = tape.constant(DiffTensor::new(&[1, 1, 3, 3], kv.clone()).unwrap());
        let y = tape.conv2d(x, k, 1, 1).unwrap();
        let out = tape.value(y);
        for dy in 0..3 {
            for dx in 0..3 {
                let oy = 1 + dy;
                let ox = 1 + dx;
                assert_eq!(out[oy * 5 + ox], kv[(2 - dy) * 3 + (2 - dx)]);
            }
        }
        let total: f64 = out.iter().sum();
        assert_eq!(total, 45.0);
    }

    #[test]
    fn rejects_empty_output() {
        let mut tape = Tape::new();
        let x = tape.constant(DiffTensor::zeros(&[1, 2, 2]));
        let k = tape.constant(DiffTensor::zeros(&[1, 1, 3, 3]));
        assert!(tape.conv2d(x, k, 1, 0).is_err());
        let k2 = tape.constant(DiffTensor::zeros(&[1, 2, 1, 1]));
        assert!(tape.conv2d(x, k2, 1, 0).is_err());
    }

    #[test]
    fn strided_padded_shape() {
        let mut tape = Tape::new();
        let x = tape.constant(DiffTensor::zeros(&[3, 8, 8]));
        let k = tape.constant(DiffTensor::zeros(&[5, 3, 7, 7]));
        let y = tape.conv2d(x, k, 2, 3).unwrap();
        assert_eq!(tape.shape(y), &[5, 4, 4]);
    }
}
