use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::tape::{accumulate, shape_of, val, Node, Op};
use super::{Tape, Var};
use crate::error::{Error, Result};

/// Largest double strictly below 1.
const SIGMOID_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

pub(crate) fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, SIGMOID_CEIL)
}

/// Exact (erf-based) GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add { a, b }))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Hadamard { a, b }))
    }

    pub fn scalar_mul(&mut self, x: Var, s: f64) -> Var {
        self.map_unary(x, |v| v * s, Op::ScalarMul { x, s })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map_unary(x, gelu, Op::Gelu { x })
    }

    /// Logistic sigmoid, saturating at the nearest doubles inside (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis < {}", shape.len()),
                format!("axis {axis}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let m = (0..len).map(|j| xv[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (xv[idx(j)] - m).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[idx(j)] /= z;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { x, axis }))
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(super) fn hadamard_backward(prev: &mut [Node], a: Var, b: Var, g: &[f64]) {
    let ga: Vec<f64> = g.iter().zip(val(prev, b)).map(|(g, y)| g * y).collect();
    let gb: Vec<f64> = g.iter().zip(val(prev, a)).map(|(g, x)| g * x).collect();
    accumulate(prev, a, &ga);
    accumulate(prev, b, &gb);
}

pub(super) fn relu_backward(prev: &mut [Node], x: Var, g: &[f64]) {
    let gx: Vec<f64> = g
        .iter()
        .zip(val(prev, x))
        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
        .collect();
    accumulate(prev, x, &gx);
}

pub(super) fn gelu_backward(prev: &mut [Node], x: Var, g: &[f64]) {
    let gx: Vec<f64> = g
        .iter()
        .zip(val(prev, x))
        .map(|(g, v)| g * gelu_grad(*v))
        .collect();
    accumulate(prev, x, &gx);
}

pub(super) fn sigmoid_backward(prev: &mut [Node], x: Var, y: &[f64], g: &[f64]) {
    let gx: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
    accumulate(prev, x, &gx);
}

pub(super) fn softmax_backward(
    prev: &mut [Node],
    x: Var,
    axis: usize,
    shape: &[usize],
    y: &[f64],
    g: &[f64],
) {
    debug_assert_eq!(shape_of(prev, x), shape);
    let (outer, len, inner) = split_axis(shape, axis);
    let mut gx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
            for j in 0..len {
                gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
            }
        }
    }
    accumulate(prev, x, &gx);
}

#[cfg(test)]
mod tests {
    use crate::tensor::{DiffTensor, Tape};

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(DiffTensor::zeros(&[3]));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        let mut tape = Tape::new();
        let x = tape.constant(DiffTensor::new(&[4], vec![-1e4, -800.0, 50.0, 1e6]).unwrap());
        let y = tape.sigmoid(x);
        for &v in tape.value(y) {
            assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let mut tape = Tape::new();
        let xv = vec![0.3, -1.2, 4.0, 0.0];
        let x = tape.constant(DiffTensor::new(&[2, 2], xv.clone()).unwrap());
        let ones = tape.constant(DiffTensor::full(&[2, 2], 1.0));
        let y = tape.hadamard(x, ones).unwrap();
        assert_eq!(tape.value(y), xv.as_slice());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(DiffTensor::zeros(&[2, 3]));
        let b = tape.constant(DiffTensor::zeros(&[3, 2]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.hadamard(a, b).is_err());
        assert!(tape.softmax(a, 2).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let xv: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let x = tape.constant(DiffTensor::new(&[2, 3, 4], xv).unwrap());
        for axis in 0..3 {
            let y = tape.softmax(x, axis).unwrap();
            let v = tape.value(y).to_vec();
            let shape = [2usize, 3, 4];
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..shape[axis]).map(|j| v[(o * shape[axis] + j) * inner + i]).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn gelu_reference_points() {
        let mut tape = Tape::new();
        let x = tape.constant(DiffTensor::new(&[3], vec![0.0, 1.0, -1.0]).unwrap());
        let y = tape.gelu(x);
        let v = tape.value(y);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((v[2] + 0.158_655_253_931_457_05).abs() < 1e-12);
    }
}
