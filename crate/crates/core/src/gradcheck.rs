//! Central finite-difference gradient checks against the tape.
//!
//! The numeric side only evaluates forward values, so it is independent of
//! every backward rule it checks.

use crate::error::Result;
use crate::tensor::{DiffTensor, Tape, Var};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Default relative tolerance.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Worst-case discrepancy found by [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / (|numeric| + 1e-8)` across all checked entries.
    pub max_rel_error: f64,
    /// `(input index, element index)` where the max occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Central difference of a scalar function of a flat point.
pub fn central_difference<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = point.to_vec();
    (0..point.len())
        .map(|i| {
            p[i] = point[i] + step;
            let hi = f(&p);
            p[i] = point[i] - step;
            let lo = f(&p);
            p[i] = point[i];
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

/// Compares tape gradients of a scalar-valued graph with central differences.
///
/// `build` receives a fresh tape and one leaf per input (all marked as
/// requiring gradients) and must return a scalar node. Only the elements
/// listed in `subset` are perturbed when it is `Some`; otherwise every input
/// element is.
pub fn check_gradients<F>(
    build: F,
    inputs: &[DiffTensor],
    step: f64,
    subset: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[DiffTensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.item(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| tape.grad(*v).to_vec()).collect();

    let all: Vec<(usize, usize)>;
    let entries = match subset {
        Some(s) => s,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for &(i, j) in entries {
        let orig = work[i].value()[j];
        work[i].value_mut()[j] = orig + step;
        let hi = eval(&work)?;
        work[i].value_mut()[j] = orig - step;
        let lo = eval(&work)?;
        work[i].value_mut()[j] = orig;
        let numeric = (hi - lo) / (2.0 * step);
        let a = analytic[i][j];
        let err = rel_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = err;
            report.worst = (i, j);
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// `Σ wᵢ·yᵢ` with fixed pseudo-random weights in `[0.5, 1.5)`; gives every
/// output element a distinct, non-cancelling sensitivity.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let w: Vec<f64> = (0..tape.tensor(y).numel())
        .map(|_| rng.random_range(0.5..1.5))
        .collect();
    let wv = tape.constant(DiffTensor::new(&shape, w)?);
    let p = tape.hadamard(y, wv)?;
    Ok(tape.sum(p))
}
