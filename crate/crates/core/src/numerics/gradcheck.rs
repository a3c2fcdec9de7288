use alloc::vec::Vec;

use super::{NumericsError, Real, Tape, Tensor, Var};

/// A scalar function of one tensor, written once and evaluated at any
/// precision. The analytic gradient is taken in `f32` (the production path);
/// the central differences are taken in `f64`.
pub trait Objective {
    fn eval<'t, T: Real>(&self, tape: &'t Tape<T>, x: Var<'t, T>)
        -> Result<Var<'t, T>, NumericsError>;
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub indices: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error of each element, measured against
/// `max(|analytic|, |numeric|, 1e-2 * max_j |numeric_j|)` so that entries
/// that are zero up to rounding do not divide by zero.
pub fn relative_errors(analytic: &[f64], numeric: &[f64]) -> Vec<f64> {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-2 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .collect()
}

pub fn analytic_gradient<F: Objective>(f: &F, x: &Tensor<f32>) -> Result<Tensor<f32>, NumericsError> {
    let tape = Tape::<f32>::new();
    let xv = tape.param(x.clone());
    let y = f.eval(&tape, xv)?;
    let mut grads = tape.backward(y)?;
    Ok(grads.take(xv).expect("leaf gradient"))
}

pub fn eval_f64<F: Objective>(f: &F, x: &Tensor<f64>) -> Result<f64, NumericsError> {
    let tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let y = f.eval(&tape, xv)?;
    let v = y.value();
    if v.len() != 1 {
        return Err(NumericsError::NonScalarRoot(v.shape().to_vec()));
    }
    let out = v.item();
    if !out.is_finite() {
        return Err(NumericsError::NonFinite { op: "objective" });
    }
    Ok(out)
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` in `f64`.
pub fn numeric_gradient<F: Objective>(
    f: &F,
    x: &Tensor<f32>,
    step: f64,
    indices: &[usize],
) -> Result<Vec<f64>, NumericsError> {
    let base: Tensor<f64> = x.cast();
    let mut probe = base.clone();
    indices
        .iter()
        .map(|&i| {
            let x0 = base.data()[i];
            probe.data_mut()[i] = x0 + step;
            let plus = eval_f64(f, &probe)?;
            probe.data_mut()[i] = x0 - step;
            let minus = eval_f64(f, &probe)?;
            probe.data_mut()[i] = x0;
            Ok((plus - minus) / (2.0 * step))
        })
        .collect()
}

/// Compares analytic and central-difference gradients on every element.
pub fn gradcheck<F: Objective>(
    f: &F,
    x: &Tensor<f32>,
    step: f64,
    tol: f64,
) -> Result<GradcheckReport, NumericsError> {
    let all: Vec<usize> = (0..x.len()).collect();
    gradcheck_subset(f, x, step, tol, &all)
}

/// Like [`gradcheck`] but only on the listed element indices.
pub fn gradcheck_subset<F: Objective>(
    f: &F,
    x: &Tensor<f32>,
    step: f64,
    tol: f64,
    indices: &[usize],
) -> Result<GradcheckReport, NumericsError> {
    if !(step > 0.0) {
        return Err(NumericsError::InvalidArgument("gradcheck step must be positive"));
    }
    let grad = analytic_gradient(f, x)?;
    let analytic: Vec<f64> = indices.iter().map(|&i| grad.data()[i] as f64).collect();
    let numeric = numeric_gradient(f, x, step, indices)?;
    let rel_errors = relative_errors(&analytic, &numeric);
    let max_rel_error = rel_errors.iter().fold(0.0f64, |m, &e| m.max(e));
    Ok(GradcheckReport {
        indices: indices.to_vec(),
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}
