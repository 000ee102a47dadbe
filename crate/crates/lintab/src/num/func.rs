//! Scalar nonlinearities and row-wise normalizations, with their exact
//! derivatives. The tape's backward rules call the `*_deriv` twins, so the
//! two halves of each pair must stay in sync; the gradient checker in
//! [`crate::num::tape`] guards that.

use crate::error::{Error, Result};
use crate::num::Matrix;

/// Positive feature map `elu(x) + 1`: `x + 1` for `x > 0`, `exp(x)` otherwise.
/// Strictly positive everywhere, which keeps attention denominators alive.
#[inline]
pub fn elu_plus_one(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// Derivative of [`elu_plus_one`].
#[inline]
pub fn elu_plus_one_deriv(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

const GELU_COEFF: f64 = 0.044_715;

/// GELU in its tanh form:
/// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEFF * x * x * x)).tanh())
}

/// Derivative of [`gelu`] (tanh form, differentiated exactly).
#[inline]
pub fn gelu_deriv(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEFF * x * x * x);
    let t = u.tanh();
    let du = c * (1.0 + 3.0 * GELU_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Apply [`elu_plus_one`] entrywise.
pub fn elu_plus_one_mat(m: &Matrix) -> Matrix {
    m.map(elu_plus_one)
}

/// Apply [`gelu`] entrywise.
pub fn gelu_mat(m: &Matrix) -> Matrix {
    m.map(gelu)
}

/// Numerically stable softmax applied independently to each row.
///
/// Every row of the result sums to 1 and all entries are positive.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// `log(sum(exp(xs)))` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise layer normalization with learned gain and bias.
///
/// Each row is centered by its mean and scaled by `1 / sqrt(var + eps)`
/// (population variance), then multiplied by `gain` and shifted by `bias`,
/// both `1 x cols`.
pub fn layer_norm_rows(x: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Result<Matrix> {
    if gain.shape() != (1, x.cols()) {
        return Err(Error::shape("layer_norm_rows gain", x.shape(), gain.shape()));
    }
    if bias.shape() != (1, x.cols()) {
        return Err(Error::shape("layer_norm_rows bias", x.shape(), bias.shape()));
    }
    let c = x.cols() as f64;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let inv = 1.0 / (var + eps).sqrt();
        let out_row = out.row_mut(r);
        for (j, (&v, o)) in row.iter().zip(out_row.iter_mut()).enumerate() {
            *o = (v - mean) * inv * gain.get(0, j) + bias.get(0, j);
        }
    }
    Ok(out)
}
