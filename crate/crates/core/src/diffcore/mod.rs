//! Dense matrix numerics with a reverse-mode tape and SGD.
//!
//! The free functions here evaluate single operations outside of any
//! gradient recording; models build on [`Tape`] directly.

mod gradcheck;
mod matrix;
mod optim;
mod tape;

pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport};
pub use matrix::Matrix;
pub use optim::{sgd_step, ParamSet, Parameter, Sgd};
pub use tape::{Gradients, Tape, Var, NORM_EPS};

use crate::error::Result;

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn row_normalize(x: &Matrix) -> Matrix {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let out = t.row_normalize(v);
    t.value(out).clone()
}

pub fn softmax_rows(x: &Matrix, inv_temperature: f64) -> Matrix {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let beta = t.constant(Matrix::scalar(inv_temperature));
    let out = t.softmax_rows(v, beta).expect("1x1 temperature");
    t.value(out).clone()
}

pub fn cosine_similarity(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let out = t.cosine_similarity(va, vb)?;
    Ok(t.value(out).clone())
}

/// Mean negative log-likelihood of `labels` under row-wise log-probabilities.
pub fn cross_entropy(log_probs: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut t = Tape::new();
    let v = t.constant(log_probs.clone());
    let out = t.cross_entropy(v, labels)?;
    Ok(t.value(out).as_scalar())
}
