//! Reverse-mode automatic differentiation over dense float64 matrices.
//!
//! A [`Tape`] records every operation as it is evaluated. Calling
//! [`Tape::backward`] on a 1×1 node walks the tape in reverse and leaves a
//! gradient on every node reachable from a trainable leaf.

mod gradcheck;
mod tape;

use rand::Rng;

pub use gradcheck::{
    grad_check, relative_error, GradCheckReport, ParamCheck, DEFAULT_EPS, DEFAULT_TOL, REL_FLOOR,
};
pub use tape::{softmax_rows, Elementwise, Reduce, Tape, Var};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted dropout: surviving entries are scaled by `1 / (1 - rate)` so the
/// expected activation is unchanged. Identity when `training` is false.
pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.shape(x);
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..r * c)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    tape.mul_const(x, Tensor::from_vec(r, c, mask)?)
}
