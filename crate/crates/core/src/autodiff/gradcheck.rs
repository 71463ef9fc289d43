use serde::Serialize;

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Denominator floor for the relative error. Below it, the comparison is
/// effectively absolute, so near-zero gradients are not judged against
/// finite-difference round-off.
pub const REL_FLOOR: f64 = 1e-3;

/// Worst disagreement found in one parameter tensor.
#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Parameter tensors sorted by descending relative error.
    pub fn worst_offenders(&self) -> Vec<&ParamCheck> {
        let mut v: Vec<_> = self.params.iter().collect();
        v.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
        v
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every entry of every parameter.
///
/// `f` receives a fresh tape and one leaf per parameter (in the order of
/// `params`) and must return a 1×1 node. It has to be a pure function of the
/// parameter values: any randomness inside must be reseeded per call.
pub fn grad_check<F>(params: &[(String, Tensor)], eps: f64, tol: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|(_, t)| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = params
        .iter()
        .zip(&vars)
        .map(|((_, t), &v)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();

    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut checks = Vec::with_capacity(params.len());
    for (p, (name, _)) in params.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            entries: values[p].len(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_err: 0.0,
        };
        for k in 0..values[p].len() {
            let orig = values[p].data()[k];
            values[p].data_mut()[k] = orig + eps;
            let plus = eval(&values)?;
            values[p].data_mut()[k] = orig - eps;
            let minus = eval(&values)?;
            values[p].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[k];
            let err = relative_error(a, numeric);
            if err > check.rel_err || k == 0 {
                check.worst_index = k;
                check.analytic = a;
                check.numeric = numeric;
                check.rel_err = err;
            }
        }
        checks.push(check);
    }

    let max_rel_err = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        max_rel_err,
        tol,
        passed: max_rel_err < tol,
    })
}
