//! Central finite-difference oracle for tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// max |autodiff − central| / (|central| + 1e-8)
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinates failing `|ad − fd| ≤ atol + rtol·|fd|` are counted by
    /// [`GradCheck::violations`]; this keeps the raw pairs for that.
    pub pairs: Vec<(f64, f64)>,
}

impl GradCheck {
    pub fn violations(&self, rtol: f64, atol: f64) -> usize {
        self.pairs
            .iter()
            .filter(|(ad, fd)| (ad - fd).abs() > atol + rtol * fd.abs())
            .count()
    }

    pub fn passes(&self, rtol: f64, atol: f64) -> bool {
        self.violations(rtol, atol) == 0
    }
}

/// Compares tape gradients of `f` with central differences for every
/// coordinate of every parameter.
///
/// `f` receives a fresh tape with `params` registered as trainable leaves (in
/// order) and returns the scalar loss node.
pub fn finite_difference_check<F>(params: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let all: Vec<usize> = (0..params.len()).collect();
    finite_difference_check_subset(params, &all, step, f)
}

/// As [`finite_difference_check`], perturbing only the parameters listed in
/// `which`. The others still take part in the forward pass.
pub fn finite_difference_check_subset<F>(
    params: &[Tensor<f64>],
    which: &[usize],
    step: f64,
    mut f: F,
) -> Result<GradCheck>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut eval = |ps: &[Tensor<f64>]| -> Result<(f64, Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("finite-difference objective".into()));
        }
        Ok((v, tape, vars, loss))
    };

    let (_, tape, vars, loss) = eval(params)?;
    let grads = tape.backward(loss)?;

    let mut work = params.to_vec();
    let mut pairs = Vec::new();
    for &pi in which {
        let ad = grads.wrt(vars[pi])?;
        for c in 0..params[pi].len() {
            let orig = params[pi].data()[c];
            work[pi].data_mut()[c] = orig + step;
            let plus = eval(&work)?.0;
            work[pi].data_mut()[c] = orig - step;
            let minus = eval(&work)?.0;
            work[pi].data_mut()[c] = orig;
            pairs.push((ad.data()[c], (plus - minus) / (2.0 * step)));
        }
    }

    let max_abs_error = pairs
        .iter()
        .map(|(a, f)| (a - f).abs())
        .fold(0.0, f64::max);
    let max_rel_error = pairs
        .iter()
        .map(|(a, f)| (a - f).abs() / (f.abs() + 1e-8))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        max_rel_error,
        max_abs_error,
        pairs,
    })
}
