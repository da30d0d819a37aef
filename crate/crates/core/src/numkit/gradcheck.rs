//! Central-difference gradient checking against the tape.

use super::{Element, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// max over coordinates of |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate
    pub worst: (usize, usize),
    pub coordinates: usize,
}

fn eval<T, F>(f: &F, inputs: &[Tensor<T>]) -> Result<(Tape<T>, Vec<Var>, Var)>
where
    T: Element,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(invalid("grad_check objective must be scalar"));
    }
    if !tape.value(out).all_finite() {
        return Err(Error::NonFinite("grad_check objective"));
    }
    Ok((tape, vars, out))
}

/// Compares reverse-mode gradients of the scalar `f` with respect to every
/// element of every input against central differences with step `eps`.
pub fn grad_check_many<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheck>
where
    T: Element,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(invalid(format!("eps {eps} outside [1e-4, 1e-2]")));
    }
    let (mut tape, vars, out) = eval(&f, inputs)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_f64_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[k].data_mut()[j] = T::of(orig.f64() + eps);
            let (tp, _, op) = eval(&f, &work)?;
            let fp = tp.value(op).data()[0].f64();
            work[k].data_mut()[j] = T::of(orig.f64() - eps);
            let (tm, _, om) = eval(&f, &work)?;
            let fm = tm.value(om).data()[0].f64();
            work[k].data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[k][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (k, j);
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`]; returns the max relative error.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    grad_check_many(|t, v| f(t, v[0]), std::slice::from_ref(x), eps).map(|r| r.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::<f64>::zeros(&[2]);
        assert!(grad_check(|t, v| Ok(t.sum(v)), &x, 0.5).is_err());
    }

    #[test]
    fn rejects_non_finite_objective() {
        let x = Tensor::<f64>::full(&[2], f64::INFINITY);
        assert!(grad_check(|t, v| Ok(t.sum(v)), &x, 1e-3).is_err());
    }
}
