//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Worst disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Flat index of the worst element across the checked parameters, in
    /// parameter order.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Denominator floor for the relative error, so that elements whose true
/// gradient is zero are judged by absolute error at this scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of `f` against `(f(p+h) - f(p-h)) / 2h`.
///
/// `f` records a scalar loss on the tape it is given. At most
/// `per_tensor` elements of each parameter are probed (never fewer than
/// 32 unless the tensor is smaller); the choice is seeded by `seed`.
pub fn gradient_check<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    h: f64,
    per_tensor: usize,
    seed: u64,
    f: F,
) -> Result<GradReport>
where
    F: for<'p> Fn(&mut Tape<'p, f64>) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::config(format!("step h = {h} outside [1e-6, 1e-3]")));
    }
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::inference(store);
        let loss = f(&mut tape)?;
        tape.value(loss).item()
    };
    let first = eval(store)?;
    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        let grads = tape.backward(loss)?;
        params
            .iter()
            .map(|&id| {
                grads
                    .param(id)
                    .map(|g| g.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; store.value(id).numel()])
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut base = 0usize;
    for (pi, &id) in params.iter().enumerate() {
        let n = store.value(id).numel();
        let budget = per_tensor.max(32);
        let indices: Vec<usize> = if n <= budget {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, budget).into_vec();
            v.sort_unstable();
            v
        };
        for j in indices {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + h;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = orig - h;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = rel;
                report.worst_index = base + j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        base += n;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use std::cell::Cell;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::from_f64(&[4], &[0.5, -1.5, 2.0, 0.1]).unwrap());
        let r = gradient_check(&mut store, &[x], 1e-4, 32, 0, |tape| {
            let v = tape.param(x);
            let sq = tape.mul(v, v)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn rejects_bad_step() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::zeros(&[1]));
        let res = gradient_check(&mut store, &[x], 0.1, 32, 0, |tape| {
            let v = tape.param(x);
            Ok(tape.sum(v))
        });
        assert!(matches!(res, Err(Error::Config(_))));
    }

    #[test]
    fn detects_nondeterminism() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::zeros(&[1]));
        let calls = Cell::new(0.0);
        let res = gradient_check(&mut store, &[x], 1e-5, 32, 0, |tape| {
            calls.set(calls.get() + 1.0);
            let v = tape.param(x);
            let c = tape.constant(Tensor::scalar(calls.get()).reshape(&[1]).unwrap());
            let s = tape.add(v, c)?;
            Ok(tape.sum(s))
        });
        assert!(matches!(res, Err(Error::Determinism { .. })));
    }
}
