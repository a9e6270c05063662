//! Central finite-difference verification of tape gradients.
//!
//! Objectives are re-evaluated in `f64` so that the difference quotient is
//! not swamped by single-precision rounding; the backward rules exercised are
//! the same generic code the `f32` models run.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub pass: bool,
}

/// Compares analytic gradients against central differences element-wise.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn finite_difference_check<F>(
    f: F,
    params: &ParamStore,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<'_, f64>) -> Result<Var>,
{
    check_with(f, params, step, tolerance, Tape::new)
}

pub(crate) fn check_with<'p, F, M>(
    f: F,
    params: &'p ParamStore,
    step: f64,
    tolerance: f64,
    make_tape: M,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<'_, f64>) -> Result<Var>,
    M: Fn(&'p ParamStore) -> Tape<'p, f64>,
{
    let eval = |tape: Tape<'_, f64>| -> Result<f64> {
        let v = f(&tape)?;
        Ok(tape.value(v).item())
    };
    let base = eval(Tape::inference(params))?;
    if base.to_bits() != eval(Tape::inference(params))?.to_bits() {
        return Err(Error::NonDeterministic);
    }

    let tape = make_tape(params);
    let loss = f(&tape)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        pass: true,
    };
    for id in params.ids() {
        let analytic = grads.get(id);
        for i in 0..params.get(id).numel() {
            let plus = eval(Tape::inference(params).with_perturbation(id, i, step))?;
            let minus = eval(Tape::inference(params).with_perturbation(id, i, -step))?;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    report.pass = report.max_relative_error <= tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Padding, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(shapes: &[(&str, &[usize])], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in shapes {
            store.add_uniform(*name, shape, 1.0, &mut rng).unwrap();
        }
        store
    }

    fn assert_passes<F: Fn(&Tape<'_, f64>) -> Result<Var>>(f: F, store: &ParamStore) {
        let r = finite_difference_check(f, store, 1e-3, 1e-2).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn dot_product_is_exact() {
        let store = store_with(&[("w", &[6])], 1);
        let w = store.id("w").unwrap();
        let r = finite_difference_check(
            |t| {
                let v = t.param(w)?;
                let sq = t.mul(v, v)?;
                t.sum(sq)
            },
            &store,
            1e-3,
            1e-4,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn non_deterministic_objective_is_rejected() {
        let store = store_with(&[("w", &[2])], 1);
        let w = store.id("w").unwrap();
        let counter = std::cell::Cell::new(0.0);
        let err = finite_difference_check(
            |t| {
                counter.set(counter.get() + 1.0);
                let v = t.param(w)?;
                let s = t.sum(v)?;
                t.add_scalar(s, counter.get())
            },
            &store,
            1e-3,
            1e-2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic));
    }

    #[test]
    fn elementwise_primitives() {
        let store = store_with(&[("a", &[3, 4]), ("b", &[4])], 2);
        let (a, b) = (store.id("a").unwrap(), store.id("b").unwrap());
        assert_passes(
            |t| {
                let av = t.param(a)?;
                let bv = t.param(b)?;
                let s = t.add(av, bv)?;
                let d = t.sub(s, bv)?;
                let m = t.mul(d, bv)?;
                let e = t.exp(m)?;
                let sp = t.softplus(e)?;
                let l = t.log(sp)?;
                let th = t.tanh(l)?;
                let si = t.silu(th)?;
                let q = t.square(si)?;
                let r = t.add_scalar(q, 1.0)?;
                let r = t.sqrt(r)?;
                let r = t.div(r, sp)?;
                let r = t.scale(r, 0.7)?;
                t.mean(r)
            },
            &store,
        );
    }

    #[test]
    fn structural_primitives() {
        let store = store_with(&[("a", &[2, 3, 4]), ("b", &[2, 3, 2])], 3);
        let (a, b) = (store.id("a").unwrap(), store.id("b").unwrap());
        assert_passes(
            |t| {
                let av = t.param(a)?;
                let bv = t.param(b)?;
                let c = t.concat(&[av, bv], 2)?;
                let tr = t.transpose(c, 0, 2)?;
                let r = t.reshape(tr, &[6, 6])?;
                let s = t.slice(r, 1, 1, 5)?;
                let sm = t.softmax(s)?;
                let w = t.mul(sm, s)?;
                let m = t.mean_axis(w, 0)?;
                let ss = t.sum_axis(r, 1)?;
                let ss = t.square(ss)?;
                let a1 = t.sum(m)?;
                let a2 = t.mean(ss)?;
                t.add(a1, a2)
            },
            &store,
        );
    }

    #[test]
    fn matmul_conv_attention() {
        let store = store_with(
            &[
                ("x", &[2, 3, 5]),
                ("w", &[4, 3, 3]),
                ("bias", &[4]),
                ("m", &[4, 4]),
                ("bm", &[2, 4, 3]),
            ],
            4,
        );
        let id = |n: &str| store.id(n).unwrap();
        for padding in [Padding::Left, Padding::Same] {
            assert_passes(
                |t| {
                    let y = t.conv1d(t.param(id("x"))?, t.param(id("w"))?, Some(t.param(id("bias"))?), padding)?;
                    let y = t.transpose(y, 1, 2)?; // [2, 5, 4]
                    let q = t.matmul(y, t.param(id("m"))?)?;
                    let att = t.attention(q, y, y)?;
                    let bm = t.matmul(att, t.param(id("bm"))?)?; // batched [2,5,4]x[2,4,3]
                    let sq = t.square(bm)?;
                    t.mean(sq)
                },
                &store,
            );
        }
    }

    #[test]
    fn perturbation_only_touches_target() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let tape: Tape<f64> = Tape::inference(&store).with_perturbation(a, 1, 0.5);
        let v = tape.param(a).unwrap();
        assert_eq!(tape.value(v).data(), &[1.0, 2.5]);
    }
}
