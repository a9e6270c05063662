use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::ops::{self, Padding, Primitive};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

struct Node<T> {
    value: Rc<Tensor<T>>,
    prim: Option<Primitive>,
    inputs: Vec<Var>,
    aux: Option<Tensor<T>>,
    tracked: bool,
    param: Option<ParamId>,
}

/// One forward pass worth of primitive applications, in creation order.
///
/// Creation order is a valid topological order, so backward is a single
/// reverse sweep. Nodes that do not depend on any tracked leaf carry no
/// backward information.
pub struct Tape<'p, T: Float = f32> {
    store: Option<&'p ParamStore>,
    track_params: bool,
    nodes: RefCell<Vec<Node<T>>>,
    bound: RefCell<Vec<Option<Var>>>,
    perturb: Option<(ParamId, usize, T)>,
    consumed: Cell<bool>,
    #[cfg(test)]
    fault: Option<&'static str>,
}

impl<'p, T: Float> Tape<'p, T> {
    /// Tape whose parameters require gradients.
    pub fn new(store: &'p ParamStore) -> Self {
        Self::build(Some(store), true)
    }

    /// Tape for evaluation only; parameters enter as constants.
    pub fn inference(store: &'p ParamStore) -> Self {
        Self::build(Some(store), false)
    }

    /// Tape without any parameters.
    pub fn detached() -> Self {
        Self::build(None, false)
    }

    fn build(store: Option<&'p ParamStore>, track_params: bool) -> Self {
        Tape {
            store,
            track_params,
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(vec![None; store.map_or(0, |s| s.len())]),
            perturb: None,
            consumed: Cell::new(false),
            #[cfg(test)]
            fault: None,
        }
    }

    /// Shifts one scalar of one parameter by `delta` when it is bound.
    pub fn with_perturbation(mut self, id: ParamId, index: usize, delta: T) -> Self {
        self.perturb = Some((id, index, delta));
        self
    }

    #[cfg(test)]
    pub(crate) fn with_fault(mut self, prim: &'static str) -> Self {
        self.fault = Some(prim);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// Records a leaf. `tensor.requires_grad()` decides whether it is tracked.
    pub fn leaf(&self, tensor: Tensor<T>) -> Var {
        let tracked = tensor.requires_grad();
        self.push(Node {
            value: Rc::new(tensor),
            prim: None,
            inputs: Vec::new(),
            aux: None,
            tracked,
            param: None,
        })
    }

    /// Records an untracked constant given in storage precision.
    pub fn constant(&self, tensor: &Tensor<f32>) -> Var {
        self.leaf(tensor.cast::<T>().with_requires_grad(false))
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.leaf(Tensor::scalar(T::from_f64(value)))
    }

    /// Binds a parameter; repeated calls return the same variable.
    pub fn param(&self, id: ParamId) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| Error::Invalid("tape has no parameter store".into()))?;
        if let Some(v) = self.bound.borrow().get(id.0).copied().flatten() {
            return Ok(v);
        }
        if id.0 >= store.len() {
            return Err(Error::Invalid(format!("unknown parameter {}", id.0)));
        }
        let mut value = store.get(id).cast::<T>().with_requires_grad(self.track_params);
        if let Some((pid, index, delta)) = self.perturb {
            if pid == id {
                value.data_mut()[index] += delta;
            }
        }
        let var = self.push(Node {
            value: Rc::new(value),
            prim: None,
            inputs: Vec::new(),
            aux: None,
            tracked: self.track_params,
            param: Some(id),
        });
        self.bound.borrow_mut()[id.0] = Some(var);
        Ok(var)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].tracked
    }

    /// Applies a primitive, recording it when any input is tracked.
    pub fn apply(&self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let (fwd, tracked) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor<T>> = inputs.iter().map(|v| nodes[v.0].value.as_ref()).collect();
            let fwd = ops::forward(&prim, &values)?;
            let tracked = inputs.iter().any(|v| nodes[v.0].tracked);
            (fwd, tracked)
        };
        if !fwd.value.is_finite() {
            return Err(Error::NonFinite { op: prim.name() });
        }
        let (prim, inputs, aux) = if tracked {
            (Some(prim), inputs.to_vec(), fwd.aux)
        } else {
            (None, Vec::new(), None)
        };
        Ok(self.push(Node {
            value: Rc::new(fwd.value),
            prim,
            inputs,
            aux,
            tracked,
            param: None,
        }))
    }

    /// Reverse sweep from a scalar loss. Parameters never reached get zero
    /// gradients. A tape can only be differentiated once.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed.replace(true) {
            return Err(Error::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut param_grads: Vec<Tensor<T>> = self
            .store
            .map(|s| s.iter().map(|(_, _, t)| Tensor::zeros(t.shape().to_vec())).collect())
            .unwrap_or_default();
        if !nodes[loss.0].tracked {
            return Ok(Gradients { grads: param_grads });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            let Some(g) = grads[i].take() else { continue };
            if let Some(pid) = node.param {
                param_grads[pid.0] = g;
                continue;
            }
            let Some(prim) = &node.prim else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| nodes[v.0].value.as_ref()).collect();
            #[allow(unused_mut)]
            let mut input_grads = ops::backward(prim, &inputs, &node.value, node.aux.as_ref(), &g)?;
            #[cfg(test)]
            if self.fault == Some(prim.name()) {
                for t in input_grads.iter_mut() {
                    t.data_mut().iter_mut().for_each(|v| *v = *v * T::from_f64(1.5));
                }
            }
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                if !nodes[input.0].tracked {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(ig.data())
                        .for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads: param_grads })
    }

    // Convenience wrappers over `apply`.

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::AddScalar(c), &[a])
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn conv1d(&self, x: Var, w: Var, bias: Option<Var>, padding: Padding) -> Result<Var> {
        match bias {
            Some(b) => self.apply(Primitive::Conv1d { padding }, &[x, w, b]),
            None => self.apply(Primitive::Conv1d { padding }, &[x, w]),
        }
    }

    pub fn transpose(&self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        self.apply(Primitive::Transpose(d0, d1), &[a])
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[a])
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, xs)
    }

    pub fn slice(&self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, end }, &[a])
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum { axis: None }, &[a])
    }

    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Sum { axis: Some(axis) }, &[a])
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean { axis: None }, &[a])
    }

    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Mean { axis: Some(axis) }, &[a])
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn softplus(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softplus, &[a])
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sqrt, &[a])
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Square, &[a])
    }

    pub fn silu(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Silu, &[a])
    }

    pub fn softmax(&self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn attention(&self, q: Var, k: Var, v: Var) -> Result<Var> {
        self.apply(Primitive::ScaledDotAttention, &[q, k, v])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn add_forward() {
        let tape: Tape = Tape::detached();
        let a = tape.constant(&t(&[2], &[1.0, 2.0]));
        let b = tape.constant(&t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let tape: Tape = Tape::detached();
        let i2 = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let a = tape.constant(&t(&[2, 2], &[0.3, -1.2, 5.0, 2.5]));
        let c = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(a).data());
    }

    #[test]
    fn softmax_uniform() {
        let tape: Tape = Tape::detached();
        let a = tape.constant(&t(&[3], &[0.0, 0.0, 0.0]));
        let s = tape.softmax(a).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn conv1d_identity_kernel() {
        let tape: Tape = Tape::detached();
        let x = t(&[2, 1, 5], &[1.0, -2.0, 3.0, 0.5, 7.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let xv = tape.constant(&x);
        let w = tape.constant(&t(&[1, 1, 1], &[1.0]));
        for pad in [Padding::Left, Padding::Same] {
            let y = tape.conv1d(xv, w, None, pad).unwrap();
            assert_eq!(tape.value(y).data(), x.data());
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", t(&[2], &[1.0, 2.0])).unwrap();
        let tape: Tape = Tape::new(&store);
        let xv = tape.param(x).unwrap();
        let sq = tape.square(xv).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut store = ParamStore::new();
        let x = store.add("x", t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let tape: Tape = Tape::new(&store);
        let c = tape.scalar(4.0);
        let g = tape.backward(c).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut store = ParamStore::new();
        let x = store.add("x", t(&[1], &[1.0])).unwrap();
        let tape: Tape = Tape::new(&store);
        let xv = tape.param(x).unwrap();
        let loss = tape.sum(xv).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let x = store.add("x", t(&[2], &[1.0, 2.0])).unwrap();
        let tape: Tape = Tape::new(&store);
        let xv = tape.param(x).unwrap();
        assert!(matches!(tape.backward(xv), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let tape: Tape = Tape::detached();
        let a = tape.constant(&t(&[1], &[-1.0]));
        assert!(matches!(tape.log(a), Err(Error::NonFinite { op: "log" })));
        let z = tape.constant(&t(&[1], &[0.0]));
        assert!(matches!(tape.div(a, z), Err(Error::NonFinite { op: "div" })));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let tape: Tape = Tape::detached();
        let a = tape.constant(&t(&[2, 3], &[0.0; 6]));
        let b = tape.constant(&t(&[2], &[0.0; 2]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(tape.matmul(a, a), Err(Error::Shape { .. })));
    }

    #[test]
    fn leading_broadcast_reduces_gradient() {
        let mut store = ParamStore::new();
        let b = store.add("b", t(&[3], &[0.1, 0.2, 0.3])).unwrap();
        let tape: Tape = Tape::new(&store);
        let x = tape.constant(&t(&[4, 3], &[1.0; 12]));
        let bv = tape.param(b).unwrap();
        let y = tape.add(x, bv).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b).data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn corrupted_backward_rule_fails_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let w = store.add_uniform("w", &[5], 1.0, &mut rng).unwrap();
        let f = |tape: &Tape<f64>| {
            let wv = tape.param(w)?;
            let e = tape.tanh(wv)?;
            tape.sum(e)
        };
        assert!(finite_difference_check(f, &store, 1e-3, 1e-2).unwrap().pass);

        // Same objective with the tanh backward rule scaled by 1.5.
        let report = crate::numerics::gradcheck::check_with(f, &store, 1e-3, 1e-2, |s| {
            Tape::new(s).with_fault("tanh")
        })
        .unwrap();
        assert!(!report.pass);
        let worst = report.max_relative_error;
        assert!(worst > 1e-2, "fault should be detected, worst = {worst}");
    }
}
