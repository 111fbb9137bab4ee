use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Real, Tensor};
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// What a backward closure sees: the gradient w.r.t. the op output, the
/// forward values of the inputs and output, and which inputs need a gradient.
pub(crate) struct BackwardCtx<'a, T: Real> {
    pub grad: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn<T> = dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>;

struct Op<T: Real> {
    name: &'static str,
    parents: Vec<Var<T>>,
    backward: Box<BackwardFn<T>>,
}

struct Node<T: Real> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<Op<T>>,
}

/// A tensor participating (optionally) in a differentiation graph.
///
/// Cloning is cheap and shares the underlying node.
pub struct Var<T: Real = f32>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Var#{}({:?}, grad={}, op={})",
            self.0.id,
            self.0.value.shape(),
            self.0.requires_grad,
            self.0.op.as_ref().map_or("leaf", |o| o.name)
        )
    }
}

impl<T: Real> Var<T> {
    fn new(value: Tensor<T>, requires_grad: bool, op: Option<Op<T>>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op,
        }))
    }

    /// A value that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::new(value, false, None)
    }

    /// A leaf whose gradient is collected by [`Var::backward`].
    pub fn param(value: Tensor<T>) -> Self {
        Self::new(value, true, None)
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> [usize; 4] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Record the result of an operation. The value must be finite; the
    /// backward closure is kept only if some input requires a gradient.
    pub(crate) fn from_op(
        name: &'static str,
        value: Tensor<T>,
        parents: &[&Var<T>],
        backward: impl Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Self> {
        value.ensure_finite(name)?;
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let op = requires_grad.then(|| Op {
            name,
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward: Box::new(backward),
        });
        Ok(Self::new(value, requires_grad, op))
    }

    /// Reverse pass seeded with ones of the output's shape.
    pub fn backward(&self) -> Result<Gradients<T>> {
        self.backward_with(Tensor::full(self.shape(), T::one()))
    }

    /// Reverse pass seeded with `seed` (a vector-Jacobian product).
    pub fn backward_with(&self, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.shape() {
            return Err(Error::invalid(
                "backward",
                format!(
                    "seed shape {:?} differs from output {:?}",
                    seed.shape(),
                    self.shape()
                ),
            ));
        }
        let mut leaves = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { grads: leaves });
        }

        // Ids are allocated in creation order and every op is created after
        // its inputs, so descending id order is a reverse topological order.
        let mut order: Vec<Var<T>> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            if let Some(op) = &v.0.op {
                stack.extend(op.parents.iter().cloned());
            }
            order.push(v);
        }
        order.sort_unstable_by_key(|v| std::cmp::Reverse(v.id()));

        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for v in &order {
            let Some(grad) = pending.remove(&v.id()) else {
                continue;
            };
            let Some(op) = &v.0.op else {
                leaves.insert(v.id(), grad);
                continue;
            };
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: op.parents.iter().map(|p| p.value()).collect(),
                output: v.value(),
                needs: op.parents.iter().map(|p| p.requires_grad()).collect(),
            };
            let parent_grads = (op.backward)(&ctx);
            debug_assert_eq!(parent_grads.len(), op.parents.len(), "{}", op.name);
            for (p, g) in op.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.shape(), p.shape(), "{} gradient shape", op.name);
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        op: op.name,
                        what: "the gradient of its input".into(),
                    });
                }
                match pending.get_mut(&p.id()) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        pending.insert(p.id(), g);
                    }
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Gradients of the leaves reached by a reverse pass.
pub struct Gradients<T: Real> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&var.id())
    }

    /// Gradient of `var`, or zeros when the pass never reached it.
    pub fn get_or_zero(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn take(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        self.grads.remove(&var.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn shared_input_accumulates_gradient() {
        let x = Var::param(Tensor::<f64>::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let y = ops::mul(&x, &x).unwrap();
        let z = ops::add(&y, &x).unwrap();
        let g = z.backward().unwrap();
        // d/dx (x^2 + x) = 2x + 1
        assert_eq!(g.get(&x).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn constants_record_no_history() {
        let a = Var::constant(Tensor::<f32>::full([1, 1, 2, 2], 1.0));
        let b = ops::scale(&a, 2.0).unwrap();
        assert!(!b.requires_grad());
        assert!(b.0.op.is_none());
    }

    #[test]
    fn non_finite_result_is_an_error() {
        let a = Var::constant(Tensor::<f32>::full([1, 1, 1, 1], f32::MAX));
        let err = ops::scale(&a, 10.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "scale", .. }));
    }
}
