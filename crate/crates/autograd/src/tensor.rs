use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};

use crate::real::Real;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward rule of a recorded operation.
///
/// Receives the inputs the op was built from, the forward output values and
/// the upstream gradient; returns one gradient per input (`None` for inputs
/// that do not require grad).
pub(crate) trait BackwardOp<T: Real>: Send + Sync {
    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad_out: &[T]) -> Vec<Option<Vec<T>>>;
}

struct GradFn<T: Real> {
    inputs: Vec<Tensor<T>>,
    op: Box<dyn BackwardOp<T>>,
}

struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// N-dimensional value with an optional gradient slot.
///
/// Cloning is cheap (shared handle). Leaves created with [`Tensor::param`]
/// accumulate gradients across [`Tensor::backward`] calls until
/// [`Tensor::zero_grad`]; intermediate results never store gradients.
pub struct Tensor<T: Real>(Arc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length does not match shape {shape:?}"
        );
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced for shape {shape:?}"
        );
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Trainable leaf.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::new(vec![value; shape.iter().product()], shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::new(vec![value], &[])
    }

    pub fn from_f32(data: &[f32], shape: &[usize]) -> Self {
        Self::new(data.iter().map(|&v| T::of(v as f64)).collect(), shape)
    }

    /// Output of a recorded op. Records the backward rule only when some
    /// input requires grad.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: &[&Tensor<T>],
        op: impl BackwardOp<T> + 'static,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            op: Box::new(op),
        });
        Self::build(shape, data, requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.0.data.read()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.read().clone()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.data.read().iter().map(|v| v.as_f64() as f32).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let data = self.0.data.read();
        assert_eq!(data.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        data[0]
    }

    /// Overwrite values in place (optimizer updates, weight loading,
    /// running statistics).
    pub fn update<F: FnOnce(&mut [T])>(&self, f: F) {
        f(&mut self.0.data.write())
    }

    pub fn set_data(&self, values: &[T]) {
        let mut data = self.0.data.write();
        assert_eq!(data.len(), values.len(), "set_data length mismatch");
        data.copy_from_slice(values);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock() = None;
    }

    /// Constant copy of the current values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::new(self.to_vec(), self.shape())
    }

    /// Reverse-mode sweep from this tensor, seeding with ones.
    ///
    /// Gradients reach every leaf that requires grad and are added to
    /// whatever the leaf already holds.
    pub fn backward(&self) {
        if !self.requires_grad() {
            return;
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one(); self.numel()]);

        for node in order.iter().rev() {
            let Some(grad_out) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    let mut slot = node.0.grad.lock();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad_out).for_each(|(a, g)| *a += *g),
                        None => *slot = Some(grad_out),
                    }
                }
                Some(gf) => {
                    let grads = {
                        let out = node.0.data.read();
                        gf.op.backward(&gf.inputs, &out, &grad_out)
                    };
                    debug_assert_eq!(grads.len(), gf.inputs.len());
                    for (input, grad) in gf.inputs.iter().zip(grads) {
                        let Some(grad) = grad else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(grad.len(), input.numel());
                        match pending.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += *g),
                            None => {
                                pending.insert(input.id(), grad);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Nodes reachable through grad-requiring edges, parents before children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(gf) = &node.0.grad_fn {
                for input in &gf.inputs {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn constants_do_not_record_graph() {
        let a = Tensor::<f64>::new(vec![1.0, 2.0], &[2]);
        let b = ops::mul(&a, &a).unwrap();
        assert!(!b.requires_grad());
        assert!(b.is_leaf());
    }

    #[test]
    fn two_backward_passes_double_leaf_grads() {
        let w = Tensor::<f64>::param(vec![1.5, -2.0, 0.5], &[3]);
        let x = Tensor::new(vec![2.0, 3.0, -1.0], &[3]);
        let loss = ops::sum(&ops::mul(&w, &x).unwrap());
        loss.backward();
        let once = w.grad().unwrap();
        assert_eq!(once, vec![2.0, 3.0, -1.0]);
        loss.backward();
        let twice = w.grad().unwrap();
        assert_eq!(twice, vec![4.0, 6.0, -2.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum(w * w) -> d/dw = 2w
        let w = Tensor::<f64>::param(vec![3.0, -1.0], &[2]);
        let loss = ops::sum(&ops::mul(&w, &w).unwrap());
        loss.backward();
        assert_eq!(w.grad().unwrap(), vec![6.0, -2.0]);
    }
}
