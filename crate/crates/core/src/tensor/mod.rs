//! Dense f64 tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value plus an optional link to the operation
//! that produced it. Operations on tensors that require gradients record a
//! node; [`Tensor::backward`] walks the recorded graph from a scalar loss,
//! accumulates gradients into every reachable tensor that requires them and
//! then frees the graph.
//!
//! Graphs are `Rc`-based and therefore confined to the thread that built
//! them. Independent graphs can be built on different threads.

mod gemm;
mod ops;
pub mod optim;
pub mod params;

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

pub use optim::{adam_step, Adam, AdamConfig};
pub use params::ParamStore;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("degenerate input to {op}: {reason}")]
    Degenerate { op: &'static str, reason: String },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("invalid argument to {op}: {reason}")]
    Invalid { op: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Handle to a tensor value. Cloning is cheap and shares the value.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: RefCell<Option<Node>>,
}

struct Node {
    inputs: Vec<Tensor>,
    op: ops::Op,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn build(data: Arc<Vec<f64>>, shape: Vec<usize>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: RefCell::new(node),
        }))
    }

    fn check_len(data_len: usize, shape: &[usize]) -> Result<()> {
        let expected: usize = shape.iter().product();
        if expected != data_len {
            return Err(TensorError::Shape { op: "new", lhs: shape.to_vec(), rhs: vec![data_len] });
        }
        Ok(())
    }

    /// Constant leaf (no gradient tracking).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::check_len(data.len(), shape)?;
        Ok(Self::build(Arc::new(data), shape.to_vec(), false, None))
    }

    /// Leaf that requires gradients.
    pub fn variable(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::check_len(data.len(), shape)?;
        Ok(Self::build(Arc::new(data), shape.to_vec(), true, None))
    }

    /// Leaf over an existing shared buffer, used to bind parameters without copying.
    pub fn from_shared(data: Arc<Vec<f64>>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        Self::check_len(data.len(), shape)?;
        Ok(Self::build(data, shape.to_vec(), requires_grad, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(Arc::new(vec![value]), Vec::new(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(Arc::new(vec![0.0; n]), shape.to_vec(), false, None)
    }

    /// `[1, 3, N]` tensor from a list of points.
    pub fn from_points(points: &[[f64; 3]], requires_grad: bool) -> Self {
        let n = points.len();
        let mut data = vec![0.0; 3 * n];
        for (i, p) in points.iter().enumerate() {
            for c in 0..3 {
                data[c * n + i] = p[c];
            }
        }
        Self::build(Arc::new(data), vec![1, 3, n], requires_grad, None)
    }

    /// Inverse of [`Tensor::from_points`] for batch element `b` of a `[B, 3, N]` tensor.
    pub fn to_points(&self, b: usize) -> Vec<[f64; 3]> {
        assert!(self.rank() == 3 && self.shape()[1] == 3, "expected [B,3,N], got {:?}", self.shape());
        let n = self.shape()[2];
        let base = b * 3 * n;
        let d = self.values();
        (0..n).map(|i| [d[base + i], d[base + n + i], d[base + 2 * n + i]]).collect()
    }

    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, inputs: Vec<Tensor>, op: ops::Op) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then_some(Node { inputs, op });
        Self::build(Arc::new(data), shape, requires_grad, node)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    pub fn shared_values(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.0.data)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        self.0.grad.replace(None);
    }

    /// True while this tensor still references a recorded operation.
    pub fn has_graph(&self) -> bool {
        self.0.node.borrow().is_some()
    }

    /// Same values, no ancestry, no gradient tracking.
    pub fn detach(&self) -> Tensor {
        Self::build(Arc::clone(&self.0.data), self.0.shape.clone(), false, None)
    }

    /// Same values, no ancestry, as a fresh leaf that requires gradients.
    pub fn detach_tracked(&self) -> Tensor {
        Self::build(Arc::clone(&self.0.data), self.0.shape.clone(), true, None)
    }

    fn accumulate_grad(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(&g) {
                    *e += v;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from this scalar. Gradients add onto any already
    /// present; the graph below `self` is released afterwards.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Inputs always carry smaller ids than their outputs, so descending id
        // order over the reachable set is a valid reverse topological order.
        let mut reachable: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            if let Some(node) = t.0.node.borrow().as_ref() {
                for input in &node.inputs {
                    if input.requires_grad() && seen.insert(input.id()) {
                        stack.push(input.clone());
                    }
                }
            }
            reachable.push(t);
        }
        reachable.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in &reachable {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            if let Some(node) = t.0.node.borrow().as_ref() {
                let input_grads = node.op.backward(&node.inputs, t, &g);
                for (input, ig) in node.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    match pending.get_mut(&input.id()) {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&ig) {
                                *a += v;
                            }
                        }
                        None => {
                            pending.insert(input.id(), ig);
                        }
                    }
                }
            }
            t.accumulate_grad(g);
        }
        for t in &reachable {
            t.0.node.replace(None);
        }
        Ok(())
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) for strided loops.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_len() {
        assert!(Tensor::new(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        let t = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let x = Tensor::variable(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_quadratic() {
        let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.relu().backward(), Err(TensorError::NonScalar(_))));
    }

    #[test]
    fn shared_input_accumulates_both_consumers() {
        let x = Tensor::variable(vec![3.0], &[1]).unwrap();
        let a = x.mul_scalar(2.0);
        let b = x.mul(&x).unwrap();
        a.add(&b).unwrap().sum().backward().unwrap();
        // d/dx (2x + x^2) = 2 + 2x
        assert_eq!(x.grad().unwrap(), vec![8.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::variable(vec![1.0, -1.0], &[2]).unwrap();
        x.sum().backward().unwrap();
        x.mul_scalar(3.0).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 4.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn graph_is_freed_but_values_survive() {
        let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.tanh();
        let loss = y.sum();
        let before = y.values().to_vec();
        loss.backward().unwrap();
        assert!(!y.has_graph());
        assert!(!loss.has_graph());
        assert_eq!(y.values(), &before[..]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.mul_scalar(2.0);
        let d = y.detach();
        assert_eq!(d.values(), y.values());
        d.mul(&d).unwrap();
        let z = d.detach_tracked();
        z.mul(&z).unwrap().sum().backward().unwrap();
        assert!(x.grad().is_none());
        assert_eq!(z.grad().unwrap(), vec![4.0, 8.0]);
    }

    #[test]
    fn ids_increase() {
        let a = Tensor::scalar(1.0);
        let b = Tensor::scalar(2.0);
        assert!(b.id() > a.id());
    }

    #[test]
    fn points_roundtrip() {
        let pts = vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let t = Tensor::from_points(&pts, false);
        assert_eq!(t.shape(), &[1, 3, 2]);
        assert_eq!(t.values(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(t.to_points(0), pts);
    }
}
