//! A small N-dimensional tensor engine with reverse-mode differentiation.
//!
//! Every op that touches a tensor requiring gradients records its parents and
//! a backward closure on the output node. [`Tensor::backward`] orders the
//! reachable nodes topologically (the [`Tape`]), visits each op once in
//! reverse, and accumulates into the `grad` buffers of leaf tensors.
//! Gradients of intermediate nodes live only for the duration of one
//! backward call, so repeated calls accumulate into leaves only.
//!
//! Values are stored behind `Arc` and captured by value when an op records
//! itself, so replacing a parameter's value after a forward pass never
//! changes what that pass's backward sees.

mod conv;
mod gradcheck;
mod ops;
mod optim;
mod taps;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use num_traits::Float;

use crate::error::{Error, Result};

pub use conv::ConvSpec;
pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{adamw_step, clip_grad_norm, grad_norm, zero_grads, AdamWConfig, AdamWState};

/// Element type: `f32` for training and inference, `f64` for gradient checks.
pub trait Scalar:
    Float + Send + Sync + fmt::Debug + Default + Sum + AddAssign + MulAssign + 'static
{
    /// `C ← α·A·B + β·C` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).unwrap()
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap()
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                // Extent checks so the unsafe call below never reads out of bounds.
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows - 1) * rs.unsigned_abs() + (cols - 1) * cs.unsigned_abs() + 1
                    }
                };
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: A too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: B too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: C too short");
                // SAFETY: all three operands were bounds-checked above and C
                // does not alias A or B (distinct borrows).
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording any backward information on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Maps the upstream gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: RwLock<Arc<Vec<T>>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
    op: &'static str,
}

/// Reference-counted handle to a tensor node. Cloning is cheap and shares
/// the node.
pub struct Tensor<T: Scalar>(Arc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &self.0.op)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(Arc::new(data)),
            requires_grad,
            grad: Mutex::new(None),
            parents: Vec::new(),
            backward: None,
            op: "leaf",
        })))
    }

    /// A constant input (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// A trainable leaf whose gradient accumulates across backward calls.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![T::zero(); numel(shape)], false).unwrap()
    }

    pub fn scalar(x: T) -> Self {
        Self::leaf(Vec::new(), vec![x], false).unwrap()
    }

    /// Output of an op. Parents and the closure are kept only if some parent
    /// needs a gradient and recording is enabled.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: &[&Tensor<T>],
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{op}: output size mismatch");
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(Arc::new(data)),
            requires_grad: track,
            grad: Mutex::new(None),
            parents: if track {
                parents.iter().map(|&p| p.clone()).collect()
            } else {
                Vec::new()
            },
            backward: if track { Some(Box::new(backward)) } else { None },
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op
    }

    /// Shared handle to the current values.
    pub fn values(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.0.data.read().unwrap())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.values().as_ref().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        let v = self.values();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", self.shape());
        v[0]
    }

    /// Replace the values of a leaf in place (used by optimizers). Graphs
    /// already recorded keep the values they captured.
    pub fn set_values(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::Shape(format!(
                "set_values: {} values for shape {:?}",
                data.len(),
                self.shape()
            )));
        }
        *self.0.data.write().unwrap() = Arc::new(data);
        Ok(())
    }

    /// Mutate leaf values in place.
    pub fn update_values(&self, f: impl FnOnce(&mut [T])) {
        let mut guard = self.0.data.write().unwrap();
        let values: &mut Vec<T> = Arc::make_mut(&mut *guard);
        f(values);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().unwrap().clone()
    }

    pub fn set_grad(&self, grad: Option<Vec<T>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.numel() {
                return Err(Error::Shape(format!(
                    "set_grad: {} values for shape {:?}",
                    g.len(),
                    self.shape()
                )));
            }
        }
        *self.0.grad.lock().unwrap() = grad;
        Ok(())
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    /// Apply `f` to the gradient buffer if present.
    pub fn with_grad_mut<R>(&self, f: impl FnOnce(&mut Vec<T>) -> R) -> Option<R> {
        self.0.grad.lock().unwrap().as_mut().map(f)
    }

    /// A gradient-free copy sharing the same values.
    pub fn detach(&self) -> Tensor<T> {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: self.0.shape.clone(),
            data: RwLock::new(self.values()),
            requires_grad: false,
            grad: Mutex::new(None),
            parents: Vec::new(),
            backward: None,
            op: "detach",
        }))
    }

    /// Same values viewed with another shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {shape:?}",
                self.shape()
            )));
        }
        let data = self.values().as_ref().clone();
        Ok(Tensor::from_op("reshape", shape.to_vec(), data, &[self], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reverse-mode sweep from a one-element tensor.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let tape = Tape::record(self);
        tape.run(self)
    }
}

/// Reachable op nodes of one loss in topological order (parents first).
pub struct Tape<T: Scalar> {
    order: Vec<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn record(loss: &Tensor<T>) -> Self {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        // Iterative post-order DFS.
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(loss.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !node.requires_grad() || !seen.insert(node.0.id) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in node.0.parents.iter().rev() {
                if p.requires_grad() && !seen.contains(&p.0.id) {
                    stack.push((p.clone(), false));
                }
            }
        }
        Tape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Names of the recorded ops in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.order.iter().map(|t| t.op_name()).collect()
    }

    fn run(&self, loss: &Tensor<T>) -> Result<()> {
        if !loss.requires_grad() {
            return Ok(());
        }
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(loss.0.id, vec![T::one()]);
        for node in self.order.iter().rev() {
            let Some(upstream) = pending.remove(&node.0.id) else {
                continue;
            };
            let Some(backward) = &node.0.backward else {
                // Leaf that requires grad: accumulate.
                let mut slot = node.0.grad.lock().unwrap();
                match slot.as_mut() {
                    Some(g) => g.iter_mut().zip(&upstream).for_each(|(a, &b)| *a += b),
                    None => *slot = Some(upstream),
                }
                continue;
            };
            let grads = backward(&upstream);
            debug_assert_eq!(grads.len(), node.0.parents.len(), "{}", node.0.op);
            for (parent, grad) in node.0.parents.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(grad.len(), parent.numel(), "{} grad size", node.0.op);
                match pending.get_mut(&parent.0.id) {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &b)| *a += b),
                    None => {
                        pending.insert(parent.0.id, grad);
                    }
                }
            }
        }
        Ok(())
    }
}

pub use ops::*;
