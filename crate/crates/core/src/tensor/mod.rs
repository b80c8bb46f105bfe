//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a contiguous row-major array plus an optional gradient.
//! Operations are methods on a [`Graph`], which records every executed op so
//! [`Graph::backward`] can replay them in reverse. The element type is
//! generic: training runs in `f32`, gradient verification in `f64` (finite
//! differences are unreliable at single precision).
//!
//! Summation order is fixed — row-major, sequential, innermost accumulator —
//! so identical inputs produce bit-identical outputs.

mod check;
mod graph;
mod ops;

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

use crate::error::{Error, Result};

pub use check::{grad_check, GradCheckReport};
pub use graph::Graph;

/// Element type of a tensor: `f32` for training, `f64` for verification.
pub trait Elem:
    Float + NumAssignOps + FromPrimitive + ToPrimitive + fmt::Debug + Default + 'static
{
}

impl Elem for f32 {}
impl Elem for f64 {}

/// Lift an `f64` constant into the element type.
pub fn fl<F: Elem>(x: f64) -> F {
    F::from_f64(x).expect("constant representable in element type")
}

pub(crate) struct TensorData<F> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<F>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<F>>,
}

/// Shared handle to a tensor. Clones are cheap and alias the same storage;
/// gradient accumulation through a [`Graph`] resolves aliases by identity.
pub struct Tensor<F: Elem> {
    pub(crate) inner: Rc<RefCell<TensorData<F>>>,
}

impl<F: Elem> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<F: Elem> Tensor<F> {
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<F>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape,
                data,
                requires_grad: false,
                grad: None,
            })),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![F::zero(); numel])
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: F) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    /// Mark as a trainable leaf; gradients will accumulate into it.
    pub fn with_grad(self) -> Self {
        self.inner.borrow_mut().requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub(crate) fn set_requires_grad(&self, value: bool) {
        self.inner.borrow_mut().requires_grad = value;
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Borrow the underlying data without copying.
    pub fn data(&self) -> Ref<'_, [F]> {
        Ref::map(self.inner.borrow(), |d| d.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        let d = self.inner.borrow();
        assert_eq!(d.data.len(), 1, "item() on tensor of {} elements", d.data.len());
        d.data[0]
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the stored values. Shape must not change.
    pub fn set_data(&self, data: &[F]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    /// In-place update of values and gradient together (optimizer steps).
    pub fn update<R>(&self, f: impl FnOnce(&mut [F], Option<&[F]>) -> R) -> R {
        let mut inner = self.inner.borrow_mut();
        let TensorData { data, grad, .. } = &mut *inner;
        f(data.as_mut_slice(), grad.as_deref())
    }

    pub(crate) fn accumulate_grad(&self, delta: &[F]) {
        let mut inner = self.inner.borrow_mut();
        debug_assert!(inner.requires_grad);
        debug_assert_eq!(inner.data.len(), delta.len());
        match &mut inner.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => inner.grad = Some(delta.to_vec()),
        }
    }

    /// Identity key: two handles aliasing the same storage compare equal.
    pub(crate) fn key(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }
}

impl<F: Elem> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &d.shape)
            .field("requires_grad", &d.requires_grad)
            .finish()
    }
}
