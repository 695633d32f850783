//! Dense-tensor numerics with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: row-major storage, 2-D matrix ops plus
//! the handful of kernels a compact transformer needs, and a per-step [`Tape`]
//! that records backward closures in execution order. There is no
//! broadcasting beyond bias-add over the last dimension, no views, no fusion.
//!
//! Training runs in `f32`; gradient-check tests instantiate the same code at
//! `f64`, which is why everything is generic over [`Scalar`].

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::rng::Rng;

mod ops;
mod tape;

pub mod gradcheck;

pub use ops::argmax;
pub use tape::Tape;

/// Element type of the engine: `f32` for training, `f64` for oracles.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Raw bit pattern, widened; used for byte-level fingerprints.
    fn to_bits_u64(self) -> u64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn ln(self) -> Self {
        self.ln()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn tanh(self) -> Self {
        self.tanh()
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn ln(self) -> Self {
        self.ln()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn tanh(self) -> Self {
        self.tanh()
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
}

struct Inner<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
}

/// Shared handle to a dense value buffer with optional gradient.
///
/// Cloning a `Tensor` clones the handle, not the data: parameter structs and
/// recorded tape closures all point at the same storage, which is what makes
/// in-place SGD updates visible everywhere. A single training session is
/// single-threaded, so `Rc<RefCell<..>>` is the right ownership model.
pub struct Tensor<F: Scalar> {
    inner: Rc<RefCell<Inner<F>>>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={}, data[..4]={:?})",
            inner.shape,
            inner.requires_grad,
            &inner.data[..inner.data.len().min(4)]
        )
    }
}

impl<F: Scalar> Tensor<F> {
    fn from_parts(shape: Vec<usize>, data: Vec<F>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad,
            })),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![F::ZERO; n], false)
    }

    pub fn scalar(value: F) -> Self {
        Self::from_parts(vec![1], vec![value], false)
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data, false))
    }

    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| F::from_f64(x)).collect())
    }

    /// Seeded normal init scaled by `std`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| F::from_f64(rng.normal() * std)).collect();
        Self::from_parts(shape.to_vec(), data, false)
    }

    /// Mark as trainable (builder style).
    pub fn with_grad(self) -> Self {
        self.inner.borrow_mut().requires_grad = true;
        self
    }

    pub fn set_requires_grad(&self, requires_grad: bool) {
        self.inner.borrow_mut().requires_grad = requires_grad;
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row/column count of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        let inner = self.inner.borrow();
        match inner.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(format!(
                "expected a 2-D tensor, got shape {other:?}"
            ))),
        }
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.inner.borrow().data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner
            .borrow()
            .data
            .iter()
            .map(|x| x.to_f64())
            .collect()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> F {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    pub fn value(&self, index: &[usize]) -> F {
        let inner = self.inner.borrow();
        let flat = flat_index(&inner.shape, index);
        inner.data[flat]
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.borrow().grad.clone()
    }

    pub fn clear_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Identity of the underlying storage; used to deduplicate parameter sets
    /// and to detect aliasing in tests.
    pub fn storage_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    pub fn same_storage(&self, other: &Tensor<F>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Detached copy: same values, fresh storage, no gradient tracking.
    pub fn detached_copy(&self) -> Tensor<F> {
        let inner = self.inner.borrow();
        Tensor::from_parts(inner.shape.clone(), inner.data.clone(), false)
    }

    /// FNV-1a fingerprint of the exact bit patterns of the values.
    /// Two tensors with equal fingerprints are byte-identical.
    pub fn fingerprint(&self) -> u64 {
        let inner = self.inner.borrow();
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for &v in &inner.data {
            for byte in v.to_bits_u64().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x1_0000_0000_01b3);
            }
        }
        hash
    }

    pub fn all_finite(&self) -> bool {
        self.inner.borrow().data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn borrow_data(&self) -> Ref<'_, [F]> {
        Ref::map(self.inner.borrow(), |inner| inner.data.as_slice())
    }

    /// Accumulate a gradient contribution, allocating the buffer on first use.
    /// No-op for tensors that do not require gradients.
    pub(crate) fn accumulate_grad(&self, contribution: &[F]) {
        let mut inner = self.inner.borrow_mut();
        if !inner.requires_grad {
            return;
        }
        debug_assert_eq!(contribution.len(), inner.data.len());
        let n = inner.data.len();
        let grad = inner.grad.get_or_insert_with(|| vec![F::ZERO; n]);
        for (g, &c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// In-place value update; only the optimizer should call this.
    pub(crate) fn apply_update(&self, f: impl Fn(F, F) -> F) {
        let mut inner = self.inner.borrow_mut();
        let grad = inner.grad.take().expect("apply_update without gradient");
        for (p, g) in inner.data.iter_mut().zip(&grad) {
            *p = f(*p, *g);
        }
    }

    /// Overwrite values in place, keeping shape and flags. Used by checkpoint
    /// restore and pool key finalization.
    pub fn store(&self, values: &[F]) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if values.len() != inner.data.len() {
            return Err(Error::shape(format!(
                "store: expected {} values, got {}",
                inner.data.len(),
                values.len()
            )));
        }
        inner.data.copy_from_slice(values);
        Ok(())
    }
}

pub(crate) fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    assert_eq!(shape.len(), index.len(), "index rank mismatch");
    let mut flat = 0;
    for (&bound, &i) in shape.iter().zip(index) {
        assert!(i < bound, "index {i} out of bound {bound}");
        flat = flat * bound + i;
    }
    flat
}

/// SGD with decoupled-from-nothing classic weight decay:
/// `p <- p - lr * (grad + weight_decay * p)`. Gradients are cleared after the
/// step. Tensors with `requires_grad = false` are left untouched; a trainable
/// tensor without a gradient is a contract violation.
pub fn sgd_step<F: Scalar>(params: &[Tensor<F>], lr: f64, weight_decay: f64) -> Result<()> {
    let lr = F::from_f64(lr);
    let wd = F::from_f64(weight_decay);
    for param in params {
        if !param.requires_grad() {
            continue;
        }
        if param.grad().is_none() {
            return Err(Error::contract(format!(
                "sgd_step: missing gradient on trainable tensor of shape {:?}",
                param.shape()
            )));
        }
        param.apply_update(|p, g| p - lr * (g + wd * p));
    }
    Ok(())
}

/// Drop any accumulated gradients.
pub fn zero_grads<F: Scalar>(params: &[Tensor<F>]) {
    for param in params {
        param.clear_grad();
    }
}
