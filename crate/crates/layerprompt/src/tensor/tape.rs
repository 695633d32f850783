//! Operation tape for reverse-mode differentiation.

use std::cell::{Cell, RefCell};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

type BackwardFn = Box<dyn FnOnce() -> std::result::Result<(), String>>;

/// Ordered record of the differentiable operations executed in one forward
/// pass. Each recorded entry is a closure that reads the output gradient and
/// accumulates contributions into the inputs; [`Tape::backward`] runs them in
/// exact reverse execution order.
///
/// A tape is good for one backward pass. The trainer builds a fresh tape per
/// step, so no graph survives across steps. Inference uses a non-recording
/// tape: the same op code runs, nothing is retained.
pub struct Tape<F: Scalar> {
    ops: RefCell<Vec<BackwardFn>>,
    recording: bool,
    consumed: Cell<bool>,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> Tape<F> {
    /// Tape that records backward closures.
    pub fn new() -> Self {
        Tape {
            ops: RefCell::new(Vec::new()),
            recording: true,
            consumed: Cell::new(false),
            _marker: std::marker::PhantomData,
        }
    }

    /// Non-recording tape for inference passes; ops run, nothing is taped.
    pub fn no_grad() -> Self {
        Tape {
            ops: RefCell::new(Vec::new()),
            recording: false,
            consumed: Cell::new(false),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded operations (diagnostics and tests).
    pub fn len(&self) -> usize {
        self.ops.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.borrow().is_empty()
    }

    /// Record a backward closure if this tape records and the output actually
    /// needs gradients.
    pub(super) fn record(
        &self,
        output: &Tensor<F>,
        backward: impl FnOnce() -> std::result::Result<(), String> + 'static,
    ) {
        if self.recording && output.requires_grad() {
            self.ops.borrow_mut().push(Box::new(backward));
        }
    }

    /// Output gradient tracking policy: an op output is differentiable iff any
    /// input is.
    pub(super) fn track<'a>(&self, inputs: impl IntoIterator<Item = &'a Tensor<F>>) -> bool
    where
        F: 'a,
    {
        self.recording && inputs.into_iter().any(|t| t.requires_grad())
    }

    /// Run the recorded operations backward from a scalar loss, accumulating
    /// gradients into every reachable tensor that requires them.
    pub fn backward(&self, loss: &Tensor<F>) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        if !self.recording {
            return Err(Error::contract("backward: tape is not recording"));
        }
        if self.consumed.get() {
            return Err(Error::contract(
                "backward: tape already consumed; reset or build a new tape",
            ));
        }
        if !loss.requires_grad() {
            return Err(Error::contract(
                "backward: loss does not depend on any trainable tensor",
            ));
        }
        self.consumed.set(true);
        loss.accumulate_grad(&[F::ONE]);
        let ops = std::mem::take(&mut *self.ops.borrow_mut());
        for op in ops.into_iter().rev() {
            op().map_err(Error::Contract)?;
        }
        Ok(())
    }

    /// Clear all recorded operations and allow a new backward pass.
    pub fn reset(&self) {
        self.ops.borrow_mut().clear();
        self.consumed.set(false);
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Tape::new()
    }
}
