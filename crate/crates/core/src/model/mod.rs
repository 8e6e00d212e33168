//! Model components: entity-group mapping, group-correlation encoding,
//! hierarchical graph convolution, decay-aware recurrence, and the
//! event-type decoder.
//!
//! Each component keeps its weights as owned [`Tensor`]s and is bound onto
//! a [`Tape`] per forward pass through a [`Binder`], which records every
//! (name, variable) pair so the training loop can route gradients back to
//! the right parameter.

pub mod correlation;
pub mod decoder;
pub mod gcn;
pub mod mapper;
pub mod temporal;

use crate::tensor::{Tape, Tensor, Var};

/// Binds owned parameter tensors onto a tape, remembering their names.
pub struct Binder<'t> {
    tape: &'t Tape,
    trainable: bool,
    bound: Vec<(String, Var)>,
}

impl<'t> Binder<'t> {
    /// `trainable` decides whether bound tensors become tape parameters
    /// (gradients flow) or constants (pure inference).
    pub fn new(tape: &'t Tape, trainable: bool) -> Self {
        Binder {
            tape,
            trainable,
            bound: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn bind(&mut self, name: impl Into<String>, tensor: &Tensor) -> Var {
        let var = if self.trainable {
            self.tape.param(tensor)
        } else {
            self.tape.constant(tensor)
        };
        self.bound.push((name.into(), var));
        var
    }

    /// Every (name, var) bound so far, in binding order.
    pub fn into_bound(self) -> Vec<(String, Var)> {
        self.bound
    }
}
