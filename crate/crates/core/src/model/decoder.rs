//! Conv-TransE style event-type scoring.
//!
//! The final subject and object states are stacked as a 2-row matrix,
//! convolved by C two-row kernels with same padding, flattened through a
//! fully connected layer back to the representation width, and scored
//! against every event-type row by a sigmoid of the inner products.

use crate::error::{Error, Result};
use crate::model::Binder;
use crate::tensor::{xavier_init, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// C kernels over both stacked rows, packed as [channels, 2*k].
    pub kernels: Tensor,
    pub kernel_bias: Tensor,
    /// Fully connected map from the flattened feature maps [channels*d]
    /// back to [d].
    pub w_fc: Tensor,
    pub b_fc: Tensor,
    pub kernel_width: usize,
}

impl DecoderParams {
    pub fn init(dim: usize, channels: usize, kernel_width: usize, seed: u64) -> Result<Self> {
        if kernel_width % 2 == 0 {
            return Err(Error::invalid("decoder", "kernel width must be odd"));
        }
        Ok(DecoderParams {
            kernels: xavier_init(channels, 2 * kernel_width, seed)?,
            kernel_bias: Tensor::zeros(&[channels]),
            w_fc: xavier_init(channels * dim, dim, seed.wrapping_add(1))?,
            b_fc: Tensor::zeros(&[dim]),
            kernel_width,
        })
    }

    pub fn channels(&self) -> usize {
        self.kernels.rows()
    }

    pub fn bind(&self, binder: &mut Binder<'_>, prefix: &str) -> DecoderVars {
        DecoderVars {
            kernels: binder.bind(format!("{prefix}.kernels"), &self.kernels),
            kernel_bias: binder.bind(format!("{prefix}.kernel_bias"), &self.kernel_bias),
            w_fc: binder.bind(format!("{prefix}.w_fc"), &self.w_fc),
            b_fc: binder.bind(format!("{prefix}.b_fc"), &self.b_fc),
            kernel_width: self.kernel_width,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub kernels: Var,
    pub kernel_bias: Var,
    pub w_fc: Var,
    pub b_fc: Var,
    pub kernel_width: usize,
}

/// Probability of every event type for one (subject, object) pair.
///
/// `subject` and `object` are length-d vectors; `type_matrix` holds one
/// final event-type representation per row.
pub fn conv_transe_score(
    tape: &Tape,
    vars: &DecoderVars,
    subject: Var,
    object: Var,
    type_matrix: Var,
) -> Result<Var> {
    let dim = tape.shape_of(subject)[0];
    let channels = tape.shape_of(vars.kernels)[0];
    let n_types = tape.shape_of(type_matrix)[0];

    let stacked = tape.stack_rows(&[subject, object])?;
    let conv = tape.conv1d(stacked, vars.kernels, vars.kernel_width, true)?;
    let features = tape.relu(tape.add_channel_bias(conv, vars.kernel_bias)?)?;
    let flat = tape.reshape(features, &[1, channels * dim])?;
    let hidden = tape.relu(tape.add_bias(tape.matmul(flat, vars.w_fc)?, vars.b_fc)?)?;
    let logits = tape.matmul(type_matrix, tape.transpose(hidden)?)?;
    tape.sigmoid(tape.reshape(logits, &[n_types])?)
}

/// Stack per-query probability vectors and take the multi-label
/// cross-entropy against 0/1 targets: mean over queries, sum over types.
pub fn batch_bce_loss(tape: &Tape, probs: &[Var], labels: &Tensor) -> Result<Var> {
    let stacked = tape.stack_rows(probs)?;
    tape.bce_loss(stacked, labels)
}
