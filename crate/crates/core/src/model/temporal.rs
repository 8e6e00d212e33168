//! Decay-aware recurrent encoding of per-timestep representation sequences.
//!
//! Before each gated update the previous hidden state is shrunk by a decay
//! factor `sigmoid(-max(0, w*dt + b))` computed from the time since the
//! unit's last event, so stale units contribute less. One weight set is
//! shared across all entities and an independent set across all event
//! types; units are encoded as the rows of a batch.

use crate::error::{Error, Result};
use crate::model::Binder;
use crate::tensor::{xavier_init, Tape, Tensor, Var};

/// Scalar weights of the decay rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DecayParams {
    pub fn init(seed: u64) -> Result<Self> {
        let w = xavier_init(1, 1, seed)?;
        Ok(DecayParams {
            weight: Tensor::scalar(w.data()[0].abs()),
            bias: Tensor::zeros(&[1]),
        })
    }

    pub fn bind(&self, binder: &mut Binder<'_>, prefix: &str) -> DecayVars {
        DecayVars {
            weight: binder.bind(format!("{prefix}.weight"), &self.weight),
            bias: binder.bind(format!("{prefix}.bias"), &self.bias),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecayVars {
    pub weight: Var,
    pub bias: Var,
}

/// Gate weights over the concatenated [input; decayed hidden state].
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_reset: Tensor,
    pub b_reset: Tensor,
    pub w_update: Tensor,
    pub b_update: Tensor,
    pub w_new: Tensor,
    pub b_new: Tensor,
}

impl GruParams {
    pub fn init(dim: usize, seed: u64) -> Result<Self> {
        Ok(GruParams {
            w_reset: xavier_init(2 * dim, dim, seed)?,
            b_reset: Tensor::zeros(&[dim]),
            w_update: xavier_init(2 * dim, dim, seed.wrapping_add(1))?,
            b_update: Tensor::zeros(&[dim]),
            w_new: xavier_init(2 * dim, dim, seed.wrapping_add(2))?,
            b_new: Tensor::zeros(&[dim]),
        })
    }

    pub fn bind(&self, binder: &mut Binder<'_>, prefix: &str) -> GruVars {
        GruVars {
            w_reset: binder.bind(format!("{prefix}.w_reset"), &self.w_reset),
            b_reset: binder.bind(format!("{prefix}.b_reset"), &self.b_reset),
            w_update: binder.bind(format!("{prefix}.w_update"), &self.w_update),
            b_update: binder.bind(format!("{prefix}.b_update"), &self.b_update),
            w_new: binder.bind(format!("{prefix}.w_new"), &self.w_new),
            b_new: binder.bind(format!("{prefix}.b_new"), &self.b_new),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_reset: Var,
    pub b_reset: Var,
    pub w_update: Var,
    pub b_update: Var,
    pub w_new: Var,
    pub b_new: Var,
}

/// Timestep of the last event per unit.
#[derive(Debug, Clone)]
pub struct LastActiveTracker {
    last: Vec<usize>,
}

impl LastActiveTracker {
    /// All units start at the first window timestep, so the first deltas
    /// are zero.
    pub fn new(units: usize, first_t: usize) -> Self {
        LastActiveTracker {
            last: vec![first_t; units],
        }
    }

    /// Time since each unit's last event, as of timestep `t`.
    pub fn deltas(&self, t: usize) -> Vec<f64> {
        self.last.iter().map(|&l| (t - l) as f64).collect()
    }

    /// Record the units active at timestep `t`.
    pub fn observe(&mut self, t: usize, active: &[usize]) {
        for &u in active {
            self.last[u] = t;
        }
    }

    pub fn last_active(&self, unit: usize) -> usize {
        self.last[unit]
    }
}

/// Batched decay factors: `sigmoid(-max(0, w*dt + b))`, one per unit.
/// Always in (0, 0.5]; non-increasing in dt for positive weight.
pub fn decay_rate(tape: &Tape, vars: &DecayVars, deltas: &[f64]) -> Result<Var> {
    let n = deltas.len();
    let dt = tape.constant(&Tensor::vector(deltas.to_vec()));
    let w = tape.broadcast_scalar(vars.weight, n)?;
    let b = tape.broadcast_scalar(vars.bias, n)?;
    let inner = tape.relu(tape.add(tape.mul(w, dt)?, b)?)?;
    tape.sigmoid(tape.scale(inner, -1.0)?)
}

/// One decayed GRU step over a batch of units (rows).
///
/// The previous hidden state is shrunk per row by `decay` first, then the
/// standard reset/update/new gates run on [input; decayed hidden].
pub fn decayed_gru_step(
    tape: &Tape,
    vars: &GruVars,
    input: Var,
    prev_hidden: Var,
    decay: Var,
) -> Result<Var> {
    let decayed = tape.row_scale(prev_hidden, decay)?;

    let joint = tape.concat_cols(input, decayed)?;
    let reset = tape.sigmoid(tape.add_bias(tape.matmul(joint, vars.w_reset)?, vars.b_reset)?)?;
    let update = tape.sigmoid(tape.add_bias(tape.matmul(joint, vars.w_update)?, vars.b_update)?)?;

    let gated = tape.mul(reset, decayed)?;
    let joint_new = tape.concat_cols(input, gated)?;
    let candidate = tape.tanh(tape.add_bias(tape.matmul(joint_new, vars.w_new)?, vars.b_new)?)?;

    let ones = tape.constant(&Tensor::full(&tape.shape_of(update), 1.0));
    let keep = tape.mul(update, decayed)?;
    let blend = tape.mul(tape.sub(ones, update)?, candidate)?;
    tape.add(keep, blend)
}

/// Encode a per-timestep input sequence into the final hidden state.
///
/// `inputs[k]` holds all units' representations at window timestep
/// `timesteps[k]`; `active[k]` lists the units with an event there. The
/// hidden state starts at zero and the tracker at the first window step.
pub fn encode_sequence(
    tape: &Tape,
    gru: &GruVars,
    decay: &DecayVars,
    inputs: &[Var],
    timesteps: &[usize],
    active: &[&[usize]],
) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::invalid("encode_sequence", "empty sequence"));
    }
    if inputs.len() != timesteps.len() || inputs.len() != active.len() {
        return Err(Error::invalid(
            "encode_sequence",
            "inputs, timesteps, and activity must have equal length",
        ));
    }
    let shape = tape.shape_of(inputs[0]);
    let units = shape[0];
    let mut tracker = LastActiveTracker::new(units, timesteps[0]);
    let mut hidden = tape.constant(&Tensor::zeros(&shape));
    for ((&input, &t), &acts) in inputs.iter().zip(timesteps).zip(active) {
        let gamma = decay_rate(tape, decay, &tracker.deltas(t))?;
        hidden = decayed_gru_step(tape, gru, input, hidden, gamma)?;
        tracker.observe(t, acts);
    }
    Ok(hidden)
}
