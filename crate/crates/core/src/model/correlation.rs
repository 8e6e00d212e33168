//! Implicit correlations between entity groups.
//!
//! The group graph is fully connected: every ordered pair (i, j), i != j,
//! carries a learned correlation vector c_ij and a scalar intensity
//! q_ij in (0, 1). Group messages are the intensity-weighted sum of the
//! correlation vectors over all partners, followed by an update transform.

use crate::error::{Error, Result};
use crate::model::Binder;
use crate::tensor::{xavier_init, Tape, Tensor, Var};

/// A small fully connected stack: affine + ReLU per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// (weight [in, out], bias [out]) per layer.
    pub layers: Vec<(Tensor, Tensor)>,
}

impl Mlp {
    /// First layer maps `in_dim -> out_dim`; any further layers are square.
    pub fn init(in_dim: usize, out_dim: usize, depth: usize, seed: u64) -> Result<Self> {
        let depth = depth.max(1);
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let d_in = if l == 0 { in_dim } else { out_dim };
            layers.push((
                xavier_init(d_in, out_dim, seed.wrapping_add(l as u64))?,
                Tensor::zeros(&[out_dim]),
            ));
        }
        Ok(Mlp { layers })
    }

    pub fn bind(&self, binder: &mut Binder<'_>, prefix: &str) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, (w, b))| {
                    (
                        binder.bind(format!("{prefix}.{l}.weight"), w),
                        binder.bind(format!("{prefix}.{l}.bias"), b),
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

impl MlpVars {
    /// Apply to a batch of rows: `relu(x W + b)` per layer.
    pub fn apply(&self, tape: &Tape, mut x: Var) -> Result<Var> {
        for (w, b) in &self.layers {
            x = tape.relu(tape.add_bias(tape.matmul(x, *w)?, *b)?)?;
        }
        Ok(x)
    }
}

/// Weights of the group-correlation encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrEncoderParams {
    /// Transform of the concatenated pair [g_i; g_j] -> correlation vector.
    pub pair_transform: Mlp,
    /// Single 1-D kernel scoring a correlation vector, width odd.
    pub conv_kernel: Tensor,
    pub conv_bias: Tensor,
    /// Transform of [aggregate; group] -> updated group.
    pub update_transform: Mlp,
}

impl CorrEncoderParams {
    pub fn init(dim: usize, kernel_width: usize, depth: usize, seed: u64) -> Result<Self> {
        if kernel_width % 2 == 0 {
            return Err(Error::invalid(
                "correlation",
                "kernel width must be odd for same padding",
            ));
        }
        let kernel = xavier_init(1, kernel_width, seed.wrapping_add(100))?;
        Ok(CorrEncoderParams {
            pair_transform: Mlp::init(2 * dim, dim, depth, seed)?,
            conv_kernel: Tensor::vector(kernel.data().to_vec()),
            conv_bias: Tensor::zeros(&[1]),
            update_transform: Mlp::init(2 * dim, dim, depth, seed.wrapping_add(200))?,
        })
    }

    pub fn bind(&self, binder: &mut Binder<'_>, prefix: &str) -> CorrEncoderVars {
        CorrEncoderVars {
            pair_transform: self.pair_transform.bind(binder, &format!("{prefix}.pair")),
            conv_kernel: binder.bind(format!("{prefix}.conv_kernel"), &self.conv_kernel),
            conv_bias: binder.bind(format!("{prefix}.conv_bias"), &self.conv_bias),
            update_transform: self
                .update_transform
                .bind(binder, &format!("{prefix}.update")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorrEncoderVars {
    pub pair_transform: MlpVars,
    pub conv_kernel: Var,
    pub conv_bias: Var,
    pub update_transform: MlpVars,
}

/// All ordered group pairs (i, j) with i != j, i-major.
pub fn directed_pairs(n_groups: usize) -> (Vec<usize>, Vec<usize>) {
    let mut src = Vec::with_capacity(n_groups * n_groups.saturating_sub(1));
    let mut dst = Vec::with_capacity(src.capacity());
    for i in 0..n_groups {
        for j in 0..n_groups {
            if i != j {
                src.push(i);
                dst.push(j);
            }
        }
    }
    (src, dst)
}

/// Correlation vector of a single ordered pair.
pub fn pair_correlation(
    tape: &Tape,
    vars: &CorrEncoderVars,
    g_i: Var,
    g_j: Var,
) -> Result<Var> {
    let d = tape.shape_of(g_i)[0];
    let joint = tape.reshape(tape.concat(g_i, g_j)?, &[1, 2 * d])?;
    let c = vars.pair_transform.apply(tape, joint)?;
    tape.reshape(c, &[d])
}

/// Intensity of one correlation vector: sigmoid of the mean convolution
/// response plus bias. Strictly inside (0, 1) for finite parameters.
pub fn intensity(tape: &Tape, vars: &CorrEncoderVars, c: Var) -> Result<Var> {
    let d = tape.shape_of(c)[0];
    let row = tape.reshape(c, &[1, d])?;
    let conv = tape.conv1d_rows(row, vars.conv_kernel, true)?;
    let mean = tape.row_mean(conv)?;
    tape.sigmoid(tape.add(mean, vars.conv_bias)?)
}

/// Intensity-weighted sum of correlation vectors over all partners:
/// row i of the result is `sum_{j != i} q_ij * c_ij`. A single group has
/// no partners and aggregates to zero.
pub fn group_aggregate(tape: &Tape, vars: &CorrEncoderVars, groups: Var) -> Result<Var> {
    let shape = tape.shape_of(groups);
    let (n_groups, dim) = (shape[0], shape[1]);
    if n_groups < 2 {
        return Ok(tape.constant(&Tensor::zeros(&[n_groups, dim])));
    }
    let (src, dst) = directed_pairs(n_groups);
    let g_i = tape.gather_rows(groups, &src)?;
    let g_j = tape.gather_rows(groups, &dst)?;
    let joint = tape.concat_cols(g_i, g_j)?;
    let c = vars.pair_transform.apply(tape, joint)?;

    let conv = tape.conv1d_rows(c, vars.conv_kernel, true)?;
    let means = tape.row_mean(conv)?;
    let bias = tape.broadcast_scalar(vars.conv_bias, src.len())?;
    let q = tape.sigmoid(tape.add(means, bias)?)?;

    let weighted = tape.row_scale(c, q)?;
    tape.scatter_add_rows(weighted, &src, n_groups)
}

/// Updated representation of one group from its aggregate.
pub fn group_update(tape: &Tape, vars: &CorrEncoderVars, aggregate: Var, group: Var) -> Result<Var> {
    let d = tape.shape_of(group)[0];
    let joint = tape.reshape(tape.concat(aggregate, group)?, &[1, 2 * d])?;
    let out = vars.update_transform.apply(tape, joint)?;
    tape.reshape(out, &[d])
}

/// Full group-graph convolution: aggregate over the fully connected graph,
/// then update every group.
pub fn encode_groups(tape: &Tape, vars: &CorrEncoderVars, groups: Var) -> Result<Var> {
    let aggregate = group_aggregate(tape, vars, groups)?;
    let joint = tape.concat_cols(aggregate, groups)?;
    vars.update_transform.apply(tape, joint)
}
