use crate::error::{Error, Result};
use crate::model::correlation::Mlp;
use crate::model::decoder::{DecoderParams, DecoderVars};
use crate::model::gcn::{HgcnLayerParams, HgcnLayerVars};
use crate::model::mapper::MappingMatrix;
use crate::model::temporal::{DecayParams, DecayVars, GruParams, GruVars};
use crate::model::Binder;
use crate::runtime::config::Config;
use crate::tensor::{xavier_init, Tape, Tensor, Var};

/// Optimizer group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrGroup {
    /// The entity-to-group mapping logits.
    Mapper,
    /// Everything else.
    Default,
}

pub fn group_of(name: &str) -> LrGroup {
    if name == "mapper.raw" {
        LrGroup::Mapper
    } else {
        LrGroup::Default
    }
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n_entities: usize,
    pub n_event_types: usize,
    pub entity_emb: Tensor,
    pub type_emb: Tensor,
    pub mapper: MappingMatrix,
    pub layers: Vec<HgcnLayerParams>,
    pub entity_decay: DecayParams,
    pub type_decay: DecayParams,
    pub entity_gru: GruParams,
    pub type_gru: GruParams,
    pub decoder: DecoderParams,
}

fn subseed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x100000001b3)
        .wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15))
}

impl ModelParams {
    pub fn init(config: &Config, n_entities: usize, n_event_types: usize) -> Result<Self> {
        config.validate()?;
        if n_entities == 0 || n_event_types == 0 {
            return Err(Error::invalid("model", "empty vocabulary"));
        }
        let s = |i: u64| subseed(config.seed, i);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            layers.push(HgcnLayerParams::init(
                config.dim,
                config.corr_kernel_width,
                config.mlp_depth,
                s(100 + l as u64 * 10),
            )?);
        }
        Ok(ModelParams {
            n_entities,
            n_event_types,
            entity_emb: xavier_init(n_entities, config.dim, s(1))?,
            type_emb: xavier_init(n_event_types, config.dim, s(2))?,
            mapper: MappingMatrix::init(n_entities, config.n_groups, s(3))?,
            layers,
            entity_decay: DecayParams::init(s(4))?,
            type_decay: DecayParams::init(s(5))?,
            entity_gru: GruParams::init(config.gru_hidden, s(6))?,
            type_gru: GruParams::init(config.gru_hidden, s(7))?,
            decoder: DecoderParams::init(
                config.dim,
                config.decoder_channels,
                config.decoder_kernel_width,
                s(8),
            )?,
        })
    }

    /// All parameters with their names, in a fixed traversal order. The
    /// names are exactly the ones [`bind_model`] registers.
    pub fn visit(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("entity_emb".into(), &self.entity_emb),
            ("type_emb".into(), &self.type_emb),
            ("mapper.raw".into(), &self.mapper.raw),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            push_mlp(&mut out, &format!("{p}.corr.pair"), &layer.corr.pair_transform);
            out.push((format!("{p}.corr.conv_kernel"), &layer.corr.conv_kernel));
            out.push((format!("{p}.corr.conv_bias"), &layer.corr.conv_bias));
            push_mlp(&mut out, &format!("{p}.corr.update"), &layer.corr.update_transform);
            out.push((format!("{p}.conv.w_in"), &layer.conv.w_in));
            out.push((format!("{p}.conv.w_out"), &layer.conv.w_out));
            out.push((format!("{p}.conv.w_self"), &layer.conv.w_self));
            out.push((format!("{p}.conv.w_update"), &layer.conv.w_update));
            out.push((format!("{p}.conv.b_update"), &layer.conv.b_update));
            out.push((format!("{p}.conv.w_rel"), &layer.conv.w_rel));
        }
        out.push(("entity_decay.weight".into(), &self.entity_decay.weight));
        out.push(("entity_decay.bias".into(), &self.entity_decay.bias));
        out.push(("type_decay.weight".into(), &self.type_decay.weight));
        out.push(("type_decay.bias".into(), &self.type_decay.bias));
        for (prefix, gru) in [("entity_gru", &self.entity_gru), ("type_gru", &self.type_gru)] {
            out.push((format!("{prefix}.w_reset"), &gru.w_reset));
            out.push((format!("{prefix}.b_reset"), &gru.b_reset));
            out.push((format!("{prefix}.w_update"), &gru.w_update));
            out.push((format!("{prefix}.b_update"), &gru.b_update));
            out.push((format!("{prefix}.w_new"), &gru.w_new));
            out.push((format!("{prefix}.b_new"), &gru.b_new));
        }
        out.push(("decoder.kernels".into(), &self.decoder.kernels));
        out.push(("decoder.kernel_bias".into(), &self.decoder.kernel_bias));
        out.push(("decoder.w_fc".into(), &self.decoder.w_fc));
        out.push(("decoder.b_fc".into(), &self.decoder.b_fc));
        out
    }

    /// Mutable access by the same names and order as [`ModelParams::visit`].
    pub fn visit_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("entity_emb".into(), &mut self.entity_emb),
            ("type_emb".into(), &mut self.type_emb),
            ("mapper.raw".into(), &mut self.mapper.raw),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}");
            push_mlp_mut(&mut out, &format!("{p}.corr.pair"), &mut layer.corr.pair_transform);
            out.push((format!("{p}.corr.conv_kernel"), &mut layer.corr.conv_kernel));
            out.push((format!("{p}.corr.conv_bias"), &mut layer.corr.conv_bias));
            push_mlp_mut(
                &mut out,
                &format!("{p}.corr.update"),
                &mut layer.corr.update_transform,
            );
            out.push((format!("{p}.conv.w_in"), &mut layer.conv.w_in));
            out.push((format!("{p}.conv.w_out"), &mut layer.conv.w_out));
            out.push((format!("{p}.conv.w_self"), &mut layer.conv.w_self));
            out.push((format!("{p}.conv.w_update"), &mut layer.conv.w_update));
            out.push((format!("{p}.conv.b_update"), &mut layer.conv.b_update));
            out.push((format!("{p}.conv.w_rel"), &mut layer.conv.w_rel));
        }
        out.push(("entity_decay.weight".into(), &mut self.entity_decay.weight));
        out.push(("entity_decay.bias".into(), &mut self.entity_decay.bias));
        out.push(("type_decay.weight".into(), &mut self.type_decay.weight));
        out.push(("type_decay.bias".into(), &mut self.type_decay.bias));
        for (prefix, gru) in [
            ("entity_gru", &mut self.entity_gru),
            ("type_gru", &mut self.type_gru),
        ] {
            out.push((format!("{prefix}.w_reset"), &mut gru.w_reset));
            out.push((format!("{prefix}.b_reset"), &mut gru.b_reset));
            out.push((format!("{prefix}.w_update"), &mut gru.w_update));
            out.push((format!("{prefix}.b_update"), &mut gru.b_update));
            out.push((format!("{prefix}.w_new"), &mut gru.w_new));
            out.push((format!("{prefix}.b_new"), &mut gru.b_new));
        }
        out.push(("decoder.kernels".into(), &mut self.decoder.kernels));
        out.push(("decoder.kernel_bias".into(), &mut self.decoder.kernel_bias));
        out.push(("decoder.w_fc".into(), &mut self.decoder.w_fc));
        out.push(("decoder.b_fc".into(), &mut self.decoder.b_fc));
        out
    }

    /// Replace every tensor from a (name, tensor) listing.
    pub fn load_from(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        for (name, slot) in self.visit_mut() {
            let found = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if found.1.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    slot.shape(),
                    found.1.shape()
                )));
            }
            *slot = found.1.clone();
        }
        Ok(())
    }
}

fn push_mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, mlp: &'a Mlp) {
    for (l, (w, b)) in mlp.layers.iter().enumerate() {
        out.push((format!("{prefix}.{l}.weight"), w));
        out.push((format!("{prefix}.{l}.bias"), b));
    }
}

fn push_mlp_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, mlp: &'a mut Mlp) {
    for (l, (w, b)) in mlp.layers.iter_mut().enumerate() {
        out.push((format!("{prefix}.{l}.weight"), w));
        out.push((format!("{prefix}.{l}.bias"), b));
    }
}

/// Tape handles for one bound forward pass.
pub struct BoundModel {
    pub entity_emb: Var,
    pub type_emb: Var,
    pub mapper_raw: Var,
    /// Sparsemax of the logits, shared by all layers and timesteps; absent
    /// when the group pathway is disabled.
    pub mapping: Option<Var>,
    pub layers: Vec<HgcnLayerVars>,
    pub entity_decay: DecayVars,
    pub type_decay: DecayVars,
    pub entity_gru: GruVars,
    pub type_gru: GruVars,
    pub decoder: DecoderVars,
}

/// Bind every parameter onto the tape. With `trainable` the returned
/// (name, var) pairs route gradients back to the owned tensors; otherwise
/// everything is constant. All parameters are bound in both modes so the
/// optimizer sees a stable key set; weights kept off the active compute
/// path (e.g. the mapper with the pathway disabled) simply receive zero
/// gradient.
pub fn bind_model(
    tape: &Tape,
    params: &ModelParams,
    config: &Config,
    trainable: bool,
) -> Result<(BoundModel, Vec<(String, Var)>)> {
    let mut binder = Binder::new(tape, trainable);
    let entity_emb = binder.bind("entity_emb", &params.entity_emb);
    let type_emb = binder.bind("type_emb", &params.type_emb);
    let mapper_raw = params.mapper.bind(&mut binder);
    let layers: Vec<HgcnLayerVars> = params
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| layer.bind(&mut binder, &format!("layers.{i}")))
        .collect();
    let entity_decay = params.entity_decay.bind(&mut binder, "entity_decay");
    let type_decay = params.type_decay.bind(&mut binder, "type_decay");
    let entity_gru = params.entity_gru.bind(&mut binder, "entity_gru");
    let type_gru = params.type_gru.bind(&mut binder, "type_gru");
    let decoder = params.decoder.bind(&mut binder, "decoder");

    let mapping = if config.group_pathway {
        Some(tape.sparsemax_rows(mapper_raw)?)
    } else {
        None
    };
    Ok((
        BoundModel {
            entity_emb,
            type_emb,
            mapper_raw,
            mapping,
            layers,
            entity_decay,
            type_decay,
            entity_gru,
            type_gru,
            decoder,
        },
        binder.into_bound(),
    ))
}
