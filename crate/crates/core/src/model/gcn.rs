//! Entity-level relational convolution and the four-stage hierarchical
//! layer.
//!
//! One hierarchical layer runs: entities -> groups (shared mapping),
//! group-graph convolution, groups -> entities, then relational
//! convolution on the entity graph. Messages compose a neighbor with the
//! edge's event-type vector (subtraction by default), are transformed per
//! direction, and are normalized by 1/(degree+1) with a self-loop.
//! Disabling the group pathway reduces the layer to the entity
//! convolution alone.

use crate::data::Snapshot;
use crate::error::{Error, Result};
use crate::model::correlation::{encode_groups, CorrEncoderParams, CorrEncoderVars};
use crate::model::{mapper, Binder};
use crate::tensor::{xavier_init, Tape, Tensor, Var};

/// How a neighbor entity combines with the edge's event-type vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionOp {
    /// Translation style: neighbor - relation.
    Subtract,
    /// Elementwise product: neighbor * relation.
    Multiply,
}

impl Default for CompositionOp {
    fn default() -> Self {
        CompositionOp::Subtract
    }
}

impl std::str::FromStr for CompositionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sub" | "subtract" => Ok(CompositionOp::Subtract),
            "mul" | "multiply" => Ok(CompositionOp::Multiply),
            other => Err(Error::invalid(
                "composition",
                format!("unknown composition operator '{other}'"),
            )),
        }
    }
}

/// Direction-specific transforms of the entity convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityConvParams {
    pub w_in: Tensor,
    pub w_out: Tensor,
    pub w_self: Tensor,
    /// Update transform over [aggregate; entity].
    pub w_update: Tensor,
    pub b_update: Tensor,
    /// Event-type projection.
    pub w_rel: Tensor,
}

impl EntityConvParams {
    pub fn init(dim: usize, seed: u64) -> Result<Self> {
        Ok(EntityConvParams {
            w_in: xavier_init(dim, dim, seed)?,
            w_out: xavier_init(dim, dim, seed.wrapping_add(1))?,
            w_self: xavier_init(dim, dim, seed.wrapping_add(2))?,
            w_update: xavier_init(2 * dim, dim, seed.wrapping_add(3))?,
            b_update: Tensor::zeros(&[dim]),
            w_rel: xavier_init(dim, dim, seed.wrapping_add(4))?,
        })
    }

    pub fn bind(&self, binder: &mut Binder<'_>, prefix: &str) -> EntityConvVars {
        EntityConvVars {
            w_in: binder.bind(format!("{prefix}.w_in"), &self.w_in),
            w_out: binder.bind(format!("{prefix}.w_out"), &self.w_out),
            w_self: binder.bind(format!("{prefix}.w_self"), &self.w_self),
            w_update: binder.bind(format!("{prefix}.w_update"), &self.w_update),
            b_update: binder.bind(format!("{prefix}.b_update"), &self.b_update),
            w_rel: binder.bind(format!("{prefix}.w_rel"), &self.w_rel),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EntityConvVars {
    pub w_in: Var,
    pub w_out: Var,
    pub w_self: Var,
    pub w_update: Var,
    pub b_update: Var,
    pub w_rel: Var,
}

/// One hierarchical layer: group-correlation weights plus entity-level
/// convolution weights. The entity-to-group mapping is shared across
/// layers and lives outside.
#[derive(Debug, Clone, PartialEq)]
pub struct HgcnLayerParams {
    pub corr: CorrEncoderParams,
    pub conv: EntityConvParams,
}

impl HgcnLayerParams {
    pub fn init(dim: usize, kernel_width: usize, mlp_depth: usize, seed: u64) -> Result<Self> {
        Ok(HgcnLayerParams {
            corr: CorrEncoderParams::init(dim, kernel_width, mlp_depth, seed)?,
            conv: EntityConvParams::init(dim, seed.wrapping_add(1000))?,
        })
    }

    pub fn bind(&self, binder: &mut Binder<'_>, prefix: &str) -> HgcnLayerVars {
        HgcnLayerVars {
            corr: self.corr.bind(binder, &format!("{prefix}.corr")),
            conv: self.conv.bind(binder, &format!("{prefix}.conv")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HgcnLayerVars {
    pub corr: CorrEncoderVars,
    pub conv: EntityConvVars,
}

fn compose(tape: &Tape, neighbor: Var, relation: Var, op: CompositionOp) -> Result<Var> {
    match op {
        CompositionOp::Subtract => tape.sub(neighbor, relation),
        CompositionOp::Multiply => tape.mul(neighbor, relation),
    }
}

/// Relational message aggregation over one snapshot.
///
/// Row i collects a self-loop message plus the composed messages of its
/// incoming and outgoing edges, normalized by 1/(degree+1). Entities with
/// no edges keep only the self-loop term.
pub fn comp_aggregate(
    tape: &Tape,
    snapshot: &Snapshot,
    entities: Var,
    relations: Var,
    vars: &EntityConvVars,
    op: CompositionOp,
) -> Result<Var> {
    let n_entities = tape.shape_of(entities)[0];
    let mut acc = tape.matmul(entities, vars.w_self)?;

    if !snapshot.edges.is_empty() {
        let src: Vec<usize> = snapshot.edges.iter().map(|e| e.0).collect();
        let rel: Vec<usize> = snapshot.edges.iter().map(|e| e.1).collect();
        let tgt: Vec<usize> = snapshot.edges.iter().map(|e| e.2).collect();

        let e_src = tape.gather_rows(entities, &src)?;
        let e_tgt = tape.gather_rows(entities, &tgt)?;
        let r_vec = tape.gather_rows(relations, &rel)?;

        // Incoming edge (j, r, i): message W_in(compose(e_j, r)) lands on i.
        let incoming = tape.matmul(compose(tape, e_src, r_vec, op)?, vars.w_in)?;
        acc = tape.add(acc, tape.scatter_add_rows(incoming, &tgt, n_entities)?)?;

        // Outgoing edge (i, r, j): message W_out(compose(e_j, r)) lands on i.
        let outgoing = tape.matmul(compose(tape, e_tgt, r_vec, op)?, vars.w_out)?;
        acc = tape.add(acc, tape.scatter_add_rows(outgoing, &src, n_entities)?)?;
    }

    let mut degree = vec![0usize; n_entities];
    for &(s, _, o) in &snapshot.edges {
        degree[s] += 1;
        degree[o] += 1;
    }
    let inv: Vec<f64> = degree.iter().map(|&d| 1.0 / (d + 1) as f64).collect();
    let norm = tape.constant(&Tensor::vector(inv));
    tape.row_scale(acc, norm)
}

/// Batched entity update: `relu([aggregate; entity] W + b)` per row.
pub fn entity_update(
    tape: &Tape,
    vars: &EntityConvVars,
    aggregate: Var,
    entities: Var,
) -> Result<Var> {
    let joint = tape.concat_cols(aggregate, entities)?;
    tape.relu(tape.add_bias(tape.matmul(joint, vars.w_update)?, vars.b_update)?)
}

/// Linear projection of every event-type row (no activation).
pub fn project_event_types(tape: &Tape, vars: &EntityConvVars, relations: Var) -> Result<Var> {
    tape.matmul(relations, tape.transpose(vars.w_rel)?)
}

/// One four-stage hierarchical layer.
///
/// With a mapping the entity representations take the group detour
/// (pool, convolve the fully connected group graph, distribute back)
/// before the entity-graph convolution; without one they feed the entity
/// convolution directly.
pub fn hgcn_layer(
    tape: &Tape,
    snapshot: &Snapshot,
    entities: Var,
    relations: Var,
    mapping: Option<Var>,
    vars: &HgcnLayerVars,
    op: CompositionOp,
) -> Result<(Var, Var)> {
    let mid = match mapping {
        Some(m) => {
            let groups = mapper::entities_to_groups(tape, m, entities)?;
            let updated = encode_groups(tape, &vars.corr, groups)?;
            mapper::groups_to_entities(tape, m, updated)?
        }
        None => entities,
    };
    let aggregate = comp_aggregate(tape, snapshot, mid, relations, &vars.conv, op)?;
    let new_entities = entity_update(tape, &vars.conv, aggregate, mid)?;
    let new_relations = project_event_types(tape, &vars.conv, relations)?;
    Ok((new_entities, new_relations))
}

/// Overwrite rows where `keep_new` is false with the corresponding rows of
/// `previous`.
pub fn merge_rows(tape: &Tape, keep_new: &[bool], new: Var, previous: Var) -> Result<Var> {
    let n = tape.shape_of(new)[0];
    if keep_new.len() != n {
        return Err(Error::invalid("merge_rows", "mask length mismatch"));
    }
    let new_idx: Vec<usize> = (0..n).filter(|&i| keep_new[i]).collect();
    if new_idx.len() == n {
        return Ok(new);
    }
    if new_idx.is_empty() {
        return Ok(previous);
    }
    let prev_idx: Vec<usize> = (0..n).filter(|&i| !keep_new[i]).collect();
    let kept = tape.scatter_add_rows(tape.gather_rows(new, &new_idx)?, &new_idx, n)?;
    let retained = tape.scatter_add_rows(tape.gather_rows(previous, &prev_idx)?, &prev_idx, n)?;
    tape.add(kept, retained)
}

/// Run the layer stack over every snapshot of a window.
///
/// Each timestep starts from the base embedding tables; temporal carry-over
/// is the recurrent encoder's job. Entities inactive at a step keep their
/// value from the previous step of the sequence (no retention at the first
/// step), and likewise for event types.
pub fn encode_window(
    tape: &Tape,
    snapshots: &[&Snapshot],
    entity_emb: Var,
    type_emb: Var,
    mapping: Option<Var>,
    layers: &[HgcnLayerVars],
    op: CompositionOp,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if snapshots.is_empty() {
        return Err(Error::invalid("encode_window", "empty window"));
    }
    let n_entities = tape.shape_of(entity_emb)[0];
    let n_types = tape.shape_of(type_emb)[0];
    let mut entity_seq: Vec<Var> = Vec::with_capacity(snapshots.len());
    let mut type_seq: Vec<Var> = Vec::with_capacity(snapshots.len());

    for (step, snap) in snapshots.iter().enumerate() {
        let mut e_cur = entity_emb;
        let mut r_cur = type_emb;
        for layer in layers {
            let (e_next, r_next) = hgcn_layer(tape, snap, e_cur, r_cur, mapping, layer, op)?;
            e_cur = e_next;
            r_cur = r_next;
        }
        if step > 0 {
            let mut entity_active = vec![false; n_entities];
            for &e in &snap.active_entities {
                entity_active[e] = true;
            }
            e_cur = merge_rows(tape, &entity_active, e_cur, entity_seq[step - 1])?;

            let mut type_active = vec![false; n_types];
            for &r in &snap.active_event_types {
                type_active[r] = true;
            }
            r_cur = merge_rows(tape, &type_active, r_cur, type_seq[step - 1])?;
        }
        entity_seq.push(e_cur);
        type_seq.push(r_cur);
    }
    Ok((entity_seq, type_seq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_snapshots, Quadruple};
    use crate::model::mapper::MappingMatrix;
    use crate::tensor::gradcheck;

    fn identity_conv(dim: usize) -> EntityConvParams {
        EntityConvParams {
            w_in: Tensor::eye(dim),
            w_out: Tensor::eye(dim),
            w_self: Tensor::eye(dim),
            w_update: Tensor::zeros(&[2 * dim, dim]),
            b_update: Tensor::zeros(&[dim]),
            w_rel: Tensor::eye(dim),
        }
    }

    fn bind_conv<'t>(tape: &'t Tape, p: &EntityConvParams) -> EntityConvVars {
        let mut binder = Binder::new(tape, false);
        p.bind(&mut binder, "conv")
    }

    fn snap(quads: &[(usize, usize, usize)], t: usize, t_max: usize) -> Snapshot {
        let qs: Vec<Quadruple> = quads
            .iter()
            .map(|&(s, r, o)| Quadruple {
                subject: s,
                event_type: r,
                object: o,
                timestep: t,
            })
            .collect();
        build_snapshots(&qs, t_max).remove(t)
    }

    #[test]
    fn empty_snapshot_keeps_self_loop_only() {
        let tape = Tape::new();
        let conv = EntityConvParams::init(3, 4).unwrap();
        let vars = bind_conv(&tape, &conv);
        let e_t = xavier_init(4, 3, 9).unwrap();
        let entities = tape.constant(&e_t);
        let relations = tape.constant(&Tensor::zeros(&[2, 3]));
        let empty = snap(&[], 0, 1);
        let agg = comp_aggregate(&tape, &empty, entities, relations, &vars, CompositionOp::Subtract)
            .unwrap();
        let expected = tape.matmul(entities, vars.w_self).unwrap();
        let a = tape.value_of(agg);
        let b = tape.value_of(expected);
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_edge_hand_computation() {
        // Identity weights and one edge (1, 0, 0): row 0 should hold
        // (e_0 + e_1 - r_0) / 2.
        let tape = Tape::new();
        let vars = bind_conv(&tape, &identity_conv(2));
        let entities = tape.constant(&Tensor::matrix(&[vec![1.0, 2.0], vec![5.0, -1.0]]).unwrap());
        let relations = tape.constant(&Tensor::matrix(&[vec![0.5, 0.5]]).unwrap());
        let s = snap(&[(1, 0, 0)], 0, 1);
        let agg = comp_aggregate(&tape, &s, entities, relations, &vars, CompositionOp::Subtract)
            .unwrap();
        let v = tape.value_of(agg);
        // (e_0 + (e_1 - r)) / 2 = ([1,2] + [4.5,-1.5]) / 2
        assert_eq!(v.row(0), &[2.75, 0.25]);
        // Entity 1 has one outgoing edge: (e_1 + (e_0 - r)) / 2.
        assert_eq!(v.row(1), &[2.75, 0.25]);
    }

    #[test]
    fn symmetric_edges_coincide_when_directions_share_weights() {
        // R = 0 and W_in == W_out: the messages of (0,r,1) and (1,r,0) match.
        let tape = Tape::new();
        let vars = bind_conv(&tape, &identity_conv(2));
        let entities = tape.constant(&Tensor::matrix(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap());
        let relations = tape.constant(&Tensor::zeros(&[1, 2]));
        let s = snap(&[(0, 0, 1), (1, 0, 0)], 0, 1);
        let agg = comp_aggregate(&tape, &s, entities, relations, &vars, CompositionOp::Subtract)
            .unwrap();
        let v = tape.value_of(agg);
        // Each entity: (self + in-msg + out-msg) / 3 = (e_i + 2 e_j) / 3.
        assert!((v.get2(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((v.get2(0, 1) - 4.0 / 3.0).abs() < 1e-12);
        assert!((v.get2(1, 0) - 4.0 / 3.0).abs() < 1e-12);
        assert!((v.get2(1, 1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn entity_update_hand_case_clamps_at_zero() {
        // d=1, W = [1; -1]: relu(a - e) with a=2, e=5 -> 0.
        let tape = Tape::new();
        let mut conv = identity_conv(1);
        conv.w_update = Tensor::matrix(&[vec![1.0], vec![-1.0]]).unwrap();
        let vars = bind_conv(&tape, &conv);
        let a = tape.constant(&Tensor::matrix(&[vec![2.0]]).unwrap());
        let e = tape.constant(&Tensor::matrix(&[vec![5.0]]).unwrap());
        let out = entity_update(&tape, &vars, a, e).unwrap();
        assert_eq!(tape.value_of(out).data(), &[0.0]);
    }

    #[test]
    fn projection_is_linear() {
        let tape = Tape::new();
        let conv = EntityConvParams::init(3, 11).unwrap();
        let vars = bind_conv(&tape, &conv);
        let r_t = xavier_init(2, 3, 5).unwrap();
        let r = tape.constant(&r_t);
        let projected = project_event_types(&tape, &vars, r).unwrap();
        let scaled = tape.scale(r, 2.5).unwrap();
        let projected_scaled = project_event_types(&tape, &vars, scaled).unwrap();
        let a = tape.value_of(projected);
        let b = tape.value_of(projected_scaled);
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!((2.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_with_identity_weight_is_identity() {
        let tape = Tape::new();
        let vars = bind_conv(&tape, &identity_conv(2));
        let r = tape.constant(&Tensor::matrix(&[vec![1.0, -2.0]]).unwrap());
        let out = project_event_types(&tape, &vars, r).unwrap();
        assert_eq!(tape.value_of(out).data(), &[1.0, -2.0]);
    }

    #[test]
    fn layer_output_shapes_are_stable() {
        let tape = Tape::new();
        let layer = HgcnLayerParams::init(4, 3, 1, 3).unwrap();
        let mut binder = Binder::new(&tape, false);
        let vars = layer.bind(&mut binder, "layer");
        let mapper = MappingMatrix::init(5, 3, 2).unwrap();
        let m = tape
            .sparsemax_rows(tape.constant(&mapper.raw))
            .unwrap();
        let e = tape.constant(&xavier_init(5, 4, 8).unwrap());
        let r = tape.constant(&xavier_init(2, 4, 9).unwrap());
        let s = snap(&[(0, 1, 3), (2, 0, 4)], 0, 1);
        let (e2, r2) =
            hgcn_layer(&tape, &s, e, r, Some(m), &vars, CompositionOp::Subtract).unwrap();
        assert_eq!(tape.shape_of(e2), vec![5, 4]);
        assert_eq!(tape.shape_of(r2), vec![2, 4]);
        // Stacking applies the layer twice with its own weights.
        let (e3, r3) =
            hgcn_layer(&tape, &s, e2, r2, Some(m), &vars, CompositionOp::Subtract).unwrap();
        assert_eq!(tape.shape_of(e3), vec![5, 4]);
        assert_eq!(tape.shape_of(r3), vec![2, 4]);
    }

    #[test]
    fn disabled_pathway_ignores_mapping_weights() {
        let tape = Tape::new();
        let layer = HgcnLayerParams::init(3, 3, 1, 21).unwrap();
        let mut binder = Binder::new(&tape, false);
        let vars = layer.bind(&mut binder, "layer");
        let e = tape.constant(&xavier_init(4, 3, 31).unwrap());
        let r = tape.constant(&xavier_init(2, 3, 32).unwrap());
        let s = snap(&[(0, 0, 1)], 0, 1);
        let (e_off, _) = hgcn_layer(&tape, &s, e, r, None, &vars, CompositionOp::Subtract).unwrap();

        // Same inputs with two different mappings: pathway-off output is
        // computed without either.
        let m1 = tape
            .sparsemax_rows(tape.constant(&MappingMatrix::init(4, 2, 1).unwrap().raw))
            .unwrap();
        let (e_on, _) =
            hgcn_layer(&tape, &s, e, r, Some(m1), &vars, CompositionOp::Subtract).unwrap();
        assert_ne!(tape.value_of(e_off).data(), tape.value_of(e_on).data());
    }

    #[test]
    fn multiplicative_composition_is_supported() {
        let tape = Tape::new();
        let vars = bind_conv(&tape, &identity_conv(2));
        let entities = tape.constant(&Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let relations = tape.constant(&Tensor::matrix(&[vec![2.0, 0.5]]).unwrap());
        let s = snap(&[(1, 0, 0)], 0, 1);
        let agg = comp_aggregate(&tape, &s, entities, relations, &vars, CompositionOp::Multiply)
            .unwrap();
        // Row 0: (e_0 + e_1*r) / 2 = ([1,2] + [6,2]) / 2 = [3.5, 2].
        assert_eq!(tape.value_of(agg).row(0), &[3.5, 2.0]);
    }

    #[test]
    fn retention_keeps_inactive_entities_constant() {
        let tape = Tape::new();
        let layer = HgcnLayerParams::init(3, 3, 1, 77).unwrap();
        let mut binder = Binder::new(&tape, false);
        let vars = layer.bind(&mut binder, "layer");
        let e = tape.constant(&xavier_init(4, 3, 41).unwrap());
        let r = tape.constant(&xavier_init(2, 3, 42).unwrap());

        // Entity 3 never appears; entity 0 active at steps 0 and 2 only.
        let snaps = vec![
            snap(&[(0, 0, 1)], 0, 3),
            snap(&[(1, 1, 2)], 1, 3),
            snap(&[(0, 1, 2)], 2, 3),
        ];
        let refs: Vec<&Snapshot> = snaps.iter().collect();
        let (e_seq, _) = encode_window(
            &tape,
            &refs,
            e,
            r,
            None,
            std::slice::from_ref(&vars),
            CompositionOp::Subtract,
        )
        .unwrap();
        let v0 = tape.value_of(e_seq[0]);
        let v1 = tape.value_of(e_seq[1]);
        let v2 = tape.value_of(e_seq[2]);
        // Inactive everywhere: row stays constant across the sequence.
        assert_eq!(v0.row(3), v1.row(3));
        assert_eq!(v1.row(3), v2.row(3));
        // Entity 0 is inactive at step 1, so its row carries over from step 0.
        assert_eq!(v0.row(0), v1.row(0));
        // At step 2 entity 0 becomes active again and its row changes.
        assert_ne!(v1.row(0), v2.row(0));
    }

    #[test]
    fn activity_at_middle_step_propagates_forward() {
        // An entity active only at step 1 of 3: rows at steps 1 and 2 equal.
        let tape = Tape::new();
        let layer = HgcnLayerParams::init(2, 3, 1, 78).unwrap();
        let mut binder = Binder::new(&tape, false);
        let vars = layer.bind(&mut binder, "layer");
        let e = tape.constant(&xavier_init(3, 2, 43).unwrap());
        let r = tape.constant(&xavier_init(1, 2, 44).unwrap());
        let snaps = vec![
            snap(&[(1, 0, 2)], 0, 3),
            snap(&[(0, 0, 1)], 1, 3),
            snap(&[(1, 0, 2)], 2, 3),
        ];
        let refs: Vec<&Snapshot> = snaps.iter().collect();
        let (e_seq, _) = encode_window(
            &tape,
            &refs,
            e,
            r,
            None,
            std::slice::from_ref(&vars),
            CompositionOp::Subtract,
        )
        .unwrap();
        let v1 = tape.value_of(e_seq[1]);
        let v2 = tape.value_of(e_seq[2]);
        assert_eq!(v1.row(0), v2.row(0));
    }

    #[test]
    fn empty_window_is_rejected() {
        let tape = Tape::new();
        let e = tape.constant(&Tensor::zeros(&[2, 2]));
        let r = tape.constant(&Tensor::zeros(&[1, 2]));
        let out = encode_window(&tape, &[], e, r, None, &[], CompositionOp::Subtract);
        assert!(out.is_err());
    }

    #[test]
    fn entity_relabeling_is_equivariant() {
        let dim = 2;
        let layer = HgcnLayerParams::init(dim, 3, 1, 91).unwrap();
        let e_t = xavier_init(3, dim, 51).unwrap();
        let r_t = xavier_init(2, dim, 52).unwrap();
        let raw_t = xavier_init(3, 2, 53).unwrap();
        let perm = [2usize, 0, 1]; // old id -> new id

        let run = |edges: &[(usize, usize, usize)], e_rows: &Tensor, raw_rows: &Tensor| {
            let tape = Tape::new();
            let mut binder = Binder::new(&tape, false);
            let vars = layer.bind(&mut binder, "layer");
            let m = tape.sparsemax_rows(tape.constant(raw_rows)).unwrap();
            let e = tape.constant(e_rows);
            let r = tape.constant(&r_t);
            let s = snap(edges, 0, 1);
            let (out, _) =
                hgcn_layer(&tape, &s, e, r, Some(m), &vars, CompositionOp::Subtract).unwrap();
            tape.value_of(out)
        };

        let base = run(&[(0, 0, 1), (2, 1, 0)], &e_t, &raw_t);

        let permute_rows = |t: &Tensor| {
            let mut out = Tensor::zeros(t.shape());
            let cols = t.cols();
            for i in 0..t.rows() {
                let target = perm[i];
                out.data_mut()[target * cols..(target + 1) * cols].copy_from_slice(t.row(i));
            }
            out
        };
        let permuted = run(
            &[(perm[0], 0, perm[1]), (perm[2], 1, perm[0])],
            &permute_rows(&e_t),
            &permute_rows(&raw_t),
        );
        for i in 0..3 {
            for j in 0..dim {
                assert!(
                    (base.get2(i, j) - permuted.get2(perm[i], j)).abs() < 1e-9,
                    "row {i} col {j}"
                );
            }
        }
    }

    #[test]
    fn window_gradients_match_finite_differences() {
        let dim = 3;
        let base = HgcnLayerParams::init(dim, 3, 1, 10).unwrap();
        let params = vec![
            ("entity_emb".to_string(), xavier_init(4, dim, 61).unwrap()),
            ("type_emb".to_string(), xavier_init(2, dim, 62).unwrap()),
            ("mapper.raw".to_string(), xavier_init(4, 2, 63).unwrap()),
            ("layer.conv.w_in".to_string(), base.conv.w_in.clone()),
            ("layer.conv.w_self".to_string(), base.conv.w_self.clone()),
            (
                "layer.corr.pair.0.weight".to_string(),
                base.corr.pair_transform.layers[0].0.clone(),
            ),
            ("layer.corr.conv_kernel".to_string(), base.corr.conv_kernel.clone()),
        ];
        let snaps = vec![snap(&[(0, 0, 1), (2, 1, 3)], 0, 2), snap(&[(1, 0, 2)], 1, 2)];

        let run = |ps: &[(String, Tensor)]| -> Result<(Tape, Var, Vec<(String, Var)>)> {
            let tape = Tape::new();
            let mut work = base.clone();
            work.conv.w_in = ps[3].1.clone();
            work.conv.w_self = ps[4].1.clone();
            work.corr.pair_transform.layers[0].0 = ps[5].1.clone();
            work.corr.conv_kernel = ps[6].1.clone();

            let mut binder = Binder::new(&tape, true);
            let entity_emb = binder.bind("entity_emb", &ps[0].1);
            let type_emb = binder.bind("type_emb", &ps[1].1);
            let raw = binder.bind("mapper.raw", &ps[2].1);
            let vars = work.bind(&mut binder, "layer");
            let m = tape.sparsemax_rows(raw)?;
            let refs: Vec<&Snapshot> = snaps.iter().collect();
            let (e_seq, r_seq) = encode_window(
                &tape,
                &refs,
                entity_emb,
                type_emb,
                Some(m),
                std::slice::from_ref(&vars),
                CompositionOp::Subtract,
            )?;
            let mut total = tape.constant(&Tensor::scalar(0.0));
            for v in e_seq.iter().chain(r_seq.iter()) {
                let sq = tape.mul(*v, *v)?;
                total = tape.add(total, tape.sum_all(sq)?)?;
            }
            let bound = binder.into_bound();
            Ok((tape, total, bound))
        };
        let loss_fn = |ps: &[(String, Tensor)]| -> Result<f64> {
            let (tape, loss, _) = run(ps)?;
            Ok(tape.value_of(loss).data()[0])
        };
        let (tape, loss, bound) = run(&params).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = params
            .iter()
            .map(|(name, _)| {
                let var = bound
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| *v)
                    .expect("bound parameter");
                grads.wrt(var)
            })
            .collect();
        let report =
            gradcheck::compare(&loss_fn, &params, &analytic, gradcheck::DEFAULT_STEP).unwrap();
        assert!(report.passes(1e-4), "worst: {:?}", report.worst);
    }
}
