use crate::data::{Dataset, Query, WindowBatch};
use crate::error::{Error, Result};
use crate::model::{decoder, gcn, temporal};
use crate::runtime::config::Config;
use crate::runtime::params::{bind_model, BoundModel, ModelParams};
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities over all event types for every query of a window batch:
/// encode the window snapshots with the layer stack, run the decayed GRUs
/// over the resulting sequences, and score each query pair against the
/// final event-type matrix.
pub fn window_probabilities(
    tape: &Tape,
    model: &BoundModel,
    config: &Config,
    dataset: &Dataset,
    batch: &WindowBatch,
) -> Result<Var> {
    if batch.queries.is_empty() {
        return Err(Error::invalid("forward", "batch has no queries"));
    }
    let snapshots: Vec<&crate::data::Snapshot> =
        batch.steps.iter().map(|&t| &dataset.snapshots[t]).collect();

    let (entity_seq, type_seq) = gcn::encode_window(
        tape,
        &snapshots,
        model.entity_emb,
        model.type_emb,
        model.mapping,
        &model.layers,
        config.composition,
    )?;

    let entity_activity: Vec<&[usize]> = snapshots
        .iter()
        .map(|s| s.active_entities.as_slice())
        .collect();
    let entity_states = temporal::encode_sequence(
        tape,
        &model.entity_gru,
        &model.entity_decay,
        &entity_seq,
        &batch.steps,
        &entity_activity,
    )?;

    let type_activity: Vec<&[usize]> = snapshots
        .iter()
        .map(|s| s.active_event_types.as_slice())
        .collect();
    let type_states = temporal::encode_sequence(
        tape,
        &model.type_gru,
        &model.type_decay,
        &type_seq,
        &batch.steps,
        &type_activity,
    )?;

    let dim = config.dim;
    let mut prob_rows = Vec::with_capacity(batch.queries.len());
    for query in &batch.queries {
        let subject = tape.reshape(tape.gather_rows(entity_states, &[query.subject])?, &[dim])?;
        let object = tape.reshape(tape.gather_rows(entity_states, &[query.object])?, &[dim])?;
        let probs =
            decoder::conv_transe_score(tape, &model.decoder, subject, object, type_states)?;
        prob_rows.push(probs);
    }
    tape.stack_rows(&prob_rows)
}

/// Multi-hot label matrix of a batch, [queries, n_types].
pub fn batch_labels(queries: &[Query], n_types: usize) -> Result<Tensor> {
    let mut data = vec![0.0; queries.len() * n_types];
    for (i, q) in queries.iter().enumerate() {
        for &r in &q.labels {
            if r >= n_types {
                return Err(Error::invalid(
                    "forward",
                    format!("label {r} out of range ({n_types} types)"),
                ));
            }
            data[i * n_types + r] = 1.0;
        }
    }
    Tensor::new(vec![queries.len(), n_types], data)
}

/// Inference-only forward pass: probabilities for arbitrary queries at a
/// target timestep, conditioned on the preceding window.
pub fn forward_predict(
    params: &ModelParams,
    config: &Config,
    dataset: &Dataset,
    t: usize,
    queries: &[(usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    let steps = dataset.window_steps(t, config.window)?;
    let batch = WindowBatch {
        target_t: t,
        steps,
        queries: queries
            .iter()
            .map(|&(subject, object)| Query {
                subject,
                object,
                labels: Vec::new(),
            })
            .collect(),
    };
    let tape = Tape::new();
    let (model, _) = bind_model(&tape, params, config, false)?;
    let probs = window_probabilities(&tape, &model, config, dataset, &batch)?;
    let value = tape.value_of(probs);
    Ok((0..batch.queries.len())
        .map(|i| value.row(i).to_vec())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_periodic_tkg;

    fn tiny_config() -> Config {
        Config {
            dim: 6,
            gru_hidden: 6,
            n_groups: 3,
            n_layers: 2,
            window: 3,
            decoder_channels: 2,
            ..Config::default()
        }
    }

    #[test]
    fn probabilities_have_the_right_shape_and_range() {
        let cfg = tiny_config();
        let ds = synth_periodic_tkg(6, 4, 3, 12, 5).unwrap();
        let params = ModelParams::init(&cfg, 6, 4).unwrap();
        let out = forward_predict(&params, &cfg, &ds, 4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(out.len(), 2);
        for row in &out {
            assert_eq!(row.len(), 4);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config();
        let ds = synth_periodic_tkg(6, 4, 3, 12, 5).unwrap();
        let params = ModelParams::init(&cfg, 6, 4).unwrap();
        let a = forward_predict(&params, &cfg, &ds, 5, &[(1, 2)]).unwrap();
        let b = forward_predict(&params, &cfg, &ds, 5, &[(1, 2)]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_zero_parameters_score_half_everywhere() {
        let cfg = tiny_config();
        let ds = synth_periodic_tkg(6, 4, 3, 12, 5).unwrap();
        let mut params = ModelParams::init(&cfg, 6, 4).unwrap();
        for (_, tensor) in params.visit_mut() {
            for v in tensor.data_mut() {
                *v = 0.0;
            }
        }
        let out = forward_predict(&params, &cfg, &ds, 4, &[(0, 1)]).unwrap();
        assert!(out[0].iter().all(|&p| p == 0.5));
    }

    #[test]
    fn labels_build_a_multi_hot_matrix() {
        let queries = vec![
            Query { subject: 0, object: 1, labels: vec![0, 2] },
            Query { subject: 1, object: 0, labels: vec![1] },
        ];
        let y = batch_labels(&queries, 3).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }
}
