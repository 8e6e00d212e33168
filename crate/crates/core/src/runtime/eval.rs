use rayon::prelude::*;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, RankRecord};
use crate::runtime::config::Config;
use crate::runtime::forward::forward_predict;
use crate::runtime::params::ModelParams;

/// Rank every true label of every query in a split.
///
/// Each target timestep is scored against the history of all
/// chronologically earlier data; timesteps fan out in parallel and the
/// records merge back in timestep order, so results are deterministic.
pub fn evaluate(
    params: &ModelParams,
    config: &Config,
    dataset: &Dataset,
    split: Split,
    filtered: bool,
) -> Result<MetricsReport> {
    let targets = dataset.target_timesteps(split);
    if targets.is_empty() {
        return Err(Error::invalid("evaluate", format!("split {split:?} has no targets")));
    }
    let per_target: Vec<Vec<RankRecord>> = targets
        .par_iter()
        .map(|&t| {
            let queries = dataset.queries_at(split, t);
            let pairs: Vec<(usize, usize)> =
                queries.iter().map(|q| (q.subject, q.object)).collect();
            let probs = forward_predict(params, config, dataset, t, &pairs)?;
            queries
                .iter()
                .zip(probs.iter())
                .map(|(q, scores)| RankRecord::from_scores(scores, &q.labels, filtered))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<RankRecord> = per_target.into_iter().flatten().collect();
    MetricsReport::from_records(&records, filtered)
}
