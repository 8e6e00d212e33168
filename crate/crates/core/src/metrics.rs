//! Ranking evaluation: Hits@k and MRR over multi-label predictions.
//!
//! Ranks are pessimistic: every candidate scoring at least as high as the
//! true label (other than the label itself) counts ahead of it, so ties
//! never inflate a metric. Both raw and label-filtered ranking are
//! supported; filtering removes the sample's other true labels from the
//! candidate set before ranking each one.

use std::fmt;

use crate::error::{Error, Result};

/// Ranks of one sample's true labels within its score vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankRecord {
    /// True event-type ids.
    pub labels: Vec<usize>,
    /// Pessimistic rank per label, parallel to `labels`, each in [1, n].
    pub ranks: Vec<usize>,
}

impl RankRecord {
    /// Rank every true label of a score vector.
    pub fn from_scores(scores: &[f64], labels: &[usize], filtered: bool) -> Result<Self> {
        let ranks = labels
            .iter()
            .map(|&q| {
                if filtered {
                    rank_of_filtered(scores, q, labels)
                } else {
                    rank_of(scores, q)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RankRecord {
            labels: labels.to_vec(),
            ranks,
        })
    }
}

/// Pessimistic rank of candidate `q`: one plus the number of strictly
/// higher scores plus the number of equal scores at other indices.
pub fn rank_of(scores: &[f64], q: usize) -> Result<usize> {
    if q >= scores.len() {
        return Err(Error::invalid(
            "rank_of",
            format!("label {} out of range ({} candidates)", q, scores.len()),
        ));
    }
    let target = scores[q];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != q && s >= target)
        .count();
    Ok(1 + ahead)
}

/// Pessimistic rank with the sample's other true labels removed from the
/// candidate set.
pub fn rank_of_filtered(scores: &[f64], q: usize, true_labels: &[usize]) -> Result<usize> {
    if q >= scores.len() {
        return Err(Error::invalid(
            "rank_of",
            format!("label {} out of range ({} candidates)", q, scores.len()),
        ));
    }
    let target = scores[q];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != q && s >= target && !true_labels.contains(&j))
        .count();
    Ok(1 + ahead)
}

/// Fraction of (sample, label) pairs ranked in the top k.
pub fn hits_at_k(records: &[RankRecord], k: usize) -> Result<f64> {
    let total: usize = records.iter().map(|r| r.ranks.len()).sum();
    if total == 0 {
        return Err(Error::invalid("hits_at_k", "no rank records"));
    }
    let hits: usize = records
        .iter()
        .flat_map(|r| r.ranks.iter())
        .filter(|&&rank| rank <= k)
        .count();
    Ok(hits as f64 / total as f64)
}

/// Mean reciprocal rank over all (sample, label) pairs.
pub fn mrr(records: &[RankRecord]) -> Result<f64> {
    let total: usize = records.iter().map(|r| r.ranks.len()).sum();
    if total == 0 {
        return Err(Error::invalid("mrr", "no rank records"));
    }
    let sum: f64 = records
        .iter()
        .flat_map(|r| r.ranks.iter())
        .map(|&rank| 1.0 / rank as f64)
        .sum();
    Ok(sum / total as f64)
}

/// Summary of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub samples: usize,
    pub labels: usize,
    pub filtered: bool,
}

impl MetricsReport {
    pub fn from_records(records: &[RankRecord], filtered: bool) -> Result<Self> {
        Ok(MetricsReport {
            mrr: mrr(records)?,
            hits1: hits_at_k(records, 1)?,
            hits3: hits_at_k(records, 3)?,
            hits10: hits_at_k(records, 10)?,
            samples: records.len(),
            labels: records.iter().map(|r| r.labels.len()).sum(),
            filtered,
        })
    }

    /// Machine-readable key-value lines.
    pub fn to_kv(&self) -> String {
        format!(
            "mrr {:.6}\nhits1 {:.6}\nhits3 {:.6}\nhits10 {:.6}\nsamples {}\nlabels {}\nfiltered {}\n",
            self.mrr, self.hits1, self.hits3, self.hits10, self.samples, self.labels, self.filtered
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "MRR {:.4}  Hits@1 {:.4}  Hits@3 {:.4}  Hits@10 {:.4}",
            self.mrr, self.hits1, self.hits3, self.hits10
        )?;
        write!(
            f,
            "({} samples, {} labels, {} ranking)",
            self.samples,
            self.labels,
            if self.filtered { "filtered" } else { "raw" }
        )
    }
}
