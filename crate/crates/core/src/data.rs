//! Quadruple datasets, per-timestep snapshots, and historical windows.
//!
//! Datasets are whitespace-separated integer files (`s r o t`, one event
//! per line) split chronologically into `train.txt` / `valid.txt` /
//! `test.txt`, with optional `stat.txt` (entity and event-type counts) and
//! optional `entity2id.txt` / `relation2id.txt` name tables. Raw timestamps
//! are divided by the dataset's time granularity (inferred as the gcd of
//! all nonzero timestamps) to produce dense timestep indices.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One event record: head entity, event type, tail entity, timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Quadruple {
    pub subject: usize,
    pub event_type: usize,
    pub object: usize,
    pub timestep: usize,
}

/// Entity and event-type id spaces, with optional display names.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    pub n_entities: usize,
    pub n_event_types: usize,
    pub entity_names: Option<Vec<String>>,
    pub event_type_names: Option<Vec<String>>,
}

impl Vocabulary {
    pub fn entity_name(&self, id: usize) -> String {
        self.entity_names
            .as_ref()
            .and_then(|names| names.get(id).cloned())
            .unwrap_or_else(|| id.to_string())
    }

    pub fn event_type_name(&self, id: usize) -> String {
        self.event_type_names
            .as_ref()
            .and_then(|names| names.get(id).cloned())
            .unwrap_or_else(|| id.to_string())
    }
}

/// The multi-relational directed entity graph at one timestep, along with
/// per-pair multi-hot label sets.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub timestep: usize,
    /// Distinct (subject, event_type, object) triples active at this step.
    pub edges: Vec<(usize, usize, usize)>,
    /// Entities with at least one incident edge, sorted.
    pub active_entities: Vec<usize>,
    /// Event types with at least one occurrence, sorted.
    pub active_event_types: Vec<usize>,
    /// Ordered pair -> sorted true event-type ids.
    labels: BTreeMap<(usize, usize), Vec<usize>>,
}

impl Snapshot {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn label_types(&self, subject: usize, object: usize) -> Option<&[usize]> {
        self.labels.get(&(subject, object)).map(|v| v.as_slice())
    }

    /// Multi-hot label vector over all event types for an ordered pair.
    pub fn label_vector(&self, subject: usize, object: usize, n_types: usize) -> Vec<f64> {
        let mut y = vec![0.0; n_types];
        if let Some(types) = self.labels.get(&(subject, object)) {
            for &r in types {
                y[r] = 1.0;
            }
        }
        y
    }

    /// All ordered (subject, object) pairs with at least one event.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.keys().copied()
    }

    pub fn pair_count(&self) -> usize {
        self.labels.len()
    }
}

/// Which of the three chronological splits a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid("split", format!("unknown split '{other}'"))),
        }
    }
}

/// A full chronologically split dataset with one global snapshot timeline.
///
/// Snapshots are merged across splits: the history visible at timestep `t`
/// is every event at timesteps `< t`, regardless of which split it came
/// from. Queries for a split are always drawn from that split's own events.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Quadruple>,
    pub valid: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
    /// One snapshot per timestep in [0, t_max), empty snapshots for gaps.
    pub snapshots: Vec<Snapshot>,
    pub t_max: usize,
    /// Raw-timestamp divisor used when the files were parsed.
    pub time_quantum: usize,
}

/// One query: an ordered entity pair whose event types at the target
/// timestep are to be predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub subject: usize,
    pub object: usize,
    /// True event-type ids at the target timestep.
    pub labels: Vec<usize>,
}

/// A prediction target plus the historical window feeding it.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub target_t: usize,
    /// Timesteps in `[max(0, t-w), t-1]`, ascending.
    pub steps: Vec<usize>,
    pub queries: Vec<Query>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Quadruple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Distinct timesteps of a split that can serve as prediction targets
    /// (timestep 0 has no history and is excluded).
    pub fn target_timesteps(&self, split: Split) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .split(split)
            .iter()
            .map(|q| q.timestep)
            .filter(|&t| t >= 1)
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    /// Queries of a split at one timestep: each distinct ordered pair with
    /// its multi-hot labels, sorted by (subject, object).
    pub fn queries_at(&self, split: Split, t: usize) -> Vec<Query> {
        let mut by_pair: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
        for q in self.split(split).iter().filter(|q| q.timestep == t) {
            by_pair
                .entry((q.subject, q.object))
                .or_default()
                .insert(q.event_type);
        }
        by_pair
            .into_iter()
            .map(|((subject, object), labels)| Query {
                subject,
                object,
                labels: labels.into_iter().collect(),
            })
            .collect()
    }

    /// Build the window batch for target timestep `t`: the snapshots at
    /// `[max(0, t-w), t-1]` plus every (subject, object) pair with at least
    /// one event at `t` (drawn from the global timeline).
    pub fn make_window(&self, t: usize, window: usize) -> Result<WindowBatch> {
        let steps = self.window_steps(t, window)?;
        let snap = self
            .snapshots
            .get(t)
            .ok_or_else(|| Error::invalid("make_window", format!("timestep {t} out of range")))?;
        let queries = snap
            .pairs()
            .map(|(subject, object)| Query {
                subject,
                object,
                labels: snap.label_types(subject, object).unwrap_or(&[]).to_vec(),
            })
            .collect();
        Ok(WindowBatch {
            target_t: t,
            steps,
            queries,
        })
    }

    /// The window timesteps feeding target `t`, truncated at 0.
    pub fn window_steps(&self, t: usize, window: usize) -> Result<Vec<usize>> {
        if t == 0 {
            return Err(Error::invalid("make_window", "timestep 0 has no history"));
        }
        if window == 0 {
            return Err(Error::invalid("make_window", "window must be at least 1"));
        }
        let start = t.saturating_sub(window);
        Ok((start..t).collect())
    }

    /// Table-style dataset statistics.
    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            n_entities: self.vocab.n_entities,
            n_event_types: self.vocab.n_event_types,
            train_events: self.train.len(),
            valid_events: self.valid.len(),
            test_events: self.test.len(),
            n_timesteps: self.t_max,
            time_quantum: self.time_quantum,
        }
    }

    /// Serialize a split back to the on-disk line format (raw timestamps).
    pub fn serialize_split(&self, split: Split) -> String {
        let mut out = String::new();
        for q in self.split(split) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                q.subject,
                q.event_type,
                q.object,
                q.timestep * self.time_quantum
            ));
        }
        out
    }

    /// Write the dataset as train/valid/test/stat files under a directory.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("train.txt"), self.serialize_split(Split::Train))?;
        fs::write(dir.join("valid.txt"), self.serialize_split(Split::Valid))?;
        fs::write(dir.join("test.txt"), self.serialize_split(Split::Test))?;
        fs::write(
            dir.join("stat.txt"),
            format!("{}\t{}\n", self.vocab.n_entities, self.vocab.n_event_types),
        )?;
        Ok(())
    }
}

/// Table-1-style counts for one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub n_entities: usize,
    pub n_event_types: usize,
    pub train_events: usize,
    pub valid_events: usize,
    pub test_events: usize,
    pub n_timesteps: usize,
    pub time_quantum: usize,
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "entities   {}", self.n_entities)?;
        writeln!(f, "relations  {}", self.n_event_types)?;
        writeln!(f, "train      {}", self.train_events)?;
        writeln!(f, "valid      {}", self.valid_events)?;
        writeln!(f, "test       {}", self.test_events)?;
        writeln!(f, "timesteps  {}", self.n_timesteps)?;
        write!(f, "quantum    {}", self.time_quantum)
    }
}

/// A quadruple as read from disk, before timestamp quantization.
#[derive(Debug, Clone, Copy)]
struct RawQuadruple {
    subject: usize,
    event_type: usize,
    object: usize,
    raw_t: usize,
}

fn parse_raw_file(path: &Path) -> Result<Vec<RawQuadruple>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected at least 4 fields, got {}", fields.len()),
            });
        }
        let mut ints = [0i64; 4];
        for (slot, field) in ints.iter_mut().zip(fields.iter()) {
            *slot = field.parse::<i64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("'{field}' is not an integer"),
            })?;
            if *slot < 0 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("negative id {slot}"),
                });
            }
        }
        out.push(RawQuadruple {
            subject: ints[0] as usize,
            event_type: ints[1] as usize,
            object: ints[2] as usize,
            raw_t: ints[3] as usize,
        });
    }
    Ok(out)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Greatest common divisor of all nonzero raw timestamps; 1 when there are
/// none. Dividing by it yields dense timestep indices (24 h or 15 min raw
/// granularities both collapse to consecutive integers).
fn infer_quantum<'a>(raws: impl Iterator<Item = &'a RawQuadruple>) -> usize {
    let mut q = 0;
    for r in raws {
        q = gcd(q, r.raw_t);
    }
    q.max(1)
}

fn read_stat_file(dir: &Path) -> Result<Option<(usize, usize)>> {
    let path = dir.join("stat.txt");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(Error::Parse {
            path,
            line: 1,
            msg: "stat.txt needs two integer fields".to_string(),
        });
    }
    let n_e = fields[0].parse().map_err(|_| Error::Parse {
        path: path.clone(),
        line: 1,
        msg: format!("'{}' is not an integer", fields[0]),
    })?;
    let n_r = fields[1].parse().map_err(|_| Error::Parse {
        path: path.clone(),
        line: 1,
        msg: format!("'{}' is not an integer", fields[1]),
    })?;
    Ok(Some((n_e, n_r)))
}

fn read_name_table(path: &Path) -> Result<Option<Vec<String>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, id) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: "expected 'name<TAB>id'".to_string(),
        })?;
        let id: usize = id.trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("'{id}' is not an integer"),
        })?;
        pairs.push((id, name.to_string()));
    }
    let max_id = pairs.iter().map(|(id, _)| *id).max().unwrap_or(0);
    let mut names = vec![String::new(); max_id + 1];
    for (id, name) in pairs {
        names[id] = name;
    }
    Ok(Some(names))
}

/// Parse a single quadruple file into timestep-indexed records plus the
/// vocabulary implied by the file (or by a sibling `stat.txt`).
pub fn parse_quadruples(path: impl AsRef<Path>) -> Result<(Vec<Quadruple>, Vocabulary)> {
    let path = path.as_ref();
    let raws = parse_raw_file(path)?;
    let quantum = infer_quantum(raws.iter());
    let quads: Vec<Quadruple> = raws
        .iter()
        .map(|r| Quadruple {
            subject: r.subject,
            event_type: r.event_type,
            object: r.object,
            timestep: r.raw_t / quantum,
        })
        .collect();

    let stat = match path.parent() {
        Some(dir) => read_stat_file(dir)?,
        None => None,
    };
    let (n_entities, n_event_types) = match stat {
        Some(counts) => counts,
        None => (
            quads
                .iter()
                .map(|q| q.subject.max(q.object) + 1)
                .max()
                .unwrap_or(0),
            quads.iter().map(|q| q.event_type + 1).max().unwrap_or(0),
        ),
    };
    validate_ids(&quads, n_entities, n_event_types, path)?;
    Ok((
        quads,
        Vocabulary {
            n_entities,
            n_event_types,
            entity_names: None,
            event_type_names: None,
        },
    ))
}

fn validate_ids(quads: &[Quadruple], n_e: usize, n_r: usize, path: &Path) -> Result<()> {
    for q in quads {
        if q.subject >= n_e || q.object >= n_e || q.event_type >= n_r {
            return Err(Error::invalid(
                "parse_quadruples",
                format!(
                    "{}: ids ({}, {}, {}) exceed vocabulary ({} entities, {} event types)",
                    path.display(),
                    q.subject,
                    q.event_type,
                    q.object,
                    n_e,
                    n_r
                ),
            ));
        }
    }
    Ok(())
}

/// Build one snapshot per timestep in `[0, max_t]`, with deduplicated edge
/// sets and per-pair label sets; timesteps with no events stay empty.
pub fn build_snapshots(quads: &[Quadruple], t_max: usize) -> Vec<Snapshot> {
    let mut snaps: Vec<Snapshot> = (0..t_max)
        .map(|t| Snapshot {
            timestep: t,
            ..Snapshot::default()
        })
        .collect();
    let mut edge_sets: Vec<BTreeSet<(usize, usize, usize)>> = vec![BTreeSet::new(); t_max];
    for q in quads {
        edge_sets[q.timestep].insert((q.subject, q.event_type, q.object));
    }
    for (snap, edges) in snaps.iter_mut().zip(edge_sets) {
        let mut entities = BTreeSet::new();
        let mut types = BTreeSet::new();
        for &(s, r, o) in &edges {
            entities.insert(s);
            entities.insert(o);
            types.insert(r);
            snap.labels.entry((s, o)).or_default().push(r);
        }
        for labels in snap.labels.values_mut() {
            labels.sort_unstable();
            labels.dedup();
        }
        snap.edges = edges.into_iter().collect();
        snap.active_entities = entities.into_iter().collect();
        snap.active_event_types = types.into_iter().collect();
    }
    snaps
}

/// Load a dataset directory (`train.txt` / `valid.txt` / `test.txt`, with
/// optional `stat.txt` and name tables). The timestamp quantum and the
/// vocabulary are inferred globally across all three files.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let train_raw = parse_raw_file(&dir.join("train.txt"))?;
    let valid_raw = parse_raw_file(&dir.join("valid.txt"))?;
    let test_raw = parse_raw_file(&dir.join("test.txt"))?;

    let quantum = infer_quantum(train_raw.iter().chain(&valid_raw).chain(&test_raw));
    let quantize = |raws: &[RawQuadruple]| -> Vec<Quadruple> {
        raws.iter()
            .map(|r| Quadruple {
                subject: r.subject,
                event_type: r.event_type,
                object: r.object,
                timestep: r.raw_t / quantum,
            })
            .collect()
    };
    let train = quantize(&train_raw);
    let valid = quantize(&valid_raw);
    let test = quantize(&test_raw);

    let all = || train.iter().chain(&valid).chain(&test);
    let (mut n_entities, mut n_event_types) = match read_stat_file(dir)? {
        Some(counts) => counts,
        None => (0, 0),
    };
    if n_entities == 0 {
        n_entities = all().map(|q| q.subject.max(q.object) + 1).max().unwrap_or(0);
    }
    if n_event_types == 0 {
        n_event_types = all().map(|q| q.event_type + 1).max().unwrap_or(0);
    }
    for (quads, name) in [(&train, "train.txt"), (&valid, "valid.txt"), (&test, "test.txt")] {
        validate_ids(quads, n_entities, n_event_types, &dir.join(name))?;
    }
    check_chronology(&train, &valid, &test)?;

    let t_max = all().map(|q| q.timestep + 1).max().unwrap_or(0);
    let all_quads: Vec<Quadruple> = all().copied().collect();
    let snapshots = build_snapshots(&all_quads, t_max);

    let vocab = Vocabulary {
        n_entities,
        n_event_types,
        entity_names: read_name_table(&dir.join("entity2id.txt"))?,
        event_type_names: read_name_table(&dir.join("relation2id.txt"))?,
    };
    Ok(Dataset {
        vocab,
        train,
        valid,
        test,
        snapshots,
        t_max,
        time_quantum: quantum,
    })
}

fn check_chronology(train: &[Quadruple], valid: &[Quadruple], test: &[Quadruple]) -> Result<()> {
    let max_t = |qs: &[Quadruple]| qs.iter().map(|q| q.timestep).max();
    let min_t = |qs: &[Quadruple]| qs.iter().map(|q| q.timestep).min();
    if let (Some(a), Some(b)) = (max_t(train), min_t(valid)) {
        if a > b {
            return Err(Error::invalid(
                "load_dataset",
                format!("train reaches timestep {a} but valid starts at {b}"),
            ));
        }
    }
    if let (Some(a), Some(b)) = (max_t(valid), min_t(test)) {
        if a > b {
            return Err(Error::invalid(
                "load_dataset",
                format!("valid reaches timestep {a} but test starts at {b}"),
            ));
        }
    }
    Ok(())
}

/// Generate a deterministic periodic dataset for desk-scale experiments.
///
/// Each timestep `t` activates one event per head entity of a per-phase
/// subset, with the tail also chosen per phase `t % period` and the event
/// type a fixed function of `(s + o + t) % period`. The same phase always
/// reproduces the same edge pattern, so the generated process is exactly
/// periodic, and the idle entities exercise the retention and decay paths.
/// Timesteps are split 60/20/20 in chronological order.
pub fn synth_periodic_tkg(
    n_entities: usize,
    n_types: usize,
    period: usize,
    t_max: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_entities < 2 || n_types < 2 || period < 2 || t_max < 2 {
        return Err(Error::invalid(
            "synth_periodic_tkg",
            "all counts must be at least 2",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Injective phase -> event type map when it fits, modular otherwise.
    let type_of_phase: Vec<usize> = if period <= n_types {
        let mut types: Vec<usize> = (0..n_types).collect();
        types.shuffle(&mut rng);
        types.truncate(period);
        types
    } else {
        (0..period).map(|p| p % n_types).collect()
    };

    // Per phase: the active head entities (roughly 60%, so some entities
    // idle at every step) and one tail each, fixed for the whole run.
    let heads_per_phase = ((n_entities as f64 * 0.6).ceil() as usize).clamp(1, n_entities);
    let mut heads_of: Vec<Vec<usize>> = Vec::with_capacity(period);
    let mut tail_of: Vec<Vec<usize>> = Vec::with_capacity(period);
    for _ in 0..period {
        let mut heads: Vec<usize> = (0..n_entities).collect();
        heads.shuffle(&mut rng);
        heads.truncate(heads_per_phase);
        heads.sort_unstable();
        let mut tails = Vec::with_capacity(heads.len());
        for &s in &heads {
            let mut o = rng.gen_range(0..n_entities - 1);
            if o >= s {
                o += 1;
            }
            tails.push(o);
        }
        heads_of.push(heads);
        tail_of.push(tails);
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    let train_end = (t_max as f64 * 0.6).floor() as usize;
    let valid_end = (t_max as f64 * 0.8).floor() as usize;
    for t in 0..t_max {
        let phase = t % period;
        for (&s, &o) in heads_of[phase].iter().zip(&tail_of[phase]) {
            let r = type_of_phase[(s + o + t) % period];
            let quad = Quadruple {
                subject: s,
                event_type: r,
                object: o,
                timestep: t,
            };
            if t < train_end {
                train.push(quad);
            } else if t < valid_end {
                valid.push(quad);
            } else {
                test.push(quad);
            }
        }
    }

    let all: Vec<Quadruple> = train.iter().chain(&valid).chain(&test).copied().collect();
    let snapshots = build_snapshots(&all, t_max);
    Ok(Dataset {
        vocab: Vocabulary {
            n_entities,
            n_event_types: n_types,
            entity_names: None,
            event_type_names: None,
        },
        train,
        valid,
        test,
        snapshots,
        t_max,
        time_quantum: 1,
    })
}

/// Convenience for tests: build a dataset directly from timestep-indexed
/// quadruple lists.
pub fn dataset_from_quads(
    train: Vec<Quadruple>,
    valid: Vec<Quadruple>,
    test: Vec<Quadruple>,
    n_entities: usize,
    n_event_types: usize,
) -> Result<Dataset> {
    check_chronology(&train, &valid, &test)?;
    let all: Vec<Quadruple> = train.iter().chain(&valid).chain(&test).copied().collect();
    let t_max = all.iter().map(|q| q.timestep + 1).max().unwrap_or(0);
    let snapshots = build_snapshots(&all, t_max);
    Ok(Dataset {
        vocab: Vocabulary {
            n_entities,
            n_event_types,
            entity_names: None,
            event_type_names: None,
        },
        train,
        valid,
        test,
        snapshots,
        t_max,
        time_quantum: 1,
    })
}

/// Stats for a directory without keeping the dataset around.
pub fn dataset_stats(dir: impl AsRef<Path>) -> Result<DatasetStats> {
    Ok(load_dataset(dir)?.stats())
}

/// Directory layout helper used by the CLI.
pub fn expect_dataset_dir(dir: &str) -> Result<PathBuf> {
    let path = PathBuf::from(dir);
    if !path.join("train.txt").exists() {
        return Err(Error::invalid(
            "data_dir",
            format!("{} does not contain train.txt", path.display()),
        ));
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) {
        let mut f = fs::File::create(dir.join(name)).unwrap();
        f.write_all(content.as_bytes()).unwrap();
    }

    #[test]
    fn parses_a_single_line() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "events.txt", "0 0 1 0\n");
        let (quads, vocab) = parse_quadruples(dir.path().join("events.txt")).unwrap();
        assert_eq!(quads.len(), 1);
        assert!(vocab.n_entities >= 2);
        assert!(vocab.n_event_types >= 1);
    }

    #[test]
    fn extra_fields_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "events.txt", "3\t1\t2\t24\t0\n");
        let (quads, _) = parse_quadruples(dir.path().join("events.txt")).unwrap();
        assert_eq!(
            quads[0],
            Quadruple {
                subject: 3,
                event_type: 1,
                object: 2,
                timestep: 1
            }
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "events.txt", "0 0 1 0\n0 zero 1 0\n");
        let err = parse_quadruples(dir.path().join("events.txt")).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn negative_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "events.txt", "0 0 -1 0\n");
        assert!(parse_quadruples(dir.path().join("events.txt")).is_err());
    }

    #[test]
    fn timestamps_collapse_by_gcd() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "events.txt", "0 0 1 0\n0 0 1 24\n1 0 0 48\n");
        let (quads, _) = parse_quadruples(dir.path().join("events.txt")).unwrap();
        let steps: Vec<usize> = quads.iter().map(|q| q.timestep).collect();
        assert_eq!(steps, vec![0, 1, 2]);
    }

    #[test]
    fn stat_file_overrides_inferred_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "events.txt", "0 0 1 0\n");
        write_file(dir.path(), "stat.txt", "10 5\n");
        let (_, vocab) = parse_quadruples(dir.path().join("events.txt")).unwrap();
        assert_eq!(vocab.n_entities, 10);
        assert_eq!(vocab.n_event_types, 5);
    }

    #[test]
    fn snapshots_deduplicate_edges() {
        let quads = vec![
            Quadruple { subject: 0, event_type: 1, object: 2, timestep: 5 },
            Quadruple { subject: 0, event_type: 1, object: 2, timestep: 5 },
        ];
        let snaps = build_snapshots(&quads, 6);
        assert_eq!(snaps[5].edges.len(), 1);
        assert!(snaps[4].is_empty());
    }

    #[test]
    fn labels_are_multi_hot_over_types() {
        let quads = vec![
            Quadruple { subject: 0, event_type: 1, object: 2, timestep: 5 },
            Quadruple { subject: 0, event_type: 3, object: 2, timestep: 5 },
        ];
        let snaps = build_snapshots(&quads, 6);
        assert_eq!(snaps[5].label_types(0, 2), Some(&[1, 3][..]));
        let y = snaps[5].label_vector(0, 2, 5);
        assert_eq!(y, vec![0.0, 1.0, 0.0, 1.0, 0.0]);
        // Sum of labels is at least 1 exactly when the pair has an edge.
        assert!(y.iter().sum::<f64>() >= 1.0);
        assert_eq!(snaps[5].label_vector(2, 0, 5).iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn window_truncates_at_zero() {
        let ds = synth_periodic_tkg(4, 3, 2, 12, 9).unwrap();
        let wb = ds.make_window(3, 7).unwrap();
        assert_eq!(wb.steps, vec![0, 1, 2]);
        let wb = ds.make_window(10, 7).unwrap();
        assert_eq!(wb.steps, vec![3, 4, 5, 6, 7, 8, 9]);
        assert!(ds.make_window(0, 7).is_err());
    }

    #[test]
    fn window_queries_match_snapshot_pairs() {
        let ds = synth_periodic_tkg(4, 3, 2, 12, 9).unwrap();
        let wb = ds.make_window(5, 3).unwrap();
        let pairs: Vec<(usize, usize)> = ds.snapshots[5].pairs().collect();
        let query_pairs: Vec<(usize, usize)> =
            wb.queries.iter().map(|q| (q.subject, q.object)).collect();
        assert_eq!(pairs, query_pairs);
        assert!(wb.queries.iter().all(|q| !q.labels.is_empty()));
    }

    #[test]
    fn synth_is_deterministic_and_periodic() {
        let a = synth_periodic_tkg(6, 4, 3, 20, 11).unwrap();
        let b = synth_periodic_tkg(6, 4, 3, 20, 11).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.valid, b.valid);
        assert_eq!(a.test, b.test);
        // Same phase, same edge pattern.
        for t in 0..20 - 3 {
            assert_eq!(a.snapshots[t].edges.len(), a.snapshots[t + 3].edges.len());
            let shifted: Vec<_> = a.snapshots[t].edges.clone();
            assert_eq!(shifted, a.snapshots[t + 3].edges);
        }
    }

    #[test]
    fn synth_queries_have_exactly_one_label() {
        let ds = synth_periodic_tkg(6, 4, 3, 20, 11).unwrap();
        for t in ds.target_timesteps(Split::Train) {
            for q in ds.queries_at(Split::Train, t) {
                assert_eq!(q.labels.len(), 1);
            }
        }
    }

    #[test]
    fn synth_split_is_chronological() {
        let ds = synth_periodic_tkg(6, 4, 3, 20, 11).unwrap();
        let max_train = ds.train.iter().map(|q| q.timestep).max().unwrap();
        let min_valid = ds.valid.iter().map(|q| q.timestep).min().unwrap();
        let max_valid = ds.valid.iter().map(|q| q.timestep).max().unwrap();
        let min_test = ds.test.iter().map(|q| q.timestep).min().unwrap();
        assert!(max_train <= min_valid);
        assert!(max_valid <= min_test);
    }

    #[test]
    fn roundtrip_through_files_is_lossless() {
        let ds = synth_periodic_tkg(5, 3, 2, 15, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write_dir(dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.train, back.train);
        assert_eq!(ds.valid, back.valid);
        assert_eq!(ds.test, back.test);
        assert_eq!(ds.vocab.n_entities, back.vocab.n_entities);
        assert_eq!(ds.t_max, back.t_max);
    }

    #[test]
    fn chronology_violation_is_rejected() {
        let quad = |t| Quadruple {
            subject: 0,
            event_type: 0,
            object: 1,
            timestep: t,
        };
        let err = dataset_from_quads(vec![quad(5)], vec![quad(2)], vec![quad(8)], 2, 1);
        assert!(err.is_err());
    }

    #[test]
    fn name_tables_resolve_ids() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "train.txt", "0 0 1 0\n");
        write_file(dir.path(), "valid.txt", "0 0 1 1\n");
        write_file(dir.path(), "test.txt", "1 0 0 2\n");
        write_file(dir.path(), "entity2id.txt", "Alpha\t0\nBeta\t1\n");
        write_file(dir.path(), "relation2id.txt", "Visits\t0\n");
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.vocab.entity_name(1), "Beta");
        assert_eq!(ds.vocab.event_type_name(0), "Visits");
        assert_eq!(ds.vocab.entity_name(7), "7");
    }
}
