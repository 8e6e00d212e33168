//! Single-file checkpoint container.
//!
//! Layout: a magic line with the format version, the config as one JSON
//! line, a metadata line, one index line per tensor (name, dtype, shape,
//! byte offset, element count), an `end` line, then the raw little-endian
//! f64 payloads back to back. Save -> load is bitwise lossless; the best
//! validation loss is stored as raw bits to keep it exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::runtime::config::Config;
use crate::runtime::params::ModelParams;
use crate::tensor::{Adam, Tensor};

const MAGIC: &str = "TKGCHKPT";
const VERSION: u32 = 1;

/// A trained model with everything needed to resume or evaluate it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Config,
    pub params: ModelParams,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub adam: Option<Adam>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = self
            .params
            .visit()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let mut adam_step = 0;
        if let Some(adam) = &self.adam {
            adam_step = adam.step_count();
            for (name, first, second) in adam.export_slots() {
                tensors.push((format!("adam.m.{name}"), first));
                tensors.push((format!("adam.v.{name}"), second));
            }
        }

        let mut header = String::new();
        header.push_str(&format!("{MAGIC} {VERSION}\n"));
        header.push_str(&format!("config {}\n", serde_json::to_string(&self.config)?));
        header.push_str(&format!(
            "meta epoch={} best_val_bits={} n_entities={} n_event_types={} adam_step={} has_adam={}\n",
            self.epoch,
            self.best_val_loss.to_bits(),
            self.params.n_entities,
            self.params.n_event_types,
            adam_step,
            self.adam.is_some()
        ));
        let mut offset = 0usize;
        for (name, tensor) in &tensors {
            let shape = tensor
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            header.push_str(&format!(
                "tensor {name} f64 {shape} {offset} {}\n",
                tensor.numel()
            ));
            offset += tensor.numel() * 8;
        }
        header.push_str("end\n");

        let mut file = fs::File::create(path)?;
        file.write_all(header.as_bytes())?;
        for (_, tensor) in &tensors {
            for v in tensor.data() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let bytes = fs::read(path)?;
        let header_end = find_header_end(&bytes)?;
        let header = std::str::from_utf8(&bytes[..header_end])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let payload = &bytes[header_end..];

        let mut lines = header.lines();
        let magic_line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty file".into()))?;
        let mut magic_parts = magic_line.split_whitespace();
        if magic_parts.next() != Some(MAGIC) {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version: u32 = magic_parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing format version".into()))?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} found, {VERSION} supported"
            )));
        }

        let config_line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("missing config line".into()))?;
        let config: Config = serde_json::from_str(
            config_line
                .strip_prefix("config ")
                .ok_or_else(|| Error::Checkpoint("malformed config line".into()))?,
        )?;

        let meta_line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("missing meta line".into()))?;
        let meta = parse_meta(meta_line)?;

        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for line in lines {
            if line == "end" {
                break;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 || fields[0] != "tensor" || fields[2] != "f64" {
                return Err(Error::Checkpoint(format!("malformed index line: {line}")));
            }
            let name = fields[1].to_string();
            let shape: Vec<usize> = fields[3]
                .split('x')
                .map(|d| {
                    d.parse()
                        .map_err(|_| Error::Checkpoint(format!("bad shape in: {line}")))
                })
                .collect::<Result<_>>()?;
            let offset: usize = fields[4]
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad offset in: {line}")))?;
            let count: usize = fields[5]
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad count in: {line}")))?;
            let end = offset + count * 8;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "truncated payload: tensor {name} needs bytes up to {end}, file has {}",
                    payload.len()
                )));
            }
            let data: Vec<f64> = payload[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            tensors.push((name, Tensor::new(shape, data).map_err(|e| {
                Error::Checkpoint(format!("tensor does not match its shape: {e}"))
            })?));
        }

        let mut params = ModelParams::init(&config, meta.n_entities, meta.n_event_types)?;
        params.load_from(&tensors)?;

        let adam = if meta.has_adam {
            let mut adam = Adam::new();
            adam.set_step(meta.adam_step);
            for (name, tensor) in &tensors {
                if let Some(base) = name.strip_prefix("adam.m.") {
                    let second = tensors
                        .iter()
                        .find(|(n, _)| n == &format!("adam.v.{base}"))
                        .ok_or_else(|| {
                            Error::Checkpoint(format!("missing second moment for {base}"))
                        })?;
                    adam.import_slot(base, tensor.data().to_vec(), second.1.data().to_vec());
                }
            }
            Some(adam)
        } else {
            None
        };

        Ok(Checkpoint {
            config,
            params,
            epoch: meta.epoch,
            best_val_loss: f64::from_bits(meta.best_val_bits),
            adam,
        })
    }
}

struct Meta {
    epoch: usize,
    best_val_bits: u64,
    n_entities: usize,
    n_event_types: usize,
    adam_step: u64,
    has_adam: bool,
}

fn parse_meta(line: &str) -> Result<Meta> {
    let mut meta = Meta {
        epoch: 0,
        best_val_bits: f64::INFINITY.to_bits(),
        n_entities: 0,
        n_event_types: 0,
        adam_step: 0,
        has_adam: false,
    };
    let body = line
        .strip_prefix("meta ")
        .ok_or_else(|| Error::Checkpoint("malformed meta line".into()))?;
    for field in body.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed meta field: {field}")))?;
        let bad = || Error::Checkpoint(format!("malformed meta value: {field}"));
        match key {
            "epoch" => meta.epoch = value.parse().map_err(|_| bad())?,
            "best_val_bits" => meta.best_val_bits = value.parse().map_err(|_| bad())?,
            "n_entities" => meta.n_entities = value.parse().map_err(|_| bad())?,
            "n_event_types" => meta.n_event_types = value.parse().map_err(|_| bad())?,
            "adam_step" => meta.adam_step = value.parse().map_err(|_| bad())?,
            "has_adam" => meta.has_adam = value.parse().map_err(|_| bad())?,
            _ => {}
        }
    }
    Ok(meta)
}

fn find_header_end(bytes: &[u8]) -> Result<usize> {
    let needle = b"end\n";
    let mut pos = 0;
    while pos + needle.len() <= bytes.len() {
        if &bytes[pos..pos + needle.len()] == needle
            && (pos == 0 || bytes[pos - 1] == b'\n')
        {
            return Ok(pos + needle.len());
        }
        pos += 1;
    }
    Err(Error::Checkpoint("missing end-of-header marker".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Config, ModelParams) {
        let cfg = Config {
            dim: 4,
            gru_hidden: 4,
            n_groups: 3,
            n_layers: 1,
            decoder_channels: 2,
            ..Config::default()
        };
        let params = ModelParams::init(&cfg, 5, 3).unwrap();
        (cfg, params)
    }

    #[test]
    fn roundtrip_is_bitwise_lossless() {
        let (config, params) = small();
        let ckpt = Checkpoint {
            config,
            params,
            epoch: 7,
            best_val_loss: 0.123456789123456789,
            adam: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.epoch, 7);
        assert_eq!(back.best_val_loss.to_bits(), ckpt.best_val_loss.to_bits());
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.config, ckpt.config);

        // Saving the loaded checkpoint reproduces the same bytes.
        let path2 = dir.path().join("model2.ckpt");
        back.save(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn adam_state_roundtrips() {
        let (config, mut params) = small();
        let mut adam = Adam::new();
        adam.begin_step();
        let grad = Tensor::full(params.entity_emb.shape(), 0.1);
        adam.update("entity_emb", &mut params.entity_emb, &grad, 0.01).unwrap();
        let ckpt = Checkpoint {
            config,
            params,
            epoch: 1,
            best_val_loss: 1.0,
            adam: Some(adam.clone()),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let restored = back.adam.expect("adam state present");
        assert_eq!(restored.step_count(), 1);
        assert_eq!(restored.export_slots(), adam.export_slots());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (config, params) = small();
        let ckpt = Checkpoint {
            config,
            params,
            epoch: 0,
            best_val_loss: 1.0,
            adam: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 32]).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        fs::write(&path, format!("{MAGIC} 99\nend\n")).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("99") && err.contains('1'), "{err}");
    }

    #[test]
    fn dimension_mismatch_names_the_tensor() {
        let (config, params) = small();
        let ckpt = Checkpoint {
            config: config.clone(),
            params,
            epoch: 0,
            best_val_loss: 1.0,
            adam: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();

        // Claim a different width in the stored config: shapes no longer
        // match the tensors on disk. Only the header is patched; the
        // payload bytes stay put.
        let bytes = fs::read(&path).unwrap();
        let header_end = find_header_end(&bytes).unwrap();
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        let patched = header.replacen("\"dim\":4,\"gru_hidden\":4", "\"dim\":6,\"gru_hidden\":6", 1);
        let mut out = patched.into_bytes();
        out.extend_from_slice(&bytes[header_end..]);
        fs::write(&path, out).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("entity_emb"), "{err}");
    }
}
