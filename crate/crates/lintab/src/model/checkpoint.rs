//! Checkpoint file format.
//!
//! Layout: the 5-byte magic `TFLX1`, a little-endian `u32` byte length, a
//! UTF-8 JSON header of that length, then raw tensor data — each tensor's
//! values as little-endian `f32`, packed back-to-back in the order the
//! header's manifest lists them. The header carries the architecture
//! config, training provenance (seed, prior, step count, loss curve), the
//! optimizer step when optimizer state is included, and the manifest
//! (name, shape, byte offset into the data section per tensor).
//!
//! Saving is deterministic, and training keeps every stored value exactly
//! representable in `f32`, so save → load → save reproduces the file
//! byte for byte. Loading validates everything it reads and reports the
//! first malformed field by name.

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::num::Matrix;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// File magic for the checkpoint format, version 1.
pub const MAGIC: &[u8; 5] = b"TFLX1";

/// One point of the training loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Where the weights came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainProvenance {
    /// Master seed of the training run (0 for untrained weights).
    pub seed: u64,
    /// Optimizer steps completed.
    pub steps_completed: u64,
    /// Name of the synthetic prior trained on, or "none".
    pub prior: String,
    /// Per-step training record.
    pub loss_curve: Vec<LossPoint>,
}

/// First and second Adam moments, aligned with the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Updates taken so far (drives bias correction on resume).
    pub step: u64,
    pub m: Vec<(String, Matrix)>,
    pub v: Vec<(String, Matrix)>,
}

impl OptimizerState {
    /// Zero moments for the given parameters.
    pub fn zeros(params: &ModelParams) -> Self {
        let zero_like = |entries: &[(String, Matrix)]| {
            entries
                .iter()
                .map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect()
        };
        OptimizerState {
            step: 0,
            m: zero_like(params.entries()),
            v: zero_like(params.entries()),
        }
    }
}

/// Everything a training run persists.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub provenance: TrainProvenance,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    provenance: TrainProvenance,
    optimizer_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

fn bad(field: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::format("checkpoint", field, detail)
}

impl Checkpoint {
    /// Untrained checkpoint around freshly initialized parameters.
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Checkpoint {
            config,
            params,
            provenance: TrainProvenance {
                prior: "none".to_string(),
                ..TrainProvenance::default()
            },
            optimizer: None,
        }
    }

    /// Serialize to the on-disk byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.config.validate()?;
        self.params.validate_layout(&self.config)?;

        // Collect every tensor in serialization order: parameters, then
        // first moments, then second moments.
        let mut tensors: Vec<(&str, &Matrix)> = self
            .params
            .entries()
            .iter()
            .map(|(n, m)| (n.as_str(), m))
            .collect();
        let mut moment_names: Vec<String> = Vec::new();
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != self.params.len() || opt.v.len() != self.params.len() {
                return Err(Error::contract(
                    "optimizer moments do not cover every parameter",
                ));
            }
            for (prefix, list) in [("adam.m", &opt.m), ("adam.v", &opt.v)] {
                for ((pname, pmat), (mname, mmat)) in
                    self.params.entries().iter().zip(list.iter())
                {
                    if mname != pname || mmat.shape() != pmat.shape() {
                        return Err(Error::contract(format!(
                            "optimizer moment `{mname}` does not align with parameter `{pname}`"
                        )));
                    }
                    moment_names.push(format!("{prefix}.{pname}"));
                }
            }
            let mut i = 0;
            for list in [&opt.m, &opt.v] {
                for (_, mmat) in list.iter() {
                    tensors.push((moment_names[i].as_str(), mmat));
                    i += 1;
                }
            }
        }

        let mut manifest = Vec::with_capacity(tensors.len());
        let mut offset = 0u64;
        for (name, m) in &tensors {
            manifest.push(TensorEntry {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
                offset,
            });
            offset += (m.rows() * m.cols() * 4) as u64;
        }

        let header = Header {
            config: self.config.clone(),
            provenance: self.provenance.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            tensors: manifest,
        };
        let header_json = serde_json::to_vec(&header)?;
        if header_json.len() > u32::MAX as usize {
            return Err(Error::contract("checkpoint header too large"));
        }

        let mut out = Vec::with_capacity(MAGIC.len() + 4 + header_json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (_, m) in &tensors {
            for &v in m.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parse the on-disk byte layout, validating every field.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < MAGIC.len() {
            return Err(bad("magic", "file shorter than the format magic"));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad(
                "magic",
                format!("expected {:?}", std::str::from_utf8(MAGIC).unwrap()),
            ));
        }
        let rest = &bytes[MAGIC.len()..];
        if rest.len() < 4 {
            return Err(bad("header.length", "file ends inside the length prefix"));
        }
        let header_len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let rest = &rest[4..];
        if rest.len() < header_len {
            return Err(bad(
                "header.length",
                format!("header claims {header_len} bytes, {} remain", rest.len()),
            ));
        }
        let header: Header = serde_json::from_slice(&rest[..header_len])
            .map_err(|e| bad("header.json", e.to_string()))?;
        let data = &rest[header_len..];

        header
            .config
            .validate()
            .map_err(|e| bad("config", e.to_string()))?;

        // The manifest must be exactly the architecture's layout, plus the
        // two aligned moment blocks when optimizer state is present.
        let mut expected: Vec<(String, (usize, usize))> = header.config.tensor_layout();
        if header.optimizer_step.is_some() {
            let base = header.config.tensor_layout();
            for prefix in ["adam.m", "adam.v"] {
                expected.extend(
                    base.iter()
                        .map(|(n, s)| (format!("{prefix}.{n}"), *s)),
                );
            }
        }
        if header.tensors.len() != expected.len() {
            return Err(bad(
                "tensors",
                format!(
                    "manifest lists {} tensors, architecture needs {}",
                    header.tensors.len(),
                    expected.len()
                ),
            ));
        }

        let mut offset = 0u64;
        let mut mats: Vec<Matrix> = Vec::with_capacity(header.tensors.len());
        for (i, (entry, (ename, eshape))) in
            header.tensors.iter().zip(expected.iter()).enumerate()
        {
            if entry.name != *ename {
                return Err(bad(
                    format!("tensors[{i}].name"),
                    format!("found `{}`, expected `{}`", entry.name, ename),
                ));
            }
            if (entry.rows, entry.cols) != *eshape {
                return Err(bad(
                    format!("tensors[{i}].shape"),
                    format!(
                        "`{}` is {}x{}, expected {}x{}",
                        entry.name, entry.rows, entry.cols, eshape.0, eshape.1
                    ),
                ));
            }
            if entry.offset != offset {
                return Err(bad(
                    format!("tensors[{i}].offset"),
                    format!("found {}, expected {offset}", entry.offset),
                ));
            }
            let n = entry.rows * entry.cols;
            let start = offset as usize;
            let end = start + n * 4;
            if end > data.len() {
                return Err(bad(
                    "data.length",
                    format!(
                        "tensor `{}` needs bytes {start}..{end}, data section has {}",
                        entry.name,
                        data.len()
                    ),
                ));
            }
            let mut vals = Vec::with_capacity(n);
            for chunk in data[start..end].chunks_exact(4) {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(bad(
                        format!("tensors[{i}].data"),
                        format!("non-finite value in `{}`", entry.name),
                    ));
                }
                vals.push(v as f64);
            }
            mats.push(Matrix::from_flat(entry.rows, entry.cols, vals)?);
            offset = end as u64;
        }
        if offset as usize != data.len() {
            return Err(bad(
                "data.length",
                format!(
                    "data section has {} bytes, manifest accounts for {offset}",
                    data.len()
                ),
            ));
        }

        let n_params = header.config.tensor_layout().len();
        let mut it = expected.into_iter().zip(mats);
        let params = ModelParams::from_entries(
            it.by_ref()
                .take(n_params)
                .map(|((n, _), m)| (n, m))
                .collect(),
        );
        let optimizer = header.optimizer_step.map(|step| {
            let strip = |name: String| {
                name.splitn(3, '.')
                    .nth(2)
                    .expect("moment names are validated above")
                    .to_string()
            };
            let m = it
                .by_ref()
                .take(n_params)
                .map(|((n, _), mat)| (strip(n), mat))
                .collect();
            let v = it
                .by_ref()
                .take(n_params)
                .map(|((n, _), mat)| (strip(n), mat))
                .collect();
            OptimizerState { step, m, v }
        });

        Ok(Checkpoint {
            config: header.config,
            params,
            provenance: header.provenance,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            hidden_mult: 2,
            feature_capacity: 3,
            class_capacity: 2,
            max_prompt: 32,
            attention: super::super::ModelAttention::Linear,
            causal_ablation: false,
            ln_eps: 1e-5,
        };
        let params = init_params(&config, 5).unwrap();
        let mut optimizer = OptimizerState::zeros(&params);
        optimizer.step = 17;
        optimizer.m[0].1.set(0, 0, 0.25);
        optimizer.v[3].1.set(0, 0, 0.5);
        Checkpoint {
            config,
            params,
            provenance: TrainProvenance {
                seed: 99,
                steps_completed: 17,
                prior: "mlp".to_string(),
                loss_curve: vec![LossPoint {
                    step: 1,
                    loss: 2.3,
                    grad_norm: 0.5,
                    lr: 3e-5,
                }],
            },
            optimizer: Some(optimizer),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, ck);
        assert_eq!(loaded.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);
    }

    #[test]
    fn corrupt_files_name_the_offending_field() {
        let ck = sample();
        let good = ck.to_bytes().unwrap();

        let expect_field = |bytes: &[u8], field: &str| {
            match Checkpoint::from_bytes(bytes).unwrap_err() {
                Error::Format { field: f, .. } => {
                    assert!(
                        f.contains(field),
                        "expected field containing `{field}`, got `{f}`"
                    )
                }
                other => panic!("expected Format error for `{field}`, got {other:?}"),
            }
        };

        expect_field(&good[..3], "magic");
        let mut b = good.clone();
        b[0] ^= 0xff;
        expect_field(&b, "magic");
        expect_field(&good[..MAGIC.len() + 2], "header.length");
        let mut b = good.clone();
        let huge = (good.len() as u32).to_le_bytes();
        b[MAGIC.len()..MAGIC.len() + 4].copy_from_slice(&huge);
        expect_field(&b, "header.length");
        let mut b = good.clone();
        b[MAGIC.len() + 4] = b'!'; // break the JSON
        expect_field(&b, "header.json");
        expect_field(&good[..good.len() - 4], "data.length");
        let mut b = good.clone();
        b.extend_from_slice(&[0, 0, 0, 0]);
        expect_field(&b, "data.length");
        // NaN bit pattern inside the first tensor.
        let mut b = good.clone();
        let header_len =
            u32::from_le_bytes(good[MAGIC.len()..MAGIC.len() + 4].try_into().unwrap()) as usize;
        let data_start = MAGIC.len() + 4 + header_len;
        b[data_start..data_start + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        expect_field(&b, "tensors[0].data");
    }

    #[test]
    fn manifest_mismatches_are_detected() {
        let ck = sample();
        let good = ck.to_bytes().unwrap();
        let header_len =
            u32::from_le_bytes(good[MAGIC.len()..MAGIC.len() + 4].try_into().unwrap()) as usize;
        let json_start = MAGIC.len() + 4;
        let json = std::str::from_utf8(&good[json_start..json_start + header_len]).unwrap();

        // Rename a tensor in the manifest (same byte length keeps offsets valid).
        let tampered = json.replacen("embed.features", "embed.fEatures", 1);
        assert_eq!(tampered.len(), json.len());
        let mut b = good.clone();
        b[json_start..json_start + header_len].copy_from_slice(tampered.as_bytes());
        match Checkpoint::from_bytes(&b).unwrap_err() {
            Error::Format { field, .. } => assert!(field.contains("tensors[0].name")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checkpoint_without_optimizer_round_trips() {
        let mut ck = sample();
        ck.optimizer = None;
        let bytes = ck.to_bytes().unwrap();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, ck);
        assert_eq!(loaded.to_bytes().unwrap(), bytes);
    }
}
