//! On-disk model state: a TOML manifest naming every tensor with its shape
//! and position, plus one blob of little-endian `f32` values.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, MtlModel};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Tensor};
use crate::tasks::{TaskRegistry, TaskSpec, Vocab};

pub const FORMAT: &str = "moe-mtl-checkpoint";
pub const VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "checkpoint.manifest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in `f32` elements.
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerEntry {
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    blob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<Vec<String>>,
    encoder: EncoderConfig,
    #[serde(default)]
    task: Vec<TaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerEntry>,
    tensor: Vec<TensorEntry>,
}

/// A model with its optional optimizer state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: MtlModel<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

const MOMENT_M: &str = "optimizer.m/";
const MOMENT_V: &str = "optimizer.v/";

/// Serialises to `(manifest text, blob bytes)`; `blob_name` is recorded in
/// the manifest.
pub fn encode_checkpoint(
    model: &MtlModel<f32>,
    optimizer: Option<&AdamState<f32>>,
    blob_name: &str,
) -> Result<(String, Vec<u8>)> {
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, t: &Tensor<f32>| {
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (_, name, t) in model.params.iter() {
        push(name.to_string(), t);
    }
    if let Some(opt) = optimizer {
        if opt.m.len() != model.params.len() || opt.v.len() != model.params.len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match the parameters".into(),
            ));
        }
        for (prefix, moments) in [(MOMENT_M, &opt.m), (MOMENT_V, &opt.v)] {
            for ((_, name, _), t) in model.params.iter().zip(moments) {
                push(format!("{prefix}{name}"), t);
            }
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        blob: blob_name.into(),
        vocab: model.vocab.as_ref().map(|v| v.tokens().to_vec()),
        encoder: model.config().clone(),
        task: model.registry.tasks().to_vec(),
        optimizer: optimizer.map(|o| OptimizerEntry {
            step: o.step,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
        }),
        tensor: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(format!("cannot serialise manifest: {e}")))?;
    Ok((text, blob))
}

/// Parses a manifest and its blob back into a checkpoint.
pub fn decode_checkpoint(manifest: &str, blob: &[u8]) -> Result<Checkpoint> {
    let m: Manifest = toml::from_str(manifest).map_err(|e| {
        let line = e
            .span()
            .map(|s| {
                let start = manifest[..s.start].rfind('\n').map_or(0, |i| i + 1);
                let end = manifest[s.start..].find('\n').map_or(manifest.len(), |i| s.start + i);
                manifest[start..end].trim().to_string()
            })
            .unwrap_or_default();
        Error::Checkpoint(format!("manifest: {} (at `{line}`)", e.message().trim()))
    })?;
    if m.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "field `format`: expected `{FORMAT}`, found `{}`",
            m.format
        )));
    }
    if m.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "field `version`: unsupported version {}",
            m.version
        )));
    }
    if !blob.len().is_multiple_of(4) {
        return Err(Error::Checkpoint(format!(
            "blob length {} is not a multiple of 4",
            blob.len()
        )));
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut by_name: HashMap<&str, Tensor<f32>> = HashMap::new();
    for e in &m.tensor {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(Error::Checkpoint(format!(
                "tensor `{}`: field `len` disagrees with `shape`",
                e.name
            )));
        }
        let end = e
            .offset
            .checked_add(e.len)
            .filter(|&end| end <= values.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "tensor `{}`: field `offset` runs past the end of the blob",
                    e.name
                ))
            })?;
        let t = Tensor::new(e.shape.clone(), values[e.offset..end].to_vec())?;
        if by_name.insert(&e.name, t).is_some() {
            return Err(Error::Checkpoint(format!("tensor `{}` listed twice", e.name)));
        }
    }
    let registry = TaskRegistry::new(m.task.clone()).map_err(|e| Error::Checkpoint(format!("field `task`: {e}")))?;
    let mut source = |name: &str, _: &[usize], _| {
        by_name
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is missing")))
    };
    let mut model = MtlModel::build(&m.encoder, &registry, &mut source)
        .map_err(|e| Error::Checkpoint(format!("field `encoder`: {e}")))?;
    if let Some(tokens) = m.vocab {
        let vocab = Vocab::from_tokens(tokens).map_err(|e| Error::Checkpoint(format!("field `vocab`: {e}")))?;
        if vocab.len() > m.encoder.vocab_size {
            return Err(Error::Checkpoint(
                "field `vocab`: more tokens than encoder.vocab_size".into(),
            ));
        }
        model.vocab = Some(vocab);
    }
    let optimizer = match m.optimizer {
        None => None,
        Some(o) => {
            let mut take = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
                model
                    .params
                    .iter()
                    .map(|(_, name, p)| {
                        let t = by_name
                            .remove(format!("{prefix}{name}").as_str())
                            .ok_or_else(|| Error::Checkpoint(format!("tensor `{prefix}{name}` is missing")))?;
                        if t.shape() != p.shape() {
                            return Err(Error::Checkpoint(format!(
                                "tensor `{prefix}{name}` has the wrong shape"
                            )));
                        }
                        Ok(t)
                    })
                    .collect()
            };
            let (mm, vv) = (take(MOMENT_M)?, take(MOMENT_V)?);
            Some(AdamState {
                step: o.step,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
                m: mm,
                v: vv,
            })
        }
    };
    if let Some(extra) = by_name.keys().min() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    Ok(Checkpoint { model, optimizer })
}

fn blob_path(manifest: &Path, blob: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(blob)
}

/// Writes `path` (the manifest) and a sibling `.bin` blob.
pub fn save_checkpoint(path: &Path, model: &MtlModel<f32>, optimizer: Option<&AdamState<f32>>) -> Result<()> {
    let blob_name = path
        .with_extension("bin")
        .file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?;
    let (text, blob) = encode_checkpoint(model, optimizer, &blob_name)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bp = blob_path(path, &blob_name);
    fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint given its manifest path, or a directory holding
/// `checkpoint.manifest`.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let blob_name = toml::from_str::<toml::Table>(&text)
        .ok()
        .and_then(|t| t.get("blob").and_then(|b| b.as_str()).map(str::to_string))
        .ok_or_else(|| Error::Checkpoint("manifest: missing field `blob`".into()))?;
    let bp = blob_path(&path, &blob_name);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    decode_checkpoint(&text, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{fresh_init, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> MtlModel<f32> {
        let reg = TaskRegistry::new(vec![
            TaskSpec::classification("a", 2, 10),
            TaskSpec::regression("b", 10),
        ])
        .unwrap();
        let mut cfg = EncoderConfig::tiny(Variant::TaskGate, 2, 2);
        cfg.num_layers = 1;
        cfg.hidden = 8;
        cfg.ffn_inner = 16;
        fresh_init(&cfg, &reg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn encode_decode_encode_is_stable() {
        let m = model();
        let mut opt = AdamState::new(&m.params);
        opt.step = 7;
        opt.m[0].data_mut()[0] = 0.25;
        let (text, blob) = encode_checkpoint(&m, Some(&opt), "x.bin").unwrap();
        let back = decode_checkpoint(&text, &blob).unwrap();
        assert!(back.model.params.bit_eq(&m.params));
        assert_eq!(back.optimizer.as_ref(), Some(&opt));
        let again = encode_checkpoint(&back.model, back.optimizer.as_ref(), "x.bin").unwrap();
        assert_eq!((text, blob), again);
    }

    #[test]
    fn corrupted_fields_are_named() {
        let m = model();
        let (text, blob) = encode_checkpoint(&m, None, "x.bin").unwrap();
        let err = decode_checkpoint(&text.replace("version = 1", "version = 9"), &blob).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        let err = decode_checkpoint(&text.replace("hidden = 8", "hidden = \"eight\""), &blob).unwrap_err();
        assert!(err.to_string().contains("hidden"), "{err}");
        let err = decode_checkpoint(&text.replace("num_layers = 1\n", ""), &blob).unwrap_err();
        assert!(err.to_string().contains("num_layers"), "{err}");
        let err = decode_checkpoint(&text, &blob[..blob.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }
}
