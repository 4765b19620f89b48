//! Encoder checkpoint format: versioned JSON carrying named tensors with
//! shapes. serde_json writes f64 with shortest round-trip formatting, so
//! save/load is value-exact.

use std::path::Path;

use anyhow::{bail, Context, Result};
use fenrec_core::encoder::EncoderParams;
use fenrec_core::Tensor;
use serde::{Deserialize, Serialize};

const FORMAT: &str = "fenrec-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    dropout_rate: f64,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn save(params: &EncoderParams, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        dropout_rate: params.dropout_rate,
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<EncoderParams> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    if file.format != FORMAT {
        bail!("unsupported checkpoint format `{}`", file.format);
    }
    let named = file
        .tensors
        .into_iter()
        .map(|t| {
            let tensor = match t.shape.len() {
                0 => Tensor::scalar(t.data[0]),
                1 => {
                    if t.shape[0] != t.data.len() {
                        bail!("tensor `{}`: shape/data mismatch", t.name);
                    }
                    Tensor::vector(t.data)
                }
                2 => {
                    if t.shape[0] * t.shape[1] != t.data.len() {
                        bail!("tensor `{}`: shape/data mismatch", t.name);
                    }
                    Tensor::matrix(t.shape[0], t.shape[1], t.data)
                }
                _ => bail!("tensor `{}`: rank > 2 unsupported", t.name),
            };
            Ok((t.name, tensor))
        })
        .collect::<Result<Vec<_>>>()?;
    EncoderParams::from_named(named, file.dropout_rate).map_err(|e| anyhow::anyhow!("{e}"))
}
