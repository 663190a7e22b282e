//! Safetensors weights with a JSON model card next to them.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::{Block, Matrix, ModelCard, ModelWeights, Norm};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `model.safetensors` → `model.card.json`.
pub fn card_path(weights: &Path) -> PathBuf {
    weights.with_extension("card.json")
}

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load { path: path.to_path_buf(), reason: reason.into() }
}

/// Reads `path` and its card sidecar. F32 and F64 tensors are accepted and
/// cast to `S`.
pub fn load_weights<S: Scalar>(path: &Path) -> Result<ModelWeights<S>> {
    let card_file = card_path(path);
    let card_text = fs::read_to_string(&card_file).map_err(|e| load_err(&card_file, e.to_string()))?;
    let card: ModelCard =
        serde_json::from_str(&card_text).map_err(|e| load_err(&card_file, format!("bad model card: {e}")))?;
    card.validate()?;
    let bytes = fs::read(path).map_err(|e| load_err(path, e.to_string()))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| load_err(path, format!("{e:?}")))?;

    let matrix = |name: &str, shape: [usize; 2]| -> Result<Matrix<S>> {
        let view = st.tensor(name).map_err(|_| load_err(path, format!("missing tensor {name}")))?;
        if view.shape() != shape {
            return Err(Error::Compatibility(format!("{name}: shape {:?}, card expects {shape:?}", view.shape())));
        }
        let data = decode(view.dtype(), view.data())
            .ok_or_else(|| Error::Compatibility(format!("{name}: unsupported dtype {:?}", view.dtype())))?;
        Matrix::new(shape[0], shape[1], data)
    };
    let vector = |name: &str| -> Result<Option<Vec<S>>> {
        match card.norm {
            Norm::None => Ok(None),
            Norm::Rms => Ok(Some(matrix(name, [1, card.dim])?.data)),
        }
    };

    let (v, d, h) = (card.vocab_size, card.dim, card.mlp_hidden());
    let embed = matrix("embed.weight", [v, d])?;
    let pos_embed = match card.positional {
        super::Positional::Learned => Some(matrix("pos_embed.weight", [card.context, d])?),
        _ => None,
    };
    let blocks = (0..card.layers)
        .map(|i| {
            Ok(Block {
                attn_norm: vector(&format!("block.{i}.attn.norm.weight"))?,
                wq: matrix(&format!("block.{i}.attn.q.weight"), [d, d])?,
                wk: matrix(&format!("block.{i}.attn.k.weight"), [d, d])?,
                wv: matrix(&format!("block.{i}.attn.v.weight"), [d, d])?,
                wo: matrix(&format!("block.{i}.attn.o.weight"), [d, d])?,
                mlp_norm: vector(&format!("block.{i}.mlp.norm.weight"))?,
                up: matrix(&format!("block.{i}.mlp.up.weight"), [h, d])?,
                down: matrix(&format!("block.{i}.mlp.down.weight"), [d, h])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_norm = vector("final_norm.weight")?;
    let lm_head = if card.tied_head { None } else { Some(matrix("lm_head.weight", [v, d])?) };
    ModelWeights::from_parts(card, embed, pos_embed, blocks, final_norm, lm_head)
}

fn decode<S: Scalar>(dtype: Dtype, bytes: &[u8]) -> Option<Vec<S>> {
    match dtype {
        Dtype::F32 => Some(bytes.chunks_exact(4).map(|c| S::of(f32::read_le(c) as f64)).collect()),
        Dtype::F64 => Some(bytes.chunks_exact(8).map(|c| S::of(f64::read_le(c))).collect()),
        _ => None,
    }
}

/// Writes weights in `S`'s dtype plus the card sidecar. Norm gains are stored
/// as `[1, dim]`.
pub fn save_weights<S: Scalar>(weights: &ModelWeights<S>, path: &Path) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, data: &[S]| {
        let mut buf = Vec::with_capacity(data.len() * S::BYTES);
        data.iter().for_each(|v| v.write_le(&mut buf));
        tensors.push((name, shape, buf));
    };
    let mut push_matrix = |name: String, m: &Matrix<S>| push(name, m.shape().to_vec(), m.data());
    push_matrix("embed.weight".into(), &weights.embed);
    if let Some(p) = &weights.pos_embed {
        push_matrix("pos_embed.weight".into(), p);
    }
    for (i, b) in weights.blocks.iter().enumerate() {
        for (name, m) in [("attn.q", &b.wq), ("attn.k", &b.wk), ("attn.v", &b.wv), ("attn.o", &b.wo)] {
            push_matrix(format!("block.{i}.{name}.weight"), m);
        }
        push_matrix(format!("block.{i}.mlp.up.weight"), &b.up);
        push_matrix(format!("block.{i}.mlp.down.weight"), &b.down);
    }
    if let Some(m) = &weights.lm_head {
        push_matrix("lm_head.weight".into(), m);
    }
    let d = weights.card.dim;
    for (i, b) in weights.blocks.iter().enumerate() {
        if let Some(g) = &b.attn_norm {
            push(format!("block.{i}.attn.norm.weight"), vec![1, d], g);
        }
        if let Some(g) = &b.mlp_norm {
            push(format!("block.{i}.mlp.norm.weight"), vec![1, d], g);
        }
    }
    if let Some(g) = &weights.final_norm {
        push("final_norm.weight".into(), vec![1, d], g);
    }

    let views = tensors
        .iter()
        .map(|(name, shape, data)| {
            TensorView::new(S::DTYPE, shape.clone(), data)
                .map(|v| (name.clone(), v))
                .map_err(|e| load_err(path, format!("{e:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata: Option<HashMap<String, String>> = None;
    safetensors::serialize_to_file(views, &metadata, path).map_err(|e| load_err(path, format!("{e:?}")))?;
    fs::write(card_path(path), serde_json::to_string_pretty(&weights.card)? + "\n")?;
    Ok(())
}
