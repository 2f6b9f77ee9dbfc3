//! Binary model file.
//!
//! Layout: 8-byte magic `XCMLP\0\0\0`, `u32` format version, `u32` metadata
//! length, UTF-8 JSON metadata, then for each layer its weights (row-major,
//! `in×out`) followed by its bias, all little-endian `f32`.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{IntegratorModel, IntegratorVariant, Linear, MlpProfile, TrainingMeta, FLATTEN_LAYOUT};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"XCMLP\0\0\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    profile: MlpProfile,
    variant: IntegratorVariant,
    layout: String,
    layer_shapes: Vec<(usize, usize)>,
    param_count: usize,
    meta: Option<TrainingMeta>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

pub fn model_to_bytes(model: &IntegratorModel) -> Result<Vec<u8>> {
    let header = Header {
        profile: model.profile,
        variant: model.variant,
        layout: FLATTEN_LAYOUT.to_string(),
        layer_shapes: model.layers.iter().map(|l| l.weight.dim()).collect(),
        param_count: model.param_count(),
        meta: model.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + model.param_count() * 4);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for layer in &model.layers {
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<IntegratorModel> {
    if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
        return Err(format_err("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(16..16 + len).ok_or_else(|| format_err("truncated metadata"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| format_err(format!("metadata: {e}")))?;
    if header.layout != FLATTEN_LAYOUT {
        return Err(format_err(format!("unknown layout {}", header.layout)));
    }
    let expected = header.profile.layer_shapes();
    if header.layer_shapes != expected {
        return Err(format_err("layer shapes disagree with profile"));
    }
    let mut body = &bytes[16 + len..];
    if body.len() != header.profile.param_count() * 4 {
        return Err(format_err(format!(
            "weight block is {} bytes, expected {}",
            body.len(),
            header.profile.param_count() * 4
        )));
    }
    let mut take = |n: usize| -> Vec<f32> {
        let (head, rest) = body.split_at(n * 4);
        body = rest;
        head.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()
    };
    let mut layers = Vec::with_capacity(3);
    for (i, o) in expected {
        let w = Array2::from_shape_vec((i, o), take(i * o)).expect("shape checked");
        let b = Array1::from_vec(take(o));
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(format_err("non-finite weight"));
        }
        layers.push(Linear { weight: w, bias: b });
    }
    let layers: [Linear; 3] = layers.try_into().expect("three layers");
    Ok(IntegratorModel {
        profile: header.profile,
        variant: header.variant,
        layers,
        meta: header.meta,
    })
}

pub fn save_model(model: &IntegratorModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<IntegratorModel> {
    model_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::mlp::Activation;

    #[test]
    fn roundtrip_is_exact() {
        let p = MlpProfile::new(2, 3, 5, Activation::Gelu).unwrap();
        let m = IntegratorModel::init(p, IntegratorVariant::Direct, 4);
        let back = model_from_bytes(&model_to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = MlpProfile::new(1, 2, 3, Activation::Silu).unwrap();
        let bytes = model_to_bytes(&IntegratorModel::zeros(p)).unwrap();
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::ModelFormat(_))));
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(matches!(model_from_bytes(&bad), Err(Error::ModelFormat(_))));
        let mut v2 = bytes;
        v2[8] = 2;
        assert!(matches!(model_from_bytes(&v2), Err(Error::ModelFormat(_))));
    }
}
