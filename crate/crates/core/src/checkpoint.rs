//! Parameter checkpoints: named tensors plus the run configuration and a
//! hash binding the two together.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamTensor};

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config_hash: String,
    config: serde_json::Value,
    tensors: Vec<TensorRecord>,
}

/// FNV-1a over the canonical JSON serialization of a config.
pub fn config_hash(config_json: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config_json).expect("config serializes");
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

pub fn save(path: &Path, params: &ModelParams, config_json: serde_json::Value) -> Result<()> {
    let file = CheckpointFile {
        config_hash: config_hash(&config_json),
        config: config_json,
        tensors: params
            .tensors()
            .iter()
            .map(|t| TensorRecord {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: t.data.clone(),
                trainable: t.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load a checkpoint, verifying the stored hash matches the embedded
/// config. Returns the config value and the tensors.
pub fn load(path: &Path) -> Result<(serde_json::Value, Vec<ParamTensor>)> {
    let raw = std::fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&raw).map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
    let expected = config_hash(&file.config);
    if expected != file.config_hash {
        return Err(Error::Checkpoint(format!(
            "config hash mismatch: stored {}, recomputed {}",
            file.config_hash, expected
        )));
    }
    let tensors = file
        .tensors
        .into_iter()
        .map(|t| ParamTensor {
            name: t.name,
            shape: t.shape,
            data: t.data,
            trainable: t.trainable,
        })
        .collect();
    Ok((file.config, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};

    #[test]
    fn roundtrip_preserves_bits() {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            mp_hidden: 4,
            mp_layers: 1,
            n_layers: 1,
            ffn_hidden: 8,
            pe_dim: 2,
            k_tree: 2,
            k_graph: 2,
            t_kernels: 2,
            readout_hidden: 4,
            ..Default::default()
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let dir = std::env::temp_dir().join("spectok-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");
        let config_json = serde_json::to_value(&cfg).unwrap();
        save(&path, &params, config_json.clone()).unwrap();
        let (loaded_cfg, tensors) = load(&path).unwrap();
        assert_eq!(loaded_cfg, config_json);
        let reloaded = ModelParams::from_tensors(&cfg, tensors).unwrap();
        for (a, b) in params.tensors().iter().zip(reloaded.tensors()) {
            assert_eq!(a, b, "tensor {} changed across roundtrip", a.name);
        }
    }

    #[test]
    fn tampered_hash_is_rejected() {
        let dir = std::env::temp_dir().join("spectok-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(
            &path,
            r#"{"config_hash":"0000000000000000","config":{"x":1},"tensors":[]}"#,
        )
        .unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }
}
