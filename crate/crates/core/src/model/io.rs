//! Model container.
//!
//! ```text
//! REPSENSE-MODEL\n
//! {json header}\n
//! <payload: little-endian f32 tensors, in manifest order>
//! ```
//!
//! The header carries the format version, the gate order tag, the model
//! config, the class registry, a tensor manifest (`name`, `shape`), the
//! payload length and a SHA-256 of the payload.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelParams, TensorInfo, GATE_ORDER};
use crate::error::{Error, Result};
use crate::landmarks::ClassRegistry;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "REPSENSE-MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub config: ModelConfig,
    pub registry: ClassRegistry,
    pub params: ModelParams<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    gate_order: String,
    dtype: String,
    config: ModelConfig,
    class_registry: ClassRegistry,
    tensors: Vec<TensorInfo>,
    payload_bytes: usize,
    checksum: String,
}

fn checksum(payload: &[u8]) -> String {
    let digest = Sha256::digest(payload);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

pub fn write_model(
    mut w: impl Write,
    params: &ModelParams<f32>,
    config: &ModelConfig,
    registry: &ClassRegistry,
) -> Result<()> {
    config.validate()?;
    params.check_matches(config)?;
    if registry.len() != config.num_classes {
        return Err(Error::Config(format!(
            "class registry has {} names, model has {} classes",
            registry.len(),
            config.num_classes
        )));
    }
    let mut payload = Vec::with_capacity(params.scalar_count() * 4);
    for t in params.tensors() {
        for v in t {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        gate_order: GATE_ORDER.into(),
        dtype: "f32le".into(),
        config: config.clone(),
        class_registry: registry.clone(),
        tensors: ModelParams::<f32>::tensor_infos(config),
        payload_bytes: payload.len(),
        checksum: checksum(&payload),
    };
    let io = |e| Error::io("<model stream>", e);
    writeln!(w, "{MAGIC}").map_err(io)?;
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::io("<model stream>", e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    w.write_all(&payload).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_model(mut r: impl BufRead) -> Result<SavedModel> {
    let mut line = String::new();
    r.read_line(&mut line)
        .map_err(|e| Error::model("magic", e.to_string()))?;
    if line.trim_end() != MAGIC {
        return Err(Error::model("magic", format!("expected {MAGIC:?}")));
    }
    line.clear();
    r.read_line(&mut line)
        .map_err(|e| Error::model("header", e.to_string()))?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::model("header", e.to_string()))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::model(
            "format_version",
            format!(
                "found {}, supported {MODEL_FORMAT_VERSION}",
                header.format_version
            ),
        ));
    }
    if header.gate_order != GATE_ORDER {
        return Err(Error::model(
            "gate_order",
            format!("found {:?}, supported {GATE_ORDER:?}", header.gate_order),
        ));
    }
    if header.dtype != "f32le" {
        return Err(Error::model(
            "dtype",
            format!("found {:?}, supported \"f32le\"", header.dtype),
        ));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)
        .map_err(|e| Error::model("payload", e.to_string()))?;
    if checksum(&payload) != header.checksum {
        return Err(Error::model(
            "checksum",
            format!(
                "payload ({} bytes) does not match the stored checksum",
                payload.len()
            ),
        ));
    }
    let config = header.config;
    config
        .validate()
        .map_err(|e| Error::model("config", e.to_string()))?;
    if header.class_registry.len() != config.num_classes {
        return Err(Error::model(
            "class_registry",
            format!(
                "{} names for {} classes",
                header.class_registry.len(),
                config.num_classes
            ),
        ));
    }
    let expected = ModelParams::<f32>::tensor_infos(&config);
    if header.tensors.len() != expected.len() {
        return Err(Error::model(
            "tensors",
            format!(
                "{} tensors listed, config requires {}",
                header.tensors.len(),
                expected.len()
            ),
        ));
    }
    for (found, want) in header.tensors.iter().zip(&expected) {
        if found.name != want.name {
            return Err(Error::model(
                format!("tensors.{}", want.name),
                format!("found tensor {:?} in its place", found.name),
            ));
        }
        if found.shape != want.shape {
            return Err(Error::model(
                format!("tensors.{}", want.name),
                format!(
                    "shape {:?} does not match config shape {:?}",
                    found.shape, want.shape
                ),
            ));
        }
    }
    let scalars: usize = expected.iter().map(TensorInfo::len).sum();
    if header.payload_bytes != payload.len() || payload.len() != scalars * 4 {
        return Err(Error::model(
            "payload_bytes",
            format!(
                "payload has {} bytes, config requires {}",
                payload.len(),
                scalars * 4
            ),
        ));
    }
    let flat: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut params = ModelParams::<f32>::zeros(&config);
    params.set_flat(&flat);
    Ok(SavedModel {
        config,
        registry: header.class_registry,
        params,
    })
}

pub fn save_model(
    path: impl AsRef<Path>,
    params: &ModelParams<f32>,
    config: &ModelConfig,
    registry: &ClassRegistry,
) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, params, config, registry)?;
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    read_model(&bytes[..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn saved(config: &ModelConfig) -> Vec<u8> {
        let params = init_params::<f32>(config, 5).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &params, config, &ClassRegistry::default()).unwrap();
        buf
    }

    fn field_of(e: Error) -> String {
        match e {
            Error::ModelFormat { field, .. } => field,
            other => panic!("expected model format error, got {other}"),
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        let config = ModelConfig::default();
        let params = init_params::<f32>(&config, 5).unwrap();
        let buf = saved(&config);
        let back = read_model(&buf[..]).unwrap();
        assert_eq!(back.config, config);
        assert_eq!(back.registry, ClassRegistry::default());
        let (a, b) = (params.to_flat(), back.params.to_flat());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let buf = saved(&ModelConfig::default());
        let cut = &buf[..buf.len() - 100];
        assert_eq!(field_of(read_model(cut).unwrap_err()), "checksum");
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut buf = saved(&ModelConfig::default());
        let n = buf.len();
        buf[n - 7] ^= 0x10;
        assert_eq!(field_of(read_model(&buf[..]).unwrap_err()), "checksum");
    }

    #[test]
    fn config_kernel_mismatch_is_shape_error() {
        // kernels saved for [32], header claims [64, 64]
        let small = ModelConfig {
            lstm_units: vec![32],
            ..ModelConfig::default()
        };
        let buf = saved(&small);
        let text = String::from_utf8_lossy(&buf).into_owned();
        let header_end = buf
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == b'\n')
            .nth(1)
            .unwrap()
            .0;
        let header = &text[..header_end];
        let edited = header.replacen("\"lstm_units\":[32]", "\"lstm_units\":[64,64]", 1);
        assert_ne!(edited, header);
        let mut bytes = edited.into_bytes();
        bytes.extend_from_slice(&buf[header_end..]);
        let field = field_of(read_model(&bytes[..]).unwrap_err());
        assert!(field.starts_with("tensors"), "{field}");
    }

    #[test]
    fn version_mismatch() {
        let buf = saved(&ModelConfig::default());
        let text = String::from_utf8_lossy(&buf).into_owned();
        let pos = text.find("\"format_version\":1").unwrap();
        let mut bytes = buf.clone();
        bytes[pos + "\"format_version\":".len()] = b'9';
        assert_eq!(
            field_of(read_model(&bytes[..]).unwrap_err()),
            "format_version"
        );
    }

    #[test]
    fn bad_magic() {
        assert_eq!(field_of(read_model(&b"nope\n"[..]).unwrap_err()), "magic");
    }
}
