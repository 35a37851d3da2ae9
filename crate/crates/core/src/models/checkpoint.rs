//! Checkpoint files: a header line, a TOML manifest, then every stored
//! tensor as little-endian `f32` in manifest order.
//!
//! ```text
//! arnckpt-1 manifest_bytes=<n> payload_bytes=<m>
//! <n bytes of TOML>
//! <m bytes of payload>
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ChannelStats, WindowConfig};
use crate::tensor::{ParamStore, Tensor};

use super::{Model, ModelSpec};

pub const CHECKPOINT_VERSION: &str = "arnckpt-1";

/// Data-pipeline settings stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub window: Option<WindowConfig>,
    pub normalization: Option<ChannelStats>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: String,
    model: ModelSpec,
    #[serde(default)]
    meta: CheckpointMeta,
    params: Vec<ParamRecord>,
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

pub fn checkpoint_bytes(model: &Model, store: &ParamStore<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let manifest = Manifest {
        version: CHECKPOINT_VERSION.into(),
        model: model.spec().clone(),
        meta: meta.clone(),
        params: store
            .entries()
            .iter()
            .map(|e| ParamRecord {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                trainable: e.trainable,
            })
            .collect(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Internal(format!("manifest serialisation: {e}")))?;
    let payload_len: usize = store.entries().iter().map(|e| e.tensor.numel() * 4).sum();
    let header = format!(
        "{CHECKPOINT_VERSION} manifest_bytes={} payload_bytes={payload_len}\n",
        text.len()
    );
    let mut out = Vec::with_capacity(header.len() + text.len() + payload_len);
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(text.as_bytes());
    for e in store.entries() {
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model, ParamStore<f32>, CheckpointMeta)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| integrity("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| integrity("header is not UTF-8"))?;
    let mut fields = header.split_whitespace();
    let version = fields.next().unwrap_or_default();
    if version != CHECKPOINT_VERSION {
        return Err(integrity(format!(
            "unsupported checkpoint version `{version}`, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut sizes = [None, None];
    for f in fields {
        let (key, value) = f.split_once('=').ok_or_else(|| integrity(format!("bad header field `{f}`")))?;
        let slot = match key {
            "manifest_bytes" => 0,
            "payload_bytes" => 1,
            _ => return Err(integrity(format!("unknown header field `{key}`"))),
        };
        sizes[slot] = Some(value.parse::<usize>().map_err(|_| integrity(format!("bad size `{value}`")))?);
    }
    let [Some(manifest_len), Some(payload_len)] = sizes else {
        return Err(integrity("header lacks section sizes"));
    };
    let body = &bytes[nl + 1..];
    if body.len() != manifest_len + payload_len {
        return Err(integrity(format!(
            "file holds {} bytes after the header, header declares {}",
            body.len(),
            manifest_len + payload_len
        )));
    }
    let text = std::str::from_utf8(&body[..manifest_len]).map_err(|_| integrity("manifest is not UTF-8"))?;
    let manifest: Manifest = toml::from_str(text).map_err(|e| integrity(format!("manifest: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(integrity(format!("manifest version `{}`", manifest.version)));
    }
    let (model, mut store) = Model::build(&manifest.model, 0)?;
    if manifest.params.len() != store.len() {
        return Err(integrity(format!(
            "manifest lists {} tensors, the model has {}",
            manifest.params.len(),
            store.len()
        )));
    }
    let expected: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>() * 4).sum();
    if expected != payload_len {
        return Err(integrity(format!(
            "payload holds {payload_len} bytes, manifest shapes need {expected}"
        )));
    }
    let payload = &body[manifest_len..];
    let mut offset = 0;
    for (i, (rec, id)) in manifest.params.iter().zip(store.ids().collect::<Vec<_>>()).enumerate() {
        let entry = store.entry(id);
        if rec.name != entry.name || rec.shape != entry.tensor.shape() || rec.trainable != entry.trainable {
            return Err(integrity(format!(
                "tensor {i}: manifest has {} {:?}, model expects {} {:?}",
                rec.name,
                rec.shape,
                entry.name,
                entry.tensor.shape()
            )));
        }
        let n = entry.tensor.numel();
        let data: Vec<f32> = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += 4 * n;
        *store.get_mut(id) = Tensor::new(&rec.shape, data)?;
    }
    Ok((model, store, manifest.meta))
}

pub fn checkpoint_save(
    path: impl AsRef<Path>,
    model: &Model,
    store: &ParamStore<f32>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model, store, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<(Model, ParamStore<f32>, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
