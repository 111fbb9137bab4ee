//! Weight file format.
//!
//! ```text
//! "UPRW" | u32 version | u32 n | n bytes of UTF-8 JSON header
//! per tensor: u16 name length | name | u8 rank | rank x u32 dims | f32 data
//! u32 CRC-32 of everything before it
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::ModelConfig;
use super::params::ParamStore;
use super::pipeline::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UPRW";
pub const VERSION: u32 = 1;
const PREFIX: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0} (expected {VERSION})")]
    Version(u32),
    #[error("weight file truncated: {0}")]
    Truncated(String),
    #[error("weight file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("weight file config mismatch: file has {found}, session expects {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("malformed weight file: {0}")]
    Malformed(String),
}

/// The JSON block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub model: ModelConfig,
    /// Optimizer steps taken, for checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    /// Free-form training settings stored with a checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightFile {
    pub header: FileHeader,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl WeightFile {
    pub fn from_model(model: &Model<f32>) -> Self {
        WeightFile {
            header: FileHeader {
                model: model.config().clone(),
                step: None,
                train: None,
            },
            tensors: model
                .params()
                .named()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Build the model, optionally insisting on a given configuration.
    pub fn to_model(&self, expected: Option<&ModelConfig>) -> Result<Model<f32>> {
        if let Some(e) = expected {
            if *e != self.header.model {
                return Err(WeightsError::ConfigMismatch {
                    expected: describe(e),
                    found: describe(&self.header.model),
                }
                .into());
            }
        }
        let params = ParamStore::from_named(&self.header.model, &self.tensors)
            .map_err(|e| WeightsError::Malformed(e.to_string()))?;
        Model::from_params(self.header.model.clone(), params)
    }
}

fn describe(c: &ModelConfig) -> String {
    format!(
        "channel scale {} (encoder {:?})",
        c.channel_scale, c.encoder_channels
    )
}

pub fn encode(file: &WeightFile) -> Result<Vec<u8>, WeightsError> {
    let json =
        serde_json::to_vec(&file.header).map_err(|e| WeightsError::Malformed(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in &file.tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| WeightsError::Malformed(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(4);
        for d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| WeightsError::Malformed(format!("{name}: dimension too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WeightsError> {
        if self.buf.len() - self.pos < n {
            return Err(WeightsError::Truncated(format!(
                "ends inside {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16, WeightsError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Parse the body (everything before the checksum).
fn parse_body(body: &[u8]) -> Result<WeightFile, WeightsError> {
    let mut r = Reader {
        buf: body,
        pos: PREFIX,
    };
    let json_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let json = r.take(json_len, "the config block").map_err(|_| {
        WeightsError::Malformed(format!("config block length {json_len} exceeds the file"))
    })?;
    let header: FileHeader = serde_json::from_slice(json)
        .map_err(|e| WeightsError::Malformed(format!("config block: {e}")))?;
    let mut tensors = Vec::new();
    while !r.done() {
        let name_len = r.u16("a tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "a tensor name")?)
            .map_err(|_| WeightsError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        if name.is_empty() || name.chars().any(|c| c.is_control()) {
            return Err(WeightsError::Malformed(format!("bad tensor name {name:?}")));
        }
        let rank = r.take(1, "a tensor rank")?[0] as usize;
        if rank > 4 {
            return Err(WeightsError::Malformed(format!(
                "{name}: rank {rank} above 4"
            )));
        }
        let mut shape = [1usize; 4];
        for i in 0..rank {
            shape[4 - rank + i] = r.u32("tensor dimensions")? as usize;
        }
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = count
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| WeightsError::Malformed(format!("{name}: size overflow")))?;
        let raw = r.take(bytes, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t =
            Tensor::from_vec(shape, data).map_err(|e| WeightsError::Malformed(e.to_string()))?;
        tensors.push((name, t));
    }
    Ok(WeightFile { header, tensors })
}

/// Decode with the checks in order: size, magic, version, checksum, layout.
/// A failed checksum is reported as truncation when the bytes read as a
/// well-formed prefix of a file that simply stops early.
pub fn decode(bytes: &[u8]) -> Result<WeightFile, WeightsError> {
    if bytes.len() < 4 {
        return Err(WeightsError::Truncated(format!("{} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    if bytes.len() < PREFIX + 4 {
        return Err(WeightsError::Truncated(format!("{} bytes", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(WeightsError::Version(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        if parse_body(body).is_err() {
            if let Err(WeightsError::Truncated(msg)) = parse_body(bytes) {
                return Err(WeightsError::Truncated(msg));
            }
        }
        return Err(WeightsError::Checksum { stored, computed });
    }
    parse_body(body)
}

pub fn save_weight_file(file: &WeightFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(file)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_weight_file(path: impl AsRef<Path>) -> Result<WeightFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(decode(&bytes)?)
}

pub fn save_weights(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    save_weight_file(&WeightFile::from_model(model), path)
}

/// Load a model, rejecting files whose config differs from `expected`.
pub fn load_weights(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Model<f32>> {
    load_weight_file(path)?.to_model(expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model<f32> {
        Model::new(ModelConfig::scaled(0.25).unwrap(), 9)
    }

    fn bytes() -> Vec<u8> {
        encode(&WeightFile::from_model(&tiny())).unwrap()
    }

    #[test]
    fn encode_decode_encode_is_identical() {
        let b = bytes();
        let f = decode(&b).unwrap();
        assert_eq!(encode(&f).unwrap(), b);
        assert_eq!(f.to_model(None).unwrap(), tiny());
    }

    #[test]
    fn error_kinds_are_distinct() {
        let b = bytes();
        let mut m = b.clone();
        m[0] = b'X';
        assert_eq!(decode(&m).unwrap_err(), WeightsError::BadMagic);
        let mut v = b.clone();
        v[4] = 7;
        assert_eq!(decode(&v).unwrap_err(), WeightsError::Version(7));
        let mut len = b.clone();
        len[9] ^= 0x40;
        assert!(matches!(
            decode(&len).unwrap_err(),
            WeightsError::Checksum { .. }
        ));
        let mut data = b.clone();
        let k = data.len() - 10;
        data[k] ^= 1;
        assert!(matches!(
            decode(&data).unwrap_err(),
            WeightsError::Checksum { .. }
        ));
        assert!(matches!(
            decode(&b[..b.len() / 2]).unwrap_err(),
            WeightsError::Truncated(_)
        ));
        assert!(matches!(
            decode(&b[..6]).unwrap_err(),
            WeightsError::Truncated(_)
        ));
    }

    #[test]
    fn config_guard() {
        let f = decode(&bytes()).unwrap();
        let err = f.to_model(Some(&ModelConfig::base())).unwrap_err();
        assert!(
            matches!(err, Error::Weights(WeightsError::ConfigMismatch { .. })),
            "{err}"
        );
    }
}
