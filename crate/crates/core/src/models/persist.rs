//! Model files.
//!
//! Layout: one line of canonical JSON (the header, including every parameter
//! block as base64 of little-endian `f64`), a newline, then the CRC-32 of all
//! preceding bytes as 8 lowercase hex digits and a final newline.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::baselines::{ar_forecast, ARModel, LinearFeatures, LinearModel};
use crate::error::{Error, Result};
use crate::layers::Parameters;
use crate::pipeline::SupervisedWindow;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::seq2seq::{ModelScalers, Seq2SeqModel};
use super::ModelKind;

pub const FORMAT_VERSION: u32 = 1;

/// Any trained forecaster, as stored in a model file.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum AnyModel {
    Seq2Seq(Seq2SeqModel<f64>),
    Linear(LinearModel<f64>),
    Ar { model: ARModel<f64>, n_look_ahead: usize },
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Seq2Seq(m) if m.config.use_attention => ModelKind::Seq2SeqAttention,
            AnyModel::Seq2Seq(_) => ModelKind::Seq2Seq,
            AnyModel::Linear(_) => ModelKind::Lr,
            AnyModel::Ar { .. } => ModelKind::Ar,
        }
    }

    /// Past slices each forecast consumes.
    pub fn n_lag(&self) -> usize {
        match self {
            AnyModel::Seq2Seq(m) => m.config.n_lag,
            AnyModel::Linear(m) => m.features.map_or(0, |f| f.n_lag),
            AnyModel::Ar { model, .. } => model.order(),
        }
    }

    pub fn n_look_ahead(&self) -> usize {
        match self {
            AnyModel::Seq2Seq(m) => m.config.n_look_ahead,
            AnyModel::Linear(m) => m.intercepts.len(),
            AnyModel::Ar { n_look_ahead, .. } => *n_look_ahead,
        }
    }

    /// Whether the model reads observed swim counts.
    pub fn uses_swim(&self) -> bool {
        match self {
            AnyModel::Seq2Seq(m) => m.config.uses_swim(),
            AnyModel::Linear(m) => m.features.is_some_and(|f| f.swim),
            AnyModel::Ar { .. } => false,
        }
    }

    pub fn forecast(&self, w: &SupervisedWindow) -> Result<Vec<f64>> {
        match self {
            AnyModel::Seq2Seq(m) => m.forecast(w),
            AnyModel::Linear(m) => m.forecast(w),
            AnyModel::Ar { model, n_look_ahead } => ar_forecast(model, &w.past_y, *n_look_ahead),
        }
    }

    /// Forecasts many windows; seq2seq models run them as one batch.
    pub fn forecast_many(&self, windows: &[&SupervisedWindow]) -> Result<Vec<Vec<f64>>> {
        match self {
            AnyModel::Seq2Seq(m) => m.forecast_batch(windows),
            _ => windows.iter().map(|w| self.forecast(w)).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Block {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum StoredConfig {
    Seq2seq { model: ModelConfig, scalers: ModelScalers },
    Linear { features: LinearFeatures },
    Ar { order: usize, n_look_ahead: usize },
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: ModelKind,
    config: StoredConfig,
    blocks: Vec<Block>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn encode_block(name: &str, shape: Vec<usize>, values: &[f64]) -> Block {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    Block { name: name.to_string(), shape, data: B64.encode(bytes) }
}

fn decode_block(b: &Block) -> Result<Tensor<f64>> {
    let bytes = B64.decode(&b.data).map_err(|e| Error::Malformed(format!("block {}: {e}", b.name)))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Malformed(format!("block {} is not a whole number of doubles", b.name)));
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Tensor::new(b.shape.clone(), values).map_err(|e| Error::Malformed(format!("block {}: {e}", b.name)))
}

fn header_for(model: &AnyModel) -> Result<Header> {
    let (config, blocks) = match model {
        AnyModel::Seq2Seq(m) => {
            let blocks =
                m.parameters().into_iter().map(|(n, t)| encode_block(&n, t.shape().to_vec(), t.data())).collect();
            (StoredConfig::Seq2seq { model: m.config.clone(), scalers: m.scalers }, blocks)
        }
        AnyModel::Linear(m) => {
            let features =
                m.features.ok_or_else(|| Error::contract("cannot save a linear model without a feature layout"))?;
            let d = m.weights.first().map_or(0, Vec::len);
            let flat: Vec<f64> = m.weights.iter().flatten().copied().collect();
            (
                StoredConfig::Linear { features },
                vec![
                    encode_block("weights", vec![m.weights.len(), d], &flat),
                    encode_block("intercepts", vec![m.intercepts.len()], &m.intercepts),
                ],
            )
        }
        AnyModel::Ar { model, n_look_ahead } => (
            StoredConfig::Ar { order: model.order(), n_look_ahead: *n_look_ahead },
            vec![
                encode_block("intercept", vec![1], &[model.intercept]),
                encode_block("phi", vec![model.order()], &model.phi),
                encode_block("residual_std", vec![1], &[model.residual_std]),
            ],
        ),
    };
    Ok(Header { format_version: FORMAT_VERSION, kind: model.kind(), config, blocks })
}

/// Serialises a model to bytes.
pub fn model_to_bytes(model: &AnyModel) -> Result<Vec<u8>> {
    let header = header_for(model)?;
    let mut out = serde_json::to_vec(&header).map_err(|e| Error::Malformed(e.to_string()))?;
    out.push(b'\n');
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(format!("{crc:08x}\n").as_bytes());
    Ok(out)
}

fn take_block<'a>(blocks: &'a [Block], name: &str) -> Result<&'a Block> {
    blocks.iter().find(|b| b.name == name).ok_or_else(|| Error::Malformed(format!("missing parameter block {name}")))
}

/// Parses a model from bytes, checking the checksum first, then the format
/// version, then the content.
pub fn model_from_bytes(bytes: &[u8]) -> Result<AnyModel> {
    let body_len = bytes
        .strip_suffix(b"\n")
        .and_then(|b| b.iter().rposition(|c| *c == b'\n'))
        .map(|i| i + 1)
        .ok_or_else(|| Error::Checksum("missing checksum trailer".into()))?;
    let (body, trailer) = bytes.split_at(body_len);
    let trailer = std::str::from_utf8(trailer)
        .ok()
        .map(str::trim_end)
        .filter(|t| t.len() == 8)
        .and_then(|t| u32::from_str_radix(t, 16).ok())
        .ok_or_else(|| Error::Checksum("unreadable checksum trailer".into()))?;
    let actual = crc32fast::hash(body);
    if actual != trailer {
        return Err(Error::Checksum(format!("stored {trailer:08x}, computed {actual:08x}")));
    }

    let probe: VersionProbe = serde_json::from_slice(body).map_err(|e| Error::Malformed(e.to_string()))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version { found: probe.format_version, expected: FORMAT_VERSION });
    }
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::Malformed(e.to_string()))?;

    let model = match header.config {
        StoredConfig::Seq2seq { model, scalers } => {
            let mut m = Seq2SeqModel::zeros(model, scalers).map_err(|e| Error::Malformed(e.to_string()))?;
            if header.blocks.len() != m.parameters().len() {
                return Err(Error::Malformed(format!(
                    "{} parameter blocks, architecture has {}",
                    header.blocks.len(),
                    m.parameters().len()
                )));
            }
            for (name, t) in m.parameters_mut() {
                let stored = decode_block(take_block(&header.blocks, &name)?)?;
                if stored.shape() != t.shape() {
                    return Err(Error::Malformed(format!(
                        "block {name} has shape {:?}, expected {:?}",
                        stored.shape(),
                        t.shape()
                    )));
                }
                t.data_mut().copy_from_slice(stored.data());
            }
            AnyModel::Seq2Seq(m)
        }
        StoredConfig::Linear { features } => {
            let w = decode_block(take_block(&header.blocks, "weights")?)?;
            let c = decode_block(take_block(&header.blocks, "intercepts")?)?;
            let (k, d) = match w.shape() {
                [k, d] => (*k, *d),
                s => return Err(Error::Malformed(format!("weights block has shape {s:?}"))),
            };
            if d != features.width() || c.len() != k || k != features.n_look_ahead {
                return Err(Error::Malformed("linear blocks do not match the feature layout".into()));
            }
            AnyModel::Linear(LinearModel {
                features: Some(features),
                weights: w.data().chunks(d.max(1)).map(<[f64]>::to_vec).collect(),
                intercepts: c.data().to_vec(),
            })
        }
        StoredConfig::Ar { order, n_look_ahead } => {
            let c = decode_block(take_block(&header.blocks, "intercept")?)?;
            let phi = decode_block(take_block(&header.blocks, "phi")?)?;
            let s = decode_block(take_block(&header.blocks, "residual_std")?)?;
            if phi.len() != order || c.len() != 1 || s.len() != 1 {
                return Err(Error::Malformed("AR blocks do not match the stored order".into()));
            }
            let model = ARModel::new(c.data()[0], phi.data().to_vec(), s.data()[0])
                .map_err(|e| Error::Malformed(e.to_string()))?;
            AnyModel::Ar { model, n_look_ahead }
        }
    };
    if model.kind() != header.kind {
        return Err(Error::Malformed(format!("header kind {} does not match stored configuration", header.kind)));
    }
    Ok(model)
}

pub fn save_model(model: &AnyModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = model_to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AnyModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;
    use crate::pipeline::Scaler;

    fn seq2seq() -> AnyModel {
        let cfg = ModelConfig::new(3, 2, 4, true).with_swim();
        let scalers = ModelScalers {
            demand: Scaler::fit(&[1.0, 2.5, 7.25]).unwrap(),
            swim: Some(Scaler::fit(&[0.1, 0.7, 3.3]).unwrap()),
        };
        AnyModel::Seq2Seq(Seq2SeqModel::new(cfg, scalers, 11).unwrap())
    }

    #[test]
    fn round_trip_is_exact() {
        let ar = AnyModel::Ar { model: ARModel::new(0.1, vec![0.6, -0.3], 0.05).unwrap(), n_look_ahead: 4 };
        let lr = AnyModel::Linear(LinearModel {
            features: Some(LinearFeatures { n_lag: 2, n_look_ahead: 2, swim: false, calendar: false }),
            weights: vec![vec![0.1, 1.0 / 3.0], vec![-2.0, f64::MIN_POSITIVE]],
            intercepts: vec![0.5, std::f64::consts::PI],
        });
        for m in [seq2seq(), ar, lr] {
            let bytes = model_to_bytes(&m).unwrap();
            let back = model_from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(model_to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corruption_is_a_checksum_error() {
        let bytes = model_to_bytes(&seq2seq()).unwrap();
        for cut in [1, 5, bytes.len() / 2] {
            let err = model_from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, Error::Checksum(_)), "{err}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x01;
        assert!(matches!(model_from_bytes(&flipped), Err(Error::Checksum(_))));
    }

    #[test]
    fn unknown_version_is_a_version_error() {
        let bytes = model_to_bytes(&seq2seq()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let body = text.lines().next().unwrap().replacen("\"format_version\":1", "\"format_version\":0", 1);
        let mut out = format!("{body}\n").into_bytes();
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(format!("{crc:08x}\n").as_bytes());
        assert!(matches!(model_from_bytes(&out), Err(Error::Version { found: 0, expected: 1 })));
    }

    #[test]
    fn valid_checksum_bad_content_is_malformed() {
        let mut out = b"{\"format_version\":1,\"kind\":\"ar\"}\n".to_vec();
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(format!("{crc:08x}\n").as_bytes());
        assert!(matches!(model_from_bytes(&out), Err(Error::Malformed(_))));
    }
}
