//! Binary container: 8-byte magic, u32 LE header length, JSON header, then
//! every declared tensor as raw little-endian f64 in declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LayerParams, NamedTensor, Parameters};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SLSIM\0\0\x01";
const PRELUDE: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum Container {
    Dataset(Dataset),
    Parameters(Parameters),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Dataset,
    Parameters,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Features,
    Labels,
    Trainable,
    Buffer,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer: Option<usize>,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: Kind,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layers: Option<usize>,
    tensors: Vec<TensorEntry>,
}

pub fn write_container_bytes(value: &Container) -> Vec<u8> {
    let mut payloads: Vec<&[f64]> = Vec::new();
    let labels: Vec<f64>;
    let header = match value {
        Container::Dataset(d) => {
            labels = d.labels.iter().map(|&l| l as f64).collect();
            payloads.push(d.features.data());
            payloads.push(&labels);
            Header {
                kind: Kind::Dataset,
                name: d.name.clone(),
                classes: Some(d.classes),
                layers: None,
                tensors: vec![
                    TensorEntry {
                        name: "features".into(),
                        role: Role::Features,
                        layer: None,
                        shape: d.features.shape().to_vec(),
                    },
                    TensorEntry {
                        name: "labels".into(),
                        role: Role::Labels,
                        layer: None,
                        shape: vec![d.labels.len()],
                    },
                ],
            }
        }
        Container::Parameters(p) => {
            let mut tensors = Vec::new();
            for (i, layer) in p.layers().iter().enumerate() {
                let roles = layer
                    .trainable
                    .iter()
                    .map(|t| (t, Role::Trainable))
                    .chain(layer.buffers.iter().map(|t| (t, Role::Buffer)));
                for (t, role) in roles {
                    payloads.push(t.value.data());
                    tensors.push(TensorEntry {
                        name: t.name.clone(),
                        role,
                        layer: Some(i),
                        shape: t.value.shape().to_vec(),
                    });
                }
            }
            Header {
                kind: Kind::Parameters,
                name: "parameters".into(),
                classes: None,
                layers: Some(p.layer_count()),
                tensors,
            }
        }
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let total: usize = payloads.iter().map(|p| p.len() * 8).sum();
    let mut out = Vec::with_capacity(PRELUDE + json.len() + total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in payloads {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_container(path: impl AsRef<Path>, value: &Container) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_container_bytes(value)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_container_bytes(&bytes)
}

pub fn read_container_bytes(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(0, "missing container magic"));
    }
    if bytes.len() < PRELUDE {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "truncated prelude: expected {PRELUDE} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = PRELUDE + header_len;
    if bytes.len() < header_end {
        return Err(Error::format(
            PRELUDE as u64,
            format!(
                "truncated header: expected {header_len} bytes, found {}",
                bytes.len() - PRELUDE
            ),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[PRELUDE..header_end])
        .map_err(|e| Error::format(PRELUDE as u64, format!("bad header: {e}")))?;

    let elements: Vec<usize> = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product())
        .collect();
    let expected = elements.iter().sum::<usize>() * 8;
    let actual = bytes.len() - header_end;
    if actual != expected {
        let what = if actual < expected {
            "truncated payload"
        } else {
            "trailing bytes after payload"
        };
        return Err(Error::format(
            header_end as u64,
            format!("{what}: header declares {expected} payload bytes, found {actual}"),
        ));
    }
    let mut at = header_end;
    let mut values = Vec::with_capacity(elements.len());
    for &n in &elements {
        let v: Vec<f64> = bytes[at..at + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push((at, v));
        at += n * 8;
    }

    let bad = |msg: String| Error::format(PRELUDE as u64, msg);
    match header.kind {
        Kind::Dataset => {
            let [(_, fe), (label_at, lv)]: [(usize, Vec<f64>); 2] = values
                .try_into()
                .map_err(|_| bad("a dataset holds exactly features and labels".into()))?;
            let (fs, ls) = (&header.tensors[0], &header.tensors[1]);
            if !matches!(fs.role, Role::Features) || !matches!(ls.role, Role::Labels) {
                return Err(bad("dataset tensors must be features then labels".into()));
            }
            let classes = header
                .classes
                .ok_or_else(|| bad("dataset header lacks classes".into()))?;
            let mut labels = Vec::with_capacity(lv.len());
            for (i, &l) in lv.iter().enumerate() {
                if l.fract() != 0.0 || l < 0.0 || l >= classes as f64 {
                    return Err(Error::format(
                        (label_at + i * 8) as u64,
                        format!("label {l} is not a class id below {classes}"),
                    ));
                }
                labels.push(l as usize);
            }
            let features = Tensor::new(fs.shape.clone(), fe).map_err(|e| bad(e.to_string()))?;
            let d = Dataset::new(features, labels, classes, header.name)
                .map_err(|e| bad(e.to_string()))?;
            Ok(Container::Dataset(d))
        }
        Kind::Parameters => {
            let count = header
                .layers
                .ok_or_else(|| bad("parameter header lacks a layer count".into()))?;
            let mut layers = vec![LayerParams::default(); count];
            let mut last = 0;
            for (entry, (_, v)) in header.tensors.into_iter().zip(values) {
                let layer = entry
                    .layer
                    .ok_or_else(|| bad(format!("tensor {} lacks a layer", entry.name)))?;
                if layer >= count || layer < last {
                    return Err(bad(format!(
                        "tensor {} has layer {layer} out of order",
                        entry.name
                    )));
                }
                last = layer;
                let value = Tensor::new(entry.shape, v).map_err(|e| bad(e.to_string()))?;
                let t = NamedTensor {
                    name: entry.name,
                    value,
                };
                match entry.role {
                    Role::Trainable if layers[layer].buffers.is_empty() => {
                        layers[layer].trainable.push(t)
                    }
                    Role::Buffer => layers[layer].buffers.push(t),
                    _ => return Err(bad(format!("tensor {} has an unexpected role", t.name))),
                }
            }
            Ok(Container::Parameters(Parameters::from_layers(layers)))
        }
    }
}
