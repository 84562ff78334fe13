//! On-disk interchange contract: JSON manifest + "SPRW" weight blob.
//!
//! Manifest objects serialize with lexicographically sorted keys and no
//! insignificant whitespace. The blob layout is `SPRW`, a little-endian u32
//! version, then f32 little-endian tensor data concatenated in manifest
//! (sorted-key) order at the declared byte offsets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{shape_check, Attrs, Dtype, ModelGraph, Node, Op, Tensor, TensorSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPRW";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    inputs: Vec<ManifestInput>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
    name: String,
    nodes: Vec<ManifestNode>,
    outputs: Vec<String>,
    tensors: BTreeMap<String, ManifestTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestInput {
    dtype: Dtype,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestNode {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attrs: Attrs,
    id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<String>,
    op: Op,
    outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    weights: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestTensor {
    dtype: Dtype,
    offset: u64,
    shape: Vec<usize>,
}

/// Parses and validates a model from manifest + weight blob bytes.
pub fn load_model(manifest_bytes: &[u8], weights_bytes: &[u8]) -> Result<ModelGraph> {
    let manifest: Manifest = serde_json::from_slice(manifest_bytes)
        .map_err(|e| Error::MalformedManifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(manifest.format_version));
    }
    if weights_bytes.len() < HEADER_LEN || &weights_bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(weights_bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }

    let mut tensors = BTreeMap::new();
    let mut ranges: Vec<(usize, usize, &str)> = Vec::new();
    for (key, entry) in &manifest.tensors {
        if entry.shape.is_empty() || entry.shape.contains(&0) {
            return Err(Error::MalformedManifest(format!(
                "tensor `{key}`: shape must be non-empty with every dimension >= 1"
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let offset = entry.offset as usize;
        let len = numel * 4;
        if offset < HEADER_LEN || offset + len > weights_bytes.len() {
            return Err(Error::MalformedManifest(format!(
                "tensor `{key}`: byte range {offset}..{} outside blob",
                offset + len
            )));
        }
        ranges.push((offset, offset + len, key));
        let data: Vec<f32> = weights_bytes[offset..offset + len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.insert(key.clone(), Tensor::new(entry.shape.clone(), data));
    }
    ranges.sort();
    for pair in ranges.windows(2) {
        if pair[0].1 > pair[1].0 {
            return Err(Error::MalformedManifest(format!(
                "tensors `{}` and `{}` overlap in the blob",
                pair[0].2, pair[1].2
            )));
        }
    }

    let graph = ModelGraph {
        name: manifest.name,
        nodes: manifest
            .nodes
            .into_iter()
            .map(|n| Node {
                id: n.id,
                op: n.op,
                inputs: n.inputs,
                outputs: n.outputs,
                attrs: n.attrs,
                weights: n.weights,
            })
            .collect(),
        inputs: manifest
            .inputs
            .into_iter()
            .map(|i| TensorSpec {
                name: i.name,
                dtype: i.dtype,
                shape: i.shape,
            })
            .collect(),
        outputs: manifest.outputs,
        tensors,
        metadata: manifest.metadata,
    };
    graph.validate()?;
    shape_check(&graph)?;
    Ok(graph)
}

/// Deterministic serialization; two structurally identical graphs produce
/// byte-identical manifests and blobs.
pub fn save_model(g: &ModelGraph) -> (Vec<u8>, Vec<u8>) {
    let mut blob = Vec::with_capacity(
        HEADER_LEN + g.tensors.values().map(|t| t.numel() * 4).sum::<usize>(),
    );
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

    let mut tensors = BTreeMap::new();
    for (key, tensor) in &g.tensors {
        let offset = blob.len() as u64;
        for v in &tensor.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.insert(
            key.clone(),
            ManifestTensor {
                dtype: Dtype::F32,
                offset,
                shape: tensor.shape.clone(),
            },
        );
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        inputs: g
            .inputs
            .iter()
            .map(|i| ManifestInput {
                dtype: i.dtype,
                name: i.name.clone(),
                shape: i.shape.clone(),
            })
            .collect(),
        metadata: g.metadata.clone(),
        name: g.name.clone(),
        nodes: g
            .nodes
            .iter()
            .map(|n| ManifestNode {
                attrs: n.attrs.clone(),
                id: n.id.clone(),
                inputs: n.inputs.clone(),
                op: n.op,
                outputs: n.outputs.clone(),
                weights: n.weights.clone(),
            })
            .collect(),
        outputs: g.outputs.clone(),
        tensors,
    };
    // serde_json maps are BTreeMap-backed, so routing through Value sorts
    // every object's keys lexicographically
    let value = serde_json::to_value(&manifest).expect("manifest is serializable");
    let manifest_bytes = serde_json::to_string(&value)
        .expect("manifest is serializable")
        .into_bytes();
    (manifest_bytes, blob)
}
