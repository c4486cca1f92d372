//! Model persistence.
//!
//! Everything on disk goes through one little-endian container: the magic
//! bytes `SDPC`, a `u32` format version, a length-prefixed UTF-8 block of
//! `key=value` lines, then a sequence of raw tensors, each written as
//! `rank: u32`, `dims: u32[rank]`, `payload: f32[product(dims)]`. Tensor
//! names and their order live in the `tensors` key of the text block, so a
//! load followed by a save reproduces the file byte for byte.

use crate::error::{Result, SdpcError};
use crate::model::{ConvDictionary, LayerConfig, NetworkConfig};
use ndarray::{Array1, Array2, Array3, Array4};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SDPC";
const FORMAT_VERSION: u32 = 1;

/// A named tensor inside a container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_array1(name: &str, a: &Array1<f32>) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![a.len()],
            data: a.to_vec(),
        }
    }

    pub fn from_array2(name: &str, a: &Array2<f32>) -> Self {
        Self {
            name: name.to_string(),
            dims: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn from_array3(name: &str, a: &Array3<f32>) -> Self {
        Self {
            name: name.to_string(),
            dims: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn from_array4(name: &str, a: &Array4<f32>) -> Self {
        Self {
            name: name.to_string(),
            dims: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array1(&self) -> Result<Array1<f32>> {
        self.expect_rank(1)?;
        Ok(Array1::from_vec(self.data.clone()))
    }

    pub fn to_array2(&self) -> Result<Array2<f32>> {
        self.expect_rank(2)?;
        Array2::from_shape_vec((self.dims[0], self.dims[1]), self.data.clone())
            .map_err(|e| SdpcError::Format {
                path: self.name.clone(),
                detail: e.to_string(),
            })
    }

    pub fn to_array3(&self) -> Result<Array3<f32>> {
        self.expect_rank(3)?;
        Array3::from_shape_vec((self.dims[0], self.dims[1], self.dims[2]), self.data.clone())
            .map_err(|e| SdpcError::Format {
                path: self.name.clone(),
                detail: e.to_string(),
            })
    }

    pub fn to_array4(&self) -> Result<Array4<f32>> {
        self.expect_rank(4)?;
        Array4::from_shape_vec(
            (self.dims[0], self.dims[1], self.dims[2], self.dims[3]),
            self.data.clone(),
        )
        .map_err(|e| SdpcError::Format {
            path: self.name.clone(),
            detail: e.to_string(),
        })
    }

    fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.dims.len() != rank {
            return Err(SdpcError::Format {
                path: self.name.clone(),
                detail: format!("tensor has rank {}, expected {rank}", self.dims.len()),
            });
        }
        Ok(())
    }
}

/// Key=value metadata plus an ordered list of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl TensorContainer {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| SdpcError::Format {
                path: "<container>".into(),
                detail: format!("missing key '{key}'"),
            })
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.parse::<T>().map_err(|_| SdpcError::Format {
            path: "<container>".into(),
            detail: format!("key '{key}' does not parse"),
        })
    }

    pub fn push_tensor(&mut self, tensor: NamedTensor) {
        self.tensors.push(tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| SdpcError::Format {
                path: "<container>".into(),
                detail: format!("missing tensor '{name}'"),
            })
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.tensors.iter().any(|t| t.name == name)
    }

    /// Serializes to the container byte format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = String::new();
        let names: Vec<&str> = self.tensors.iter().map(|t| t.name.as_str()).collect();
        let mut lines: Vec<(String, String)> = self
            .meta
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        lines.push(("tensors".to_string(), names.join(",")));
        lines.sort();
        for (k, v) in lines {
            text.push_str(&k);
            text.push('=');
            text.push_str(&v);
            text.push('\n');
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let fail = |detail: String| SdpcError::Format {
            path: origin.to_string(),
            detail,
        };
        let mut cursor = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cursor
            .read_exact(&mut magic)
            .map_err(|_| fail("file shorter than the magic header".into()))?;
        if &magic != MAGIC {
            return Err(fail("bad magic bytes".into()));
        }
        let version = read_u32(&mut cursor).map_err(|_| fail("missing version".into()))?;
        if version != FORMAT_VERSION {
            return Err(fail(format!("unsupported format version {version}")));
        }
        let text_len = read_u32(&mut cursor).map_err(|_| fail("missing text length".into()))? as usize;
        let mut text_bytes = vec![0u8; text_len];
        cursor
            .read_exact(&mut text_bytes)
            .map_err(|_| fail("truncated config block".into()))?;
        let text = String::from_utf8(text_bytes).map_err(|_| fail("config block is not UTF-8".into()))?;

        let mut meta = BTreeMap::new();
        let mut names: Vec<String> = Vec::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("config line without '=': {line}")))?;
            if k == "tensors" {
                names = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(str::to_string).collect()
                };
            } else {
                meta.insert(k.to_string(), v.to_string());
            }
        }

        let mut tensors = Vec::with_capacity(names.len());
        for name in names {
            let rank = read_u32(&mut cursor).map_err(|_| fail(format!("truncated tensor '{name}'")))? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut cursor).map_err(|_| fail(format!("truncated dims of '{name}'")))? as usize);
            }
            let count: usize = dims.iter().product();
            let mut data = vec![0f32; count];
            let mut buf = [0u8; 4];
            for slot in data.iter_mut() {
                cursor
                    .read_exact(&mut buf)
                    .map_err(|_| fail(format!("truncated payload of '{name}'")))?;
                *slot = f32::from_le_bytes(buf);
            }
            tensors.push(NamedTensor { name, dims, data });
        }
        Ok(Self { meta, tensors })
    }

    /// Writes atomically: to a sibling temp file first, then a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn read_u32(cursor: &mut std::io::Cursor<&[u8]>) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    cursor.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Stores the network architecture, its dictionaries and the optimizer
/// momentum buffers into a container.
pub fn write_network(
    container: &mut TensorContainer,
    net: &NetworkConfig,
    momentum: Option<&[Array4<f32>]>,
) {
    container.set("net.layers", net.num_layers());
    container.set("net.k_fb", net.k_fb);
    container.set("net.t_stab", net.t_stab);
    container.set("net.max_iters", net.max_iters);
    for (i, layer) in net.layers.iter().enumerate() {
        let idx = i + 1;
        container.set(&format!("net.l{idx}.lambda"), layer.lambda);
        container.set(&format!("net.l{idx}.stride"), layer.dictionary.stride);
        if let Some(eta) = layer.eta_c {
            container.set(&format!("net.l{idx}.eta_c"), eta);
        }
        container.push_tensor(NamedTensor::from_array4(
            &format!("dict.{idx}"),
            &layer.dictionary.atoms,
        ));
    }
    if let Some(bufs) = momentum {
        for (i, buf) in bufs.iter().enumerate() {
            container.push_tensor(NamedTensor::from_array4(&format!("momentum.{}", i + 1), buf));
        }
    }
}

/// Restores a network (and momentum buffers, when present) from a container.
pub fn read_network(container: &TensorContainer) -> Result<(NetworkConfig, Option<Vec<Array4<f32>>>)> {
    let num_layers: usize = container.get_parsed("net.layers")?;
    let k_fb: f32 = container.get_parsed("net.k_fb")?;
    let t_stab: f32 = container.get_parsed("net.t_stab")?;
    let max_iters: usize = container.get_parsed("net.max_iters")?;

    let mut layers = Vec::with_capacity(num_layers);
    for idx in 1..=num_layers {
        let lambda: f32 = container.get_parsed(&format!("net.l{idx}.lambda"))?;
        let stride: usize = container.get_parsed(&format!("net.l{idx}.stride"))?;
        let atoms = container.tensor(&format!("dict.{idx}"))?.to_array4()?;
        let dict = ConvDictionary::new(atoms, stride)?;
        let mut layer = LayerConfig::new(dict, lambda)?;
        if let Ok(eta) = container.get_parsed::<f32>(&format!("net.l{idx}.eta_c")) {
            layer.eta_c = Some(eta);
        }
        layers.push(layer);
    }
    let net = NetworkConfig::new(layers, k_fb, t_stab, max_iters)?;

    let momentum = if container.has_tensor("momentum.1") {
        let mut bufs = Vec::with_capacity(num_layers);
        for idx in 1..=num_layers {
            bufs.push(container.tensor(&format!("momentum.{idx}"))?.to_array4()?);
        }
        Some(bufs)
    } else {
        None
    };
    Ok((net, momentum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn container_roundtrip_is_byte_identical() {
        let mut c = TensorContainer::default();
        c.set("epoch", 7);
        c.set("seed", 42u64);
        c.set("note", "free text with = signs? no, but spaces yes");
        c.push_tensor(NamedTensor {
            name: "a".into(),
            dims: vec![2, 3],
            data: vec![1.0, -2.5, 0.0, f32::MIN_POSITIVE, 3.25e7, -0.125],
        });
        c.push_tensor(NamedTensor {
            name: "b".into(),
            dims: vec![4],
            data: vec![0.1, 0.2, 0.3, 0.4],
        });
        let bytes = c.to_bytes();
        let reloaded = TensorContainer::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(reloaded.to_bytes(), bytes);
        assert_eq!(reloaded, c);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let mut c = TensorContainer::default();
        c.push_tensor(NamedTensor {
            name: "t".into(),
            dims: vec![3],
            data: vec![1.0, 2.0, 3.0],
        });
        let mut bytes = c.to_bytes();
        bytes.truncate(bytes.len() - 2);
        match TensorContainer::from_bytes(&bytes, "mem") {
            Err(SdpcError::Format { detail, .. }) => assert!(detail.contains("truncated")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = TensorContainer::from_bytes(b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00", "mem");
        assert!(err.is_err());
    }

    #[test]
    fn network_roundtrip_preserves_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let d1 = ConvDictionary::random(4, 1, 3, 2, &mut rng).unwrap();
        let d2 = ConvDictionary::random(6, 4, 3, 1, &mut rng).unwrap();
        let mut l1 = LayerConfig::new(d1, 0.4).unwrap();
        l1.eta_c = Some(0.37);
        let l2 = LayerConfig::new(d2, 1.2).unwrap();
        let net = NetworkConfig::new(vec![l1, l2], 1.0, 5e-3, 500).unwrap();
        let momentum: Vec<Array4<f32>> = net
            .layers
            .iter()
            .map(|l| Array4::from_elem(l.dictionary.atoms.dim(), 0.01f32))
            .collect();

        let mut c = TensorContainer::default();
        write_network(&mut c, &net, Some(&momentum));
        let bytes = c.to_bytes();
        let c2 = TensorContainer::from_bytes(&bytes, "mem").unwrap();
        let (net2, momentum2) = read_network(&c2).unwrap();

        assert_eq!(net2.num_layers(), 2);
        assert_eq!(net2.k_fb, net.k_fb);
        assert_eq!(net2.t_stab, net.t_stab);
        assert_eq!(net2.max_iters, net.max_iters);
        assert_eq!(net2.layers[0].eta_c, Some(0.37));
        assert_eq!(net2.layers[0].dictionary.atoms, net.layers[0].dictionary.atoms);
        assert_eq!(net2.layers[1].dictionary.stride, 1);
        assert_eq!(momentum2.unwrap()[1], momentum[1]);
    }
}
