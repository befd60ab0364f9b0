//! Binary checkpoint format, version 1. All integers little-endian.
//!
//! ```text
//! magic        8 bytes  "SIMPRUNE"
//! version      u32      1
//! config_hash  u64
//! widths       u32 count, then u32 per width
//! network      tensor count u32, then per tensor:
//!                name (u16 length + UTF-8), rank u8, u32 per dim, f32 data
//!                order: layer{k}.weight, layer{k}.bias for k = 0..
//! zero mask    u32 layer count, then per layer: u64 bit count and
//!                ceil(bits / 8) bytes, LSB-first, row-major positions
//! optimizer    lr, beta1, beta2, epsilon as f32; t as u64; tensor block as
//!                above with adam.m.* then adam.v.* names
//! rng state    data seed u64, epoch u64, offset u64, batch size u32
//! checksum     u64 CRC-64/XZ of every preceding byte
//! ```
//!
//! The checksum is verified before anything is decoded, so a corrupt file is
//! never partially loaded.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use simprune::data::CursorState;
use simprune::net::DenseLayer;
use simprune::{Adam, AdamConfig, Architecture, Gradients, Network, ZeroPositionSet};
use thiserror::Error;

use crate::checksum;
use crate::error::HarnessError;

pub const MAGIC: &[u8; 8] = b"SIMPRUNE";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("unexpected end of data")]
    Truncated,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

type Result<T, E = CheckpointError> = std::result::Result<T, E>;

/// Everything needed to resume or inspect a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub model: Network,
    pub mask: ZeroPositionSet,
    pub optimizer: Adam,
    pub cursor: CursorState,
    pub batch_size: usize,
}

impl Checkpoint {
    /// Bitwise equality of every stored field.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.encode() == other.encode()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.config_hash);
        let arch = self.model.architecture();
        w.u32(arch.widths().len() as u32);
        for &width in arch.widths() {
            w.u32(width as u32);
        }

        let mut tensors = Vec::new();
        for (k, layer) in self.model.layers().iter().enumerate() {
            tensors.push(Tensor::matrix(format!("layer{k}.weight"), &layer.weights));
            tensors.push(Tensor::vector(format!("layer{k}.bias"), &layer.bias));
        }
        w.tensors(&tensors);

        w.u32(self.mask.num_layers() as u32);
        for k in 0..self.mask.num_layers() {
            let bits = self.mask.layer_mask(k);
            w.u64(bits.len() as u64);
            let mut packed = vec![0u8; bits.len().div_ceil(8)];
            for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
                packed[i / 8] |= 1 << (i % 8);
            }
            w.bytes(&packed);
        }

        let c = self.optimizer.config;
        for v in [c.lr, c.beta1, c.beta2, c.epsilon] {
            w.f32(v);
        }
        w.u64(self.optimizer.t);
        let mut moments = Vec::new();
        for (tag, g) in [("m", &self.optimizer.m), ("v", &self.optimizer.v)] {
            for k in 0..g.weights.len() {
                moments.push(Tensor::matrix(format!("adam.{tag}.layer{k}.weight"), &g.weights[k]));
                moments.push(Tensor::vector(format!("adam.{tag}.layer{k}.bias"), &g.biases[k]));
            }
        }
        w.tensors(&moments);

        w.u64(self.cursor.seed);
        w.u64(self.cursor.epoch);
        w.u64(self.cursor.offset as u64);
        w.u32(self.batch_size as u32);

        let sum = checksum(&w.buf);
        w.u64(sum);
        w.buf
    }

    /// Decodes a checkpoint; when `expected` is given the stored architecture
    /// must match it.
    pub fn decode(bytes: &[u8], expected: Option<&Architecture>) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < MAGIC.len() + 4 + 8 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let computed = checksum(body);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed });
        }

        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let config_hash = r.u64()?;
        let n_widths = r.u32()? as usize;
        let widths = (0..n_widths)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let arch = Architecture::new(widths)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if let Some(expected) = expected {
            if &arch != expected {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "checkpoint holds architecture {arch}, expected {expected}"
                )));
            }
        }
        let shapes: Vec<(usize, usize)> = arch.weight_shapes().collect();

        let mut layers = Vec::with_capacity(shapes.len());
        let tensors = r.tensors()?;
        check_tensor_block(&tensors, &shapes, "layer")?;
        let mut it = tensors.into_iter();
        for _ in &shapes {
            let weights = it.next().unwrap().into_matrix()?;
            let bias = it.next().unwrap().into_vector()?;
            layers.push(DenseLayer { weights, bias });
        }
        let model = Network::from_layers(layers)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;

        let n_masks = r.u32()? as usize;
        if n_masks != shapes.len() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "{n_masks} mask layers for {} weight matrices",
                shapes.len()
            )));
        }
        let mut masks = Vec::with_capacity(n_masks);
        for &(o, i) in &shapes {
            let bits = r.u64()? as usize;
            if bits != o * i {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "mask of {bits} bits for a {o}x{i} layer"
                )));
            }
            let packed = r.take(bits.div_ceil(8))?;
            masks.push((0..bits).map(|j| packed[j / 8] >> (j % 8) & 1 == 1).collect());
        }
        let mask = ZeroPositionSet::from_masks(shapes.clone(), masks)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;

        let config = AdamConfig {
            lr: r.f32()?,
            beta1: r.f32()?,
            beta2: r.f32()?,
            epsilon: r.f32()?,
        };
        let t = r.u64()?;
        let moments = r.tensors()?;
        if moments.len() != 4 * shapes.len() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "{} optimizer tensors for {} layers",
                moments.len(),
                shapes.len()
            )));
        }
        let (m_block, v_block) = moments.split_at(2 * shapes.len());
        check_tensor_block(m_block, &shapes, "adam.m.layer")?;
        check_tensor_block(v_block, &shapes, "adam.v.layer")?;
        let to_grads = |block: &[Tensor]| -> Result<Gradients<f32>> {
            let mut g = Gradients { weights: Vec::new(), biases: Vec::new() };
            for pair in block.chunks(2) {
                g.weights.push(pair[0].clone().into_matrix()?);
                g.biases.push(pair[1].clone().into_vector()?);
            }
            Ok(g)
        };
        let optimizer = Adam {
            config,
            m: to_grads(m_block)?,
            v: to_grads(v_block)?,
            t,
        };

        let cursor = CursorState {
            seed: r.u64()?,
            epoch: r.u64()?,
            offset: r.u64()? as usize,
        };
        let batch_size = r.u32()? as usize;
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Self {
            config_hash,
            model,
            mask,
            optimizer,
            cursor,
            batch_size,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
        }
        // Write-then-rename so readers never observe a half-written file.
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.encode()).map_err(HarnessError::io(&tmp))?;
        fs::rename(&tmp, path).map_err(HarnessError::io(path))
    }

    pub fn read(path: &Path, expected: Option<&Architecture>) -> Result<Self, HarnessError> {
        let bytes = fs::read(path).map_err(HarnessError::io(path))?;
        Self::decode(&bytes, expected).map_err(|source| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn check_tensor_block(tensors: &[Tensor], shapes: &[(usize, usize)], prefix: &str) -> Result<()> {
    if tensors.len() != 2 * shapes.len() {
        return Err(CheckpointError::ShapeMismatch(format!(
            "{} tensors for {} layers",
            tensors.len(),
            shapes.len()
        )));
    }
    for (k, &(o, i)) in shapes.iter().enumerate() {
        let (w, b) = (&tensors[2 * k], &tensors[2 * k + 1]);
        let expect_w = format!("{prefix}{k}.weight");
        let expect_b = format!("{prefix}{k}.bias");
        if w.name != expect_w || b.name != expect_b {
            return Err(CheckpointError::Malformed(format!(
                "expected tensors {expect_w}/{expect_b}, found {}/{}",
                w.name, b.name
            )));
        }
        if w.dims != [o, i] || b.dims != [o] {
            return Err(CheckpointError::ShapeMismatch(format!(
                "{} is {:?}, {} is {:?}; architecture needs [{o}, {i}] and [{o}]",
                w.name, w.dims, b.name, b.dims
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Tensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    fn matrix(name: String, m: &Array2<f32>) -> Self {
        Self {
            name,
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    fn vector(name: String, v: &Array1<f32>) -> Self {
        Self {
            name,
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }

    fn into_matrix(self) -> Result<Array2<f32>> {
        match self.dims[..] {
            [r, c] => Array2::from_shape_vec((r, c), self.data)
                .map_err(|e| CheckpointError::Malformed(e.to_string())),
            _ => Err(CheckpointError::ShapeMismatch(format!("{} is not a matrix", self.name))),
        }
    }

    fn into_vector(self) -> Result<Array1<f32>> {
        match self.dims[..] {
            [_] => Ok(Array1::from_vec(self.data)),
            _ => Err(CheckpointError::ShapeMismatch(format!("{} is not a vector", self.name))),
        }
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn tensors(&mut self, tensors: &[Tensor]) {
        self.u32(tensors.len() as u32);
        for t in tensors {
            self.bytes(&(t.name.len() as u16).to_le_bytes());
            self.bytes(t.name.as_bytes());
            self.buf.push(t.dims.len() as u8);
            for &d in &t.dims {
                self.u32(d as u32);
            }
            for &v in &t.data {
                self.f32(v);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn tensors(&mut self) -> Result<Vec<Tensor>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = self.u16()? as usize;
            let name = String::from_utf8(self.take(len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
            let rank = self.u8()? as usize;
            let dims = (0..rank)
                .map(|_| self.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push(Tensor { name, dims, data });
        }
        Ok(out)
    }
}
