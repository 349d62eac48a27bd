//! Complex weight tensors and the CWT raw model format.
//!
//! CWT layout (little-endian, no padding):
//!
//! ```text
//! "CWT0" | version u32 (=1) | layer count u32 | reserved u32 (=0)
//! per layer: name len u16 | UTF-8 name | rank u8 | extents u32 x rank
//!            | (re f32, im f32) x n, row-major
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::wire::{put_f32, put_u16, put_u32, Reader};
use crate::{Error, Result};

pub const CWT_MAGIC: [u8; 4] = *b"CWT0";
pub const CWT_VERSION: u32 = 1;
pub const CWT_HEADER_LEN: usize = 16;

/// Bytes per stored complex weight (two f32 components).
pub const BYTES_PER_WEIGHT: u64 = 8;

/// A single complex weight with f32 components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComplexScalar {
    pub re: f32,
    pub im: f32,
}

impl ComplexScalar {
    pub const ZERO: ComplexScalar = ComplexScalar { re: 0.0, im: 0.0 };

    pub const fn new(re: f32, im: f32) -> Self {
        ComplexScalar { re, im }
    }

    pub fn modulus(self) -> f32 {
        self.re.hypot(self.im)
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    /// Raw bit patterns of both components, for bit-exact comparison.
    pub fn to_bits(self) -> (u32, u32) {
        (self.re.to_bits(), self.im.to_bits())
    }

    pub fn bit_eq(self, other: ComplexScalar) -> bool {
        self.to_bits() == other.to_bits()
    }

    /// Squared Euclidean distance in the plane, computed in f64.
    pub fn dist_sq(self, other: ComplexScalar) -> f64 {
        let dr = self.re as f64 - other.re as f64;
        let di = self.im as f64 - other.im as f64;
        dr * dr + di * di
    }
}

impl From<(f32, f32)> for ComplexScalar {
    fn from((re, im): (f32, f32)) -> Self {
        ComplexScalar { re, im }
    }
}

/// A named dense tensor of complex weights in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<ComplexScalar>,
}

impl ComplexTensor {
    pub fn new(
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<ComplexScalar>,
    ) -> Result<Self> {
        let name = name.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidTensor(format!(
                "layer {name:?}: shape {shape:?} must be non-empty with extents >= 1"
            )));
        }
        let n = element_count(&shape)
            .ok_or_else(|| Error::InvalidTensor(format!("layer {name:?}: shape overflows")))?;
        if n != values.len() {
            return Err(Error::InvalidTensor(format!(
                "layer {name:?}: shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteWeight { layer: name, index });
        }
        Ok(ComplexTensor {
            name,
            shape,
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[ComplexScalar] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bit_eq(&self, other: &ComplexTensor) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.bit_eq(*b))
    }
}

pub(crate) fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e))
}

/// An ordered collection of uniquely named layers.
///
/// `metadata` lives in memory only; the CWT format has no slot for it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawModel {
    layers: Vec<ComplexTensor>,
    pub metadata: BTreeMap<String, String>,
}

impl RawModel {
    pub fn new(layers: Vec<ComplexTensor>) -> Result<Self> {
        let mut seen = HashSet::new();
        for layer in &layers {
            if !seen.insert(layer.name()) {
                return Err(Error::DuplicateLayer(layer.name().to_owned()));
            }
        }
        Ok(RawModel {
            layers,
            metadata: BTreeMap::new(),
        })
    }

    pub fn layers(&self) -> &[ComplexTensor] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&ComplexTensor> {
        self.layers.iter().find(|l| l.name() == name)
    }

    pub fn push(&mut self, layer: ComplexTensor) -> Result<()> {
        if self.layer(layer.name()).is_some() {
            return Err(Error::DuplicateLayer(layer.name().to_owned()));
        }
        self.layers.push(layer);
        Ok(())
    }

    /// Layer-wise bit-exact equality (metadata excluded).
    pub fn bit_eq(&self, other: &RawModel) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.bit_eq(b))
    }

    pub fn weight_count(&self) -> u64 {
        self.layers.iter().map(|l| l.len() as u64).sum()
    }

    /// Size of the CWT file `to_cwt_bytes` would produce.
    pub fn cwt_len(&self) -> u64 {
        CWT_HEADER_LEN as u64
            + self
                .layers
                .iter()
                .map(|l| {
                    3 + l.name().len() as u64 + 4 * l.shape().len() as u64 + 8 * l.len() as u64
                })
                .sum::<u64>()
    }

    pub fn to_cwt_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(CWT_HEADER_LEN + self.weight_count() as usize * 8);
        out.extend_from_slice(&CWT_MAGIC);
        put_u32(&mut out, CWT_VERSION);
        put_u32(&mut out, len_u32(self.layers.len(), "layer count")?);
        put_u32(&mut out, 0);
        for layer in &self.layers {
            let name = layer.name().as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| {
                Error::InvalidTensor(format!(
                    "layer name {:?} longer than 65535 bytes",
                    layer.name()
                ))
            })?;
            let rank = u8::try_from(layer.shape().len()).map_err(|_| {
                Error::InvalidTensor(format!("layer {:?} has rank above 255", layer.name()))
            })?;
            put_u16(&mut out, name_len);
            out.extend_from_slice(name);
            out.push(rank);
            for &e in layer.shape() {
                put_u32(&mut out, len_u32(e, "extent")?);
            }
            for v in layer.values() {
                put_f32(&mut out, v.re);
                put_f32(&mut out, v.im);
            }
        }
        Ok(out)
    }

    pub fn from_cwt_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "CWT");
        let magic = r.magic()?;
        if magic != CWT_MAGIC {
            return Err(Error::MagicMismatch {
                expected: CWT_MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != CWT_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let count = r.u32()? as usize;
        let _reserved = r.u32()?;
        let mut layers = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::InvalidTensor(format!("layer name is not UTF-8: {e}")))?
                .to_owned();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = element_count(&shape)
                .ok_or_else(|| Error::InvalidTensor(format!("layer {name:?}: shape overflows")))?;
            let bytes = n
                .checked_mul(8)
                .ok_or_else(|| Error::InvalidTensor(format!("layer {name:?}: too large")))?;
            let raw = r.take(bytes)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| {
                    ComplexScalar::new(
                        f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                        f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
                    )
                })
                .collect();
            layers.push(ComplexTensor::new(name, shape, values)?);
        }
        if r.remaining() != 0 {
            return Err(Error::InvalidTensor(format!(
                "{} trailing bytes after last layer",
                r.remaining()
            )));
        }
        RawModel::new(layers)
    }
}

fn len_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidTensor(format!("{what} {v} exceeds u32")))
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<RawModel> {
    RawModel::from_cwt_bytes(&fs::read(path)?)
}

pub fn save_raw(model: &RawModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_cwt_bytes()?)?;
    Ok(())
}

/// Bytes occupied by the weights alone: 8 per complex weight, headers excluded.
pub fn total_raw_bytes(model: &RawModel) -> u64 {
    model.weight_count() * BYTES_PER_WEIGHT
}
