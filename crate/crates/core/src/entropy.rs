//! Canonical Huffman coding of quantized layers.
//!
//! Code lengths come from the usual greedy merge; codes are then assigned
//! canonically in `(length, symbol)` order so that a table is fully described
//! by its lengths. Payload bits are packed least-significant bit first within
//! each byte, and each code is emitted starting from its most significant bit.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::pruning::CsrStructure;
use crate::quantization::{Codebook, QuantizedLayer};
use crate::tensor::ComplexScalar;
use crate::wire::{put_f32, put_u16, put_u64, Reader};
use crate::{Error, Result};

/// Longest code the decoder accepts.
pub const MAX_CODE_LEN: u8 = 64;

/// Largest symbol value a serialized table can hold.
pub const MAX_TABLE_SYMBOL: u32 = u16::MAX as u32;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymbolHistogram {
    counts: BTreeMap<u32, u64>,
}

impl SymbolHistogram {
    pub fn from_symbols(symbols: &[u32]) -> Self {
        let mut counts = BTreeMap::new();
        for &s in symbols {
            *counts.entry(s).or_insert(0) += 1;
        }
        SymbolHistogram { counts }
    }

    /// Builds from explicit counts; zero counts are dropped.
    pub fn from_counts(counts: impl IntoIterator<Item = (u32, u64)>) -> Self {
        SymbolHistogram {
            counts: counts.into_iter().filter(|&(_, c)| c > 0).collect(),
        }
    }

    pub fn counts(&self) -> &BTreeMap<u32, u64> {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Empirical entropy in bits per symbol.
    pub fn entropy_bits(&self) -> f64 {
        let n = self.total() as f64;
        self.counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    }
}

/// Code lengths per symbol plus the canonical codes derived from them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HuffmanCodeTable {
    lengths: BTreeMap<u32, u8>,
    /// symbol -> (code, length)
    codes: HashMap<u32, (u64, u8)>,
    /// symbols in canonical (length, symbol) order
    canonical: Vec<u32>,
    /// per length L: (first code, index of first symbol in `canonical`, count)
    by_length: Vec<(u64, usize, usize)>,
}

impl HuffmanCodeTable {
    /// Builds the canonical table from code lengths, checking that they form
    /// a complete prefix code.
    pub fn from_lengths(lengths: BTreeMap<u32, u8>) -> Result<Self> {
        if lengths.values().any(|&l| l == 0 || l > MAX_CODE_LEN) {
            return Err(Error::CorruptStream("code length outside 1..=64".into()));
        }
        if lengths.len() == 1 {
            if lengths.values().next() != Some(&1) {
                return Err(Error::CorruptStream(
                    "single-symbol code must have length 1".into(),
                ));
            }
        } else if !lengths.is_empty() {
            let kraft: u128 = lengths.values().map(|&l| 1u128 << (MAX_CODE_LEN - l)).sum();
            if kraft != 1u128 << MAX_CODE_LEN {
                return Err(Error::CorruptStream(
                    "code lengths violate Kraft equality".into(),
                ));
            }
        }
        let mut canonical: Vec<u32> = lengths.keys().copied().collect();
        canonical.sort_by_key(|s| (lengths[s], *s));
        let mut codes = HashMap::with_capacity(canonical.len());
        let mut by_length = vec![(0u64, 0usize, 0usize); MAX_CODE_LEN as usize + 1];
        let mut code = 0u64;
        let mut prev_len = 0u8;
        for (i, &s) in canonical.iter().enumerate() {
            let len = lengths[&s];
            if i > 0 {
                code += 1;
            }
            code <<= len - prev_len;
            prev_len = len;
            let slot = &mut by_length[len as usize];
            if slot.2 == 0 {
                *slot = (code, i, 0);
            }
            slot.2 += 1;
            codes.insert(s, (code, len));
        }
        Ok(HuffmanCodeTable {
            lengths,
            codes,
            canonical,
            by_length,
        })
    }

    pub fn lengths(&self) -> &BTreeMap<u32, u8> {
        &self.lengths
    }

    pub fn code(&self, symbol: u32) -> Option<(u64, u8)> {
        self.codes.get(&symbol).copied()
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Payload bits needed to code a histogram with this table.
    pub fn cost_bits(&self, hist: &SymbolHistogram) -> Option<u64> {
        hist.counts()
            .iter()
            .map(|(s, &c)| self.lengths.get(s).map(|&l| l as u64 * c))
            .sum()
    }

    /// `count u16 | (symbol u16, length u8) x count`, sorted by symbol.
    pub fn serialized_len(&self) -> usize {
        2 + 3 * self.lengths.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) -> Result<()> {
        let count = u16::try_from(self.lengths.len())
            .map_err(|_| Error::InvalidConfig("more than 65535 symbols in one table".into()))?;
        put_u16(out, count);
        for (&s, &l) in &self.lengths {
            let s = u16::try_from(s).map_err(|_| {
                Error::InvalidConfig(format!("symbol {s} does not fit a serialized table"))
            })?;
            put_u16(out, s);
            out.push(l);
        }
        Ok(())
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let count = r.u16()? as usize;
        let mut lengths = BTreeMap::new();
        let mut prev: Option<u32> = None;
        for _ in 0..count {
            let s = r.u16()? as u32;
            let l = r.u8()?;
            if prev.is_some_and(|p| p >= s) {
                return Err(Error::CorruptStream(
                    "table symbols not strictly increasing".into(),
                ));
            }
            prev = Some(s);
            lengths.insert(s, l);
        }
        Self::from_lengths(lengths)
    }
}

/// Optimal prefix-code lengths for a histogram. Merges always take the
/// lightest node, ties going to the node holding the smaller symbol.
pub fn build_table(hist: &SymbolHistogram) -> Result<HuffmanCodeTable> {
    if hist.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    if hist.len() == 1 {
        let s = *hist.counts().keys().next().unwrap();
        return HuffmanCodeTable::from_lengths(BTreeMap::from([(s, 1)]));
    }
    let symbols: Vec<u32> = hist.counts().keys().copied().collect();
    // node ids 0..n are leaves; merged nodes are appended
    let mut parent: Vec<usize> = vec![usize::MAX; symbols.len()];
    let mut heap: BinaryHeap<Reverse<(u64, u32, usize)>> = hist
        .counts()
        .iter()
        .enumerate()
        .map(|(i, (&s, &c))| Reverse((c, s, i)))
        .collect();
    while heap.len() > 1 {
        let Reverse((ca, sa, a)) = heap.pop().unwrap();
        let Reverse((cb, sb, b)) = heap.pop().unwrap();
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((ca + cb, sa.min(sb), id)));
    }
    let mut depth = vec![0u8; parent.len()];
    // parents always have larger ids than children, so walk downward
    for id in (0..parent.len()).rev() {
        if parent[id] != usize::MAX {
            depth[id] = depth[parent[id]] + 1;
        }
    }
    let lengths = symbols
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, depth[i]))
        .collect();
    HuffmanCodeTable::from_lengths(lengths)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedStream {
    pub table: HuffmanCodeTable,
    pub bit_count: u64,
    pub payload: Vec<u8>,
}

impl EncodedStream {
    pub fn serialized_len(&self) -> usize {
        self.table.serialized_len() + 8 + self.payload.len()
    }

    /// `table | bit_count u64 | payload`.
    pub fn write_to(&self, out: &mut Vec<u8>) -> Result<()> {
        self.table.write_to(out)?;
        put_u64(out, self.bit_count);
        out.extend_from_slice(&self.payload);
        Ok(())
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let table = HuffmanCodeTable::read_from(r)?;
        let bit_count = r.u64()?;
        let len = usize::try_from(bit_count.div_ceil(8))
            .map_err(|_| Error::CorruptStream("bit count too large".into()))?;
        let payload = r.take(len)?.to_vec();
        Ok(EncodedStream {
            table,
            bit_count,
            payload,
        })
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    fn put(&mut self, code: u64, len: u8) {
        for k in (0..len).rev() {
            let bit = (code >> k) & 1;
            let byte = (self.bits / 8) as usize;
            if byte == self.bytes.len() {
                self.bytes.push(0);
            }
            self.bytes[byte] |= (bit as u8) << (self.bits % 8);
            self.bits += 1;
        }
    }
}

pub fn encode(symbols: &[u32], table: &HuffmanCodeTable) -> Result<EncodedStream> {
    let mut w = BitWriter {
        bytes: Vec::new(),
        bits: 0,
    };
    for &s in symbols {
        let (code, len) = table.code(s).ok_or(Error::UnknownSymbol(s))?;
        w.put(code, len);
    }
    Ok(EncodedStream {
        table: table.clone(),
        bit_count: w.bits,
        payload: w.bytes,
    })
}

/// Builds a table from the symbols themselves and encodes them. An empty
/// input gives an empty table and a 0-bit stream.
pub fn encode_with_own_table(symbols: &[u32]) -> Result<EncodedStream> {
    if symbols.is_empty() {
        return Ok(EncodedStream::default());
    }
    let table = build_table(&SymbolHistogram::from_symbols(symbols))?;
    encode(symbols, &table)
}

pub fn decode(stream: &EncodedStream, expected_count: usize) -> Result<Vec<u32>> {
    if stream.payload.len() as u64 != stream.bit_count.div_ceil(8) {
        return Err(Error::CorruptStream(format!(
            "payload of {} bytes for {} bits",
            stream.payload.len(),
            stream.bit_count
        )));
    }
    let t = &stream.table;
    let mut out = Vec::with_capacity(expected_count);
    let mut pos = 0u64;
    while out.len() < expected_count {
        let mut code = 0u64;
        let mut len = 0u8;
        loop {
            if pos >= stream.bit_count {
                return Err(Error::CorruptStream(format!(
                    "bits exhausted after {} of {expected_count} symbols",
                    out.len()
                )));
            }
            let bit = (stream.payload[(pos / 8) as usize] >> (pos % 8)) & 1;
            pos += 1;
            code = (code << 1) | bit as u64;
            len += 1;
            let (first, start, count) = t.by_length[len as usize];
            if count > 0 && code >= first && code - first < count as u64 {
                out.push(t.canonical[start + (code - first) as usize]);
                break;
            }
            if len == MAX_CODE_LEN {
                return Err(Error::CorruptStream(
                    "no code matches the bit sequence".into(),
                ));
            }
        }
    }
    if pos != stream.bit_count {
        return Err(Error::CorruptStream(format!(
            "{} unused bits after {expected_count} symbols",
            stream.bit_count - pos
        )));
    }
    let pad = stream.bit_count % 8;
    if pad != 0 && stream.payload.last().is_some_and(|&b| b >> pad != 0) {
        return Err(Error::CorruptStream("non-zero padding bits".into()));
    }
    Ok(out)
}

/// How a quantized layer's weights are entropy coded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropyMode {
    /// Separate streams for the real and imaginary parts of each weight's
    /// centroid, each symbolized by rank among the distinct component values.
    #[default]
    SplitValues,
    /// One stream of codebook indices.
    Indices,
}

impl FromStr for EntropyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" | "split_values" => Ok(EntropyMode::SplitValues),
            "indices" => Ok(EntropyMode::Indices),
            _ => Err(Error::InvalidConfig(format!("unknown entropy mode {s:?}"))),
        }
    }
}

impl fmt::Display for EntropyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropyMode::SplitValues => "split",
            EntropyMode::Indices => "indices",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueStreams {
    Indices(EncodedStream),
    Split {
        real_dict: Vec<f32>,
        imag_dict: Vec<f32>,
        real: EncodedStream,
        imag: EncodedStream,
    },
}

impl ValueStreams {
    pub fn mode(&self) -> EntropyMode {
        match self {
            ValueStreams::Indices(_) => EntropyMode::Indices,
            ValueStreams::Split { .. } => EntropyMode::SplitValues,
        }
    }

    pub fn streams(&self) -> Vec<(&'static str, &EncodedStream)> {
        match self {
            ValueStreams::Indices(s) => vec![("indices", s)],
            ValueStreams::Split { real, imag, .. } => vec![("real", real), ("imag", imag)],
        }
    }

    pub fn serialized_len(&self) -> usize {
        match self {
            ValueStreams::Indices(s) => s.serialized_len(),
            ValueStreams::Split {
                real_dict,
                imag_dict,
                real,
                imag,
            } => {
                2 + 4 * real_dict.len()
                    + 2
                    + 4 * imag_dict.len()
                    + real.serialized_len()
                    + imag.serialized_len()
            }
        }
    }

    /// Indices mode: one stream. Split mode:
    /// `real dict (u16 count, f32 x count) | imag dict | real stream | imag stream`.
    pub fn write_to(&self, out: &mut Vec<u8>) -> Result<()> {
        match self {
            ValueStreams::Indices(s) => s.write_to(out),
            ValueStreams::Split {
                real_dict,
                imag_dict,
                real,
                imag,
            } => {
                for dict in [real_dict, imag_dict] {
                    let n = u16::try_from(dict.len())
                        .map_err(|_| Error::InvalidConfig("dictionary too large".into()))?;
                    put_u16(out, n);
                    for &v in dict {
                        put_f32(out, v);
                    }
                }
                real.write_to(out)?;
                imag.write_to(out)
            }
        }
    }

    pub(crate) fn read_from(r: &mut Reader<'_>, mode: EntropyMode) -> Result<Self> {
        match mode {
            EntropyMode::Indices => Ok(ValueStreams::Indices(EncodedStream::read_from(r)?)),
            EntropyMode::SplitValues => {
                let mut dicts = [Vec::new(), Vec::new()];
                for dict in dicts.iter_mut() {
                    let n = r.u16()? as usize;
                    for _ in 0..n {
                        dict.push(r.f32()?);
                    }
                }
                let [real_dict, imag_dict] = dicts;
                let real = EncodedStream::read_from(r)?;
                let imag = EncodedStream::read_from(r)?;
                Ok(ValueStreams::Split {
                    real_dict,
                    imag_dict,
                    real,
                    imag,
                })
            }
        }
    }
}

/// Entropy-coded form of one quantized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLayer {
    /// Huffman-coded column indices; `None` when any column index exceeds
    /// the serializable symbol range and the indices stay raw.
    pub col_idx: Option<EncodedStream>,
    pub values: ValueStreams,
}

/// Sorted distinct component values, compared by bit pattern.
fn distinct_sorted(values: impl Iterator<Item = f32>) -> Vec<f32> {
    let mut v: Vec<f32> = values.collect();
    v.sort_by(f32::total_cmp);
    v.dedup_by(|a, b| a.to_bits() == b.to_bits());
    v
}

fn rank_of(dict: &[f32], v: f32) -> u32 {
    dict.binary_search_by(|d| d.total_cmp(&v))
        .expect("value drawn from this dictionary") as u32
}

/// Huffman codes a quantized layer's column indices and its weights.
pub fn encode_quantized(q: &QuantizedLayer, mode: EntropyMode) -> Result<EncodedLayer> {
    q.validate()?;
    let col_idx = if q.structure.cols as u64 <= MAX_TABLE_SYMBOL as u64 {
        Some(encode_with_own_table(&q.structure.col_idx)?)
    } else {
        None
    };
    let values = match mode {
        EntropyMode::Indices => ValueStreams::Indices(encode_with_own_table(&q.indices)?),
        EntropyMode::SplitValues => {
            let cb = q.codebook.centroids();
            let used = || q.indices.iter().map(|&i| cb[i as usize]);
            let real_dict = distinct_sorted(used().map(|c| c.re));
            let imag_dict = distinct_sorted(used().map(|c| c.im));
            let re_syms: Vec<u32> = used().map(|c| rank_of(&real_dict, c.re)).collect();
            let im_syms: Vec<u32> = used().map(|c| rank_of(&imag_dict, c.im)).collect();
            ValueStreams::Split {
                real: encode_with_own_table(&re_syms)?,
                imag: encode_with_own_table(&im_syms)?,
                real_dict,
                imag_dict,
            }
        }
    };
    Ok(EncodedLayer { col_idx, values })
}

/// Recovers codebook indices from the coded weight streams.
///
/// Split mode maps each `(re, im)` pair back to the first codebook entry with
/// exactly those components.
pub fn decode_indices(values: &ValueStreams, codebook: &Codebook, nnz: usize) -> Result<Vec<u32>> {
    match values {
        ValueStreams::Indices(s) => decode(s, nnz),
        ValueStreams::Split {
            real_dict,
            imag_dict,
            real,
            imag,
        } => {
            let re = decode(real, nnz)?;
            let im = decode(imag, nnz)?;
            let lookup: HashMap<(u32, u32), u32> = codebook
                .centroids()
                .iter()
                .enumerate()
                .rev()
                .map(|(i, c)| (c.to_bits(), i as u32))
                .collect();
            re.iter()
                .zip(&im)
                .map(|(&r, &i)| {
                    let (Some(&vr), Some(&vi)) =
                        (real_dict.get(r as usize), imag_dict.get(i as usize))
                    else {
                        return Err(Error::CorruptStream(
                            "component rank outside dictionary".into(),
                        ));
                    };
                    lookup
                        .get(&ComplexScalar::new(vr, vi).to_bits())
                        .copied()
                        .ok_or_else(|| {
                            Error::CorruptStream(format!("({vr}, {vi}) is not a codebook entry"))
                        })
                })
                .collect()
        }
    }
}

/// Inverse of [`encode_quantized`] given the layer's row pointers and codebook.
pub fn decode_quantized(
    encoded: &EncodedLayer,
    rows: usize,
    cols: usize,
    row_ptr: Vec<u32>,
    codebook: Codebook,
    original_shape: Vec<usize>,
) -> Result<QuantizedLayer> {
    let nnz = *row_ptr
        .last()
        .ok_or_else(|| Error::CorruptStream("empty row_ptr".into()))? as usize;
    let col_idx = match &encoded.col_idx {
        Some(s) => decode(s, nnz)?,
        None => {
            return Err(Error::CorruptStream(
                "column indices were not entropy coded".into(),
            ))
        }
    };
    let indices = decode_indices(&encoded.values, &codebook, nnz)?;
    let q = QuantizedLayer {
        structure: CsrStructure {
            rows,
            cols,
            row_ptr,
            col_idx,
        },
        codebook,
        indices,
        original_shape,
    };
    q.validate()?;
    Ok(q)
}
