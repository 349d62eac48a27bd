//! The CCNZ container and the prune -> quantize -> Huffman pipeline.
//!
//! See `docs/FORMAT.md` for the byte layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::bitpack;
use crate::entropy::{self, EncodedLayer, EncodedStream, EntropyMode, ValueStreams};
use crate::pruning::{
    self, densify, matrixize, prune, CsrStructure, PruneConfig, PruneKey, SparseComplexMatrix,
};
use crate::quantization::{
    quantize_layer, Codebook, InitScheme, KMeansParams, KMeansReport, QuantizedLayer, MAX_CLUSTERS,
};
use crate::tensor::{ComplexScalar, ComplexTensor, RawModel};
use crate::wire::{put_f32, put_f64, put_u16, put_u32, put_u64, Reader};
use crate::{Error, Result};

pub const CCNZ_MAGIC: [u8; 4] = *b"CCNZ";
pub const CCNZ_VERSION: u16 = 1;
pub const FILE_HEADER_LEN: usize = 16;
pub const CONFIG_ECHO_LEN: usize = 34;
/// Bytes of a file not attributable to any layer record.
pub const FIXED_OVERHEAD: usize = FILE_HEADER_LEN + CONFIG_ECHO_LEN;

const SECTION_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub prune: bool,
    pub quantize: bool,
    pub huffman: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        prune: true,
        quantize: true,
        huffman: true,
    };
    pub const PRUNE_ONLY: Stages = Stages {
        prune: true,
        quantize: false,
        huffman: false,
    };
}

impl Default for Stages {
    fn default() -> Self {
        Stages::ALL
    }
}

/// Cluster counts: a default plus `glob=count` overrides, first match wins.
#[derive(Debug, Clone)]
pub struct ClusterSpec {
    pub default: usize,
    overrides: Vec<(glob::Pattern, usize)>,
}

impl PartialEq for ClusterSpec {
    fn eq(&self, other: &Self) -> bool {
        self.default == other.default
            && self.overrides.len() == other.overrides.len()
            && self
                .overrides
                .iter()
                .zip(&other.overrides)
                .all(|((p, m), (q, n))| p.as_str() == q.as_str() && m == n)
    }
}

impl ClusterSpec {
    pub fn uniform(m: usize) -> Self {
        ClusterSpec {
            default: m,
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, pattern: &str, m: usize) -> Result<Self> {
        let p = glob::Pattern::new(pattern)
            .map_err(|e| Error::InvalidConfig(format!("bad layer pattern {pattern:?}: {e}")))?;
        self.overrides.push((p, m));
        Ok(self)
    }

    /// Parses `"100"`, `"conv*=100,dense*=256"` or a mix such as
    /// `"64,conv*=100"`. A spec with only overrides keeps `fallback` as the
    /// default.
    pub fn parse(spec: &str, fallback: usize) -> Result<Self> {
        let mut out = ClusterSpec::uniform(fallback);
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let parse_count = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("bad cluster count {s:?}")))
            };
            match part.split_once('=') {
                Some((pat, m)) => out = out.with_override(pat.trim(), parse_count(m)?)?,
                None => out.default = parse_count(part)?,
            }
        }
        Ok(out)
    }

    pub fn clusters_for(&self, layer: &str) -> usize {
        self.overrides
            .iter()
            .find(|(p, _)| p.matches(layer))
            .map_or(self.default, |&(_, m)| m)
    }

    fn all_counts(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.default).chain(self.overrides.iter().map(|&(_, m)| m))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub prune: PruneConfig,
    /// Per-layer thresholds replacing the global one, keyed by exact name.
    pub threshold_overrides: BTreeMap<String, f64>,
    pub clusters: ClusterSpec,
    pub init: InitScheme,
    pub kmeans: KMeansParams,
    /// `None` disables entropy coding even when the Huffman stage is on.
    pub entropy_mode: Option<EntropyMode>,
    pub stages: Stages,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            prune: PruneConfig::identity(),
            threshold_overrides: BTreeMap::new(),
            clusters: ClusterSpec::uniform(256),
            init: InitScheme::default(),
            kmeans: KMeansParams::default(),
            entropy_mode: Some(EntropyMode::SplitValues),
            stages: Stages::ALL,
        }
    }
}

impl PipelineConfig {
    /// Pruning at threshold 0 and nothing else: decompresses bit-exactly.
    pub fn identity() -> Self {
        PipelineConfig {
            stages: Stages::PRUNE_ONLY,
            entropy_mode: None,
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.huffman && !self.stages.quantize {
            return Err(Error::InvalidConfig(
                "Huffman coding needs the quantization stage".into(),
            ));
        }
        if self.stages.quantize {
            if let Some(m) = self
                .clusters
                .all_counts()
                .find(|&m| m == 0 || m > MAX_CLUSTERS)
            {
                return Err(Error::InvalidConfig(format!(
                    "cluster count {m} outside 1..={MAX_CLUSTERS}"
                )));
            }
        }
        for (name, &t) in &self.threshold_overrides {
            PruneConfig::new(t, self.prune.key)
                .map_err(|e| Error::InvalidConfig(format!("threshold for {name:?}: {e}")))?;
        }
        if self.kmeans.rel_tol.is_nan() || self.kmeans.rel_tol < 0.0 {
            return Err(Error::InvalidConfig("rel_tol must be >= 0".into()));
        }
        Ok(())
    }

    /// Huffman stage on and an entropy mode chosen.
    pub fn huffman_mode(&self) -> Option<EntropyMode> {
        if self.stages.huffman {
            self.entropy_mode
        } else {
            None
        }
    }

    fn prune_config_for(&self, layer: &str) -> Result<PruneConfig> {
        if !self.stages.prune {
            return Ok(PruneConfig::identity());
        }
        match self.threshold_overrides.get(layer) {
            Some(&t) => PruneConfig::new(t, self.prune.key),
            None => Ok(self.prune),
        }
    }
}

/// Pipeline settings recorded in the file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfigEcho {
    pub stages: Stages,
    pub entropy_mode: Option<EntropyMode>,
    pub threshold: f64,
    pub prune_key: PruneKey,
    pub init: InitScheme,
    pub max_iters: u32,
    pub rel_tol: f64,
    pub default_clusters: u32,
}

impl ConfigEcho {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        ConfigEcho {
            stages: Stages {
                huffman: cfg.huffman_mode().is_some(),
                ..cfg.stages
            },
            entropy_mode: cfg.huffman_mode(),
            threshold: cfg.prune.threshold(),
            prune_key: cfg.prune.key,
            init: cfg.init,
            max_iters: cfg.kmeans.max_iters.min(u32::MAX as usize) as u32,
            rel_tol: cfg.kmeans.rel_tol,
            default_clusters: cfg.clusters.default.min(u32::MAX as usize) as u32,
        }
    }

    fn flags(&self) -> u16 {
        let mode = match self.entropy_mode {
            None => 0,
            Some(EntropyMode::SplitValues) => 1,
            Some(EntropyMode::Indices) => 2,
        };
        self.stages.prune as u16
            | (self.stages.quantize as u16) << 1
            | (self.stages.huffman as u16) << 2
            | mode << 3
    }

    fn write_body(&self, out: &mut Vec<u8>) {
        put_f64(out, self.threshold);
        out.push(self.prune_key.code());
        out.push(self.init.code());
        put_u64(out, self.init.seed());
        put_u32(out, self.max_iters);
        put_f64(out, self.rel_tol);
        put_u32(out, self.default_clusters);
    }

    fn read(flags: u16, r: &mut Reader<'_>) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptStream(format!("config echo: {m}"));
        let entropy_mode = match (flags >> 3) & 0b11 {
            0 => None,
            1 => Some(EntropyMode::SplitValues),
            2 => Some(EntropyMode::Indices),
            _ => return Err(corrupt("bad entropy mode")),
        };
        if flags >> 5 != 0 {
            return Err(corrupt("unknown header flags"));
        }
        let threshold = r.f64()?;
        let prune_key = PruneKey::from_code(r.u8()?).ok_or_else(|| corrupt("bad prune key"))?;
        let init_code = r.u8()?;
        let seed = r.u64()?;
        let init = InitScheme::from_code(init_code, seed).ok_or_else(|| corrupt("bad init"))?;
        Ok(ConfigEcho {
            stages: Stages {
                prune: flags & 1 != 0,
                quantize: flags & 2 != 0,
                huffman: flags & 4 != 0,
            },
            entropy_mode,
            threshold,
            prune_key,
            init,
            max_iters: r.u32()?,
            rel_tol: r.f64()?,
            default_clusters: r.u32()?,
        })
    }
}

/// How the values section of a layer is encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueEncoding {
    RawPairs,
    PackedIndices,
    HuffmanIndices,
    HuffmanSplit,
}

impl ValueEncoding {
    fn code(self) -> u8 {
        match self {
            ValueEncoding::RawPairs => 0,
            ValueEncoding::PackedIndices => 1,
            ValueEncoding::HuffmanIndices => 2,
            ValueEncoding::HuffmanSplit => 3,
        }
    }

    fn from_code(c: u8) -> Self {
        match c & 0b11 {
            0 => ValueEncoding::RawPairs,
            1 => ValueEncoding::PackedIndices,
            2 => ValueEncoding::HuffmanIndices,
            _ => ValueEncoding::HuffmanSplit,
        }
    }

    pub fn is_quantized(self) -> bool {
        self != ValueEncoding::RawPairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerFlags {
    /// All positions stored; row_ptr and col_idx are implied.
    pub full: bool,
    pub col_idx_huffman: bool,
    pub encoding: ValueEncoding,
}

impl LayerFlags {
    fn to_byte(self) -> u8 {
        self.full as u8 | (self.col_idx_huffman as u8) << 1 | self.encoding.code() << 2
    }

    fn from_byte(b: u8) -> Result<Self> {
        if b >> 4 != 0 {
            return Err(Error::CorruptStream(format!(
                "unknown layer flags {b:#04x}"
            )));
        }
        Ok(LayerFlags {
            full: b & 1 != 0,
            col_idx_huffman: b & 2 != 0,
            encoding: ValueEncoding::from_code(b >> 2),
        })
    }
}

/// Byte sizes of one serialized layer record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerAccounting {
    pub header: u64,
    pub row_ptr: u64,
    pub col_idx: u64,
    pub codebook: u64,
    pub values: u64,
}

impl LayerAccounting {
    /// Sparse structure: row offsets plus column indices.
    pub fn structure(&self) -> u64 {
        self.row_ptr + self.col_idx
    }

    /// Weight representation: codebook plus values or index streams.
    pub fn weights(&self) -> u64 {
        self.codebook + self.values
    }

    pub fn total(&self) -> u64 {
        self.header + self.structure() + self.weights()
    }
}

impl std::ops::AddAssign for LayerAccounting {
    fn add_assign(&mut self, o: Self) {
        self.header += o.header;
        self.row_ptr += o.row_ptr;
        self.col_idx += o.col_idx;
        self.codebook += o.codebook;
        self.values += o.values;
    }
}

/// One serialized layer: header fields plus the four raw sections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub flags: LayerFlags,
    pub row_ptr: Vec<u8>,
    pub col_idx: Vec<u8>,
    pub codebook: Vec<u8>,
    pub values: Vec<u8>,
}

impl LayerRecord {
    pub fn header_len(&self) -> usize {
        2 + self.name.len() + 1 + 4 * self.shape.len() + 12 + 1 + 8 * SECTION_COUNT
    }

    pub fn accounting(&self) -> LayerAccounting {
        LayerAccounting {
            header: self.header_len() as u64,
            row_ptr: self.row_ptr.len() as u64,
            col_idx: self.col_idx.len() as u64,
            codebook: self.codebook.len() as u64,
            values: self.values.len() as u64,
        }
    }

    fn sections(&self) -> [&Vec<u8>; SECTION_COUNT] {
        [&self.row_ptr, &self.col_idx, &self.codebook, &self.values]
    }

    fn write_to(&self, out: &mut Vec<u8>) -> Result<()> {
        let too_big = |what: &str| Error::InvalidConfig(format!("layer {:?}: {what}", self.name));
        put_u16(
            out,
            u16::try_from(self.name.len()).map_err(|_| too_big("name too long"))?,
        );
        out.extend_from_slice(self.name.as_bytes());
        out.push(u8::try_from(self.shape.len()).map_err(|_| too_big("rank above 255"))?);
        for &e in &self.shape {
            put_u32(
                out,
                u32::try_from(e).map_err(|_| too_big("extent exceeds u32"))?,
            );
        }
        for v in [self.rows, self.cols, self.nnz] {
            put_u32(
                out,
                u32::try_from(v).map_err(|_| too_big("size exceeds u32"))?,
            );
        }
        out.push(self.flags.to_byte());
        for s in self.sections() {
            put_u64(out, s.len() as u64);
        }
        for s in self.sections() {
            out.extend_from_slice(s);
        }
        Ok(())
    }

    fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptStream("layer name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let nnz = r.u32()? as usize;
        let flags = LayerFlags::from_byte(r.u8()?)?;
        let mut lens = [0usize; SECTION_COUNT];
        for l in lens.iter_mut() {
            *l = usize::try_from(r.u64()?)
                .map_err(|_| Error::CorruptStream("section length overflows".into()))?;
        }
        let mut take = |n| r.take(n).map(<[u8]>::to_vec);
        Ok(LayerRecord {
            name,
            shape,
            rows,
            cols,
            nnz,
            flags,
            row_ptr: take(lens[0])?,
            col_idx: take(lens[1])?,
            codebook: take(lens[2])?,
            values: take(lens[3])?,
        })
    }
}

/// A compressed model: the config echo and one record per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub config: ConfigEcho,
    pub layers: Vec<LayerRecord>,
}

impl CompressedModel {
    pub fn accounting(&self) -> LayerAccounting {
        let mut total = LayerAccounting::default();
        for l in &self.layers {
            total += l.accounting();
        }
        total
    }

    /// Exact serialized size.
    pub fn byte_len(&self) -> u64 {
        FIXED_OVERHEAD as u64 + self.accounting().total()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.byte_len() as usize);
        out.extend_from_slice(&CCNZ_MAGIC);
        put_u16(&mut out, CCNZ_VERSION);
        put_u16(&mut out, self.config.flags());
        put_u32(
            &mut out,
            u32::try_from(self.layers.len())
                .map_err(|_| Error::InvalidConfig("too many layers".into()))?,
        );
        put_u32(&mut out, 0);
        self.config.write_body(&mut out);
        for l in &self.layers {
            l.write_to(&mut out)?;
        }
        let crc = crc32fast::hash(&out[FILE_HEADER_LEN..]);
        out[12..16].copy_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "CCNZ");
        let magic = r.magic()?;
        if magic != CCNZ_MAGIC {
            return Err(Error::MagicMismatch {
                expected: CCNZ_MAGIC,
                found: magic,
            });
        }
        let version = r.u16()?;
        if version != CCNZ_VERSION {
            return Err(Error::VersionUnsupported(version as u32));
        }
        let flags = r.u16()?;
        let count = r.u32()? as usize;
        let stored = r.u32()?;
        let computed = crc32fast::hash(&buf[FILE_HEADER_LEN..]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let config = ConfigEcho::read(flags, &mut r)?;
        let mut layers = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            layers.push(LayerRecord::read_from(&mut r)?);
        }
        if r.remaining() != 0 {
            return Err(Error::CorruptStream(format!(
                "{} trailing bytes after last layer",
                r.remaining()
            )));
        }
        Ok(CompressedModel { config, layers })
    }
}

pub fn write_container(c: &CompressedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, c.to_bytes()?)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<CompressedModel> {
    CompressedModel::from_bytes(&fs::read(path)?)
}

/// Intermediate results of running the pipeline on one layer.
#[derive(Debug, Clone)]
pub struct LayerArtifacts {
    pub name: String,
    pub shape: Vec<usize>,
    pub sparse: SparseComplexMatrix,
    pub pruning_ratio: f64,
    pub quantized: Option<(QuantizedLayer, KMeansReport)>,
    pub encoded: Option<EncodedLayer>,
}

impl LayerArtifacts {
    /// Record after pruning only: survivors stored as raw pairs.
    pub fn pruned_record(&self) -> Result<LayerRecord> {
        let mut values = Vec::with_capacity(self.sparse.nnz() * 8);
        for v in &self.sparse.values {
            put_f32(&mut values, v.re);
            put_f32(&mut values, v.im);
        }
        let (row_ptr, col_idx, full) = raw_structure(&self.sparse.structure);
        Ok(self.record(
            full,
            false,
            ValueEncoding::RawPairs,
            row_ptr,
            col_idx,
            Vec::new(),
            values,
        ))
    }

    /// Record after quantization: codebook plus bit-packed indices.
    pub fn quantized_record(&self) -> Result<Option<LayerRecord>> {
        let Some((q, _)) = &self.quantized else {
            return Ok(None);
        };
        let bits = bitpack::index_bits(q.codebook.len());
        let values = bitpack::pack(&q.indices, bits);
        let (row_ptr, col_idx, full) = raw_structure(&q.structure);
        Ok(Some(self.record(
            full,
            false,
            ValueEncoding::PackedIndices,
            row_ptr,
            col_idx,
            codebook_bytes(&q.codebook),
            values,
        )))
    }

    /// Record after Huffman coding.
    pub fn huffman_record(&self) -> Result<Option<LayerRecord>> {
        let (Some((q, _)), Some(enc)) = (&self.quantized, &self.encoded) else {
            return Ok(None);
        };
        let (row_ptr, raw_cols, full) = raw_structure(&q.structure);
        let (col_idx, col_huff) = match (&enc.col_idx, full) {
            (_, true) => (Vec::new(), false),
            (Some(s), false) if s.serialized_len() < raw_cols.len() => (stream_bytes(s)?, true),
            _ => (raw_cols, false),
        };
        let mut values = Vec::with_capacity(enc.values.serialized_len());
        enc.values.write_to(&mut values)?;
        let encoding = match enc.values.mode() {
            EntropyMode::Indices => ValueEncoding::HuffmanIndices,
            EntropyMode::SplitValues => ValueEncoding::HuffmanSplit,
        };
        Ok(Some(self.record(
            full,
            col_huff,
            encoding,
            row_ptr,
            col_idx,
            codebook_bytes(&q.codebook),
            values,
        )))
    }

    /// Record of the last enabled stage.
    pub fn final_record(&self) -> Result<LayerRecord> {
        if let Some(r) = self.huffman_record()? {
            return Ok(r);
        }
        if let Some(r) = self.quantized_record()? {
            return Ok(r);
        }
        self.pruned_record()
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        full: bool,
        col_idx_huffman: bool,
        encoding: ValueEncoding,
        row_ptr: Vec<u8>,
        col_idx: Vec<u8>,
        codebook: Vec<u8>,
        values: Vec<u8>,
    ) -> LayerRecord {
        LayerRecord {
            name: self.name.clone(),
            shape: self.shape.clone(),
            rows: self.sparse.rows(),
            cols: self.sparse.cols(),
            nnz: self.sparse.nnz(),
            flags: LayerFlags {
                full,
                col_idx_huffman,
                encoding,
            },
            row_ptr,
            col_idx,
            codebook,
            values,
        }
    }
}

fn raw_structure(s: &CsrStructure) -> (Vec<u8>, Vec<u8>, bool) {
    if s.is_full() {
        return (Vec::new(), Vec::new(), true);
    }
    let mut row_ptr = Vec::with_capacity(4 * s.row_ptr.len());
    for &p in &s.row_ptr {
        put_u32(&mut row_ptr, p);
    }
    let mut col_idx = Vec::with_capacity(4 * s.col_idx.len());
    for &c in &s.col_idx {
        put_u32(&mut col_idx, c);
    }
    (row_ptr, col_idx, false)
}

fn codebook_bytes(cb: &Codebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * cb.len());
    for c in cb.centroids() {
        put_f32(&mut out, c.re);
        put_f32(&mut out, c.im);
    }
    out
}

fn stream_bytes(s: &EncodedStream) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(s.serialized_len());
    s.write_to(&mut out)?;
    Ok(out)
}

fn compress_layer(t: &ComplexTensor, cfg: &PipelineConfig) -> Result<LayerArtifacts> {
    let prune_cfg = cfg.prune_config_for(t.name())?;
    let sparse = prune(t, &prune_cfg).map_err(|e| e.in_layer(t.name(), "prune"))?;
    let pruning_ratio = pruning::pruning_ratio(t, &sparse);
    let quantized = if cfg.stages.quantize {
        let m = cfg.clusters.clusters_for(t.name());
        Some(
            quantize_layer(&sparse, t.shape(), m, cfg.init, cfg.kmeans)
                .map_err(|e| e.in_layer(t.name(), "quantize"))?,
        )
    } else {
        None
    };
    let encoded = match (&quantized, cfg.huffman_mode()) {
        (Some((q, _)), Some(mode)) => {
            Some(entropy::encode_quantized(q, mode).map_err(|e| e.in_layer(t.name(), "huffman"))?)
        }
        _ => None,
    };
    Ok(LayerArtifacts {
        name: t.name().to_owned(),
        shape: t.shape().to_vec(),
        sparse,
        pruning_ratio,
        quantized,
        encoded,
    })
}

/// Runs the enabled stages on every layer, keeping intermediate results.
/// Layers are processed in parallel; output order follows the model.
pub fn run_pipeline(model: &RawModel, cfg: &PipelineConfig) -> Result<Vec<LayerArtifacts>> {
    cfg.validate()?;
    model
        .layers()
        .par_iter()
        .map(|t| compress_layer(t, cfg))
        .collect()
}

pub fn assemble(artifacts: &[LayerArtifacts], cfg: &PipelineConfig) -> Result<CompressedModel> {
    let layers = artifacts
        .iter()
        .map(LayerArtifacts::final_record)
        .collect::<Result<_>>()?;
    Ok(CompressedModel {
        config: ConfigEcho::from_config(cfg),
        layers,
    })
}

pub fn compress(model: &RawModel, cfg: &PipelineConfig) -> Result<CompressedModel> {
    let artifacts = run_pipeline(model, cfg)?;
    assemble(&artifacts, cfg)
}

fn u32_section(bytes: &[u8], count: usize, what: &str) -> Result<Vec<u32>> {
    if bytes.len() != 4 * count {
        return Err(Error::CorruptStream(format!(
            "{what}: {} bytes for {count} entries",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn pair_section(bytes: &[u8], what: &str) -> Result<Vec<ComplexScalar>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::CorruptStream(format!(
            "{what}: length not a multiple of 8"
        )));
    }
    let v: Vec<ComplexScalar> = bytes
        .chunks_exact(8)
        .map(|c| {
            ComplexScalar::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::CorruptStream(format!("{what}: non-finite value")));
    }
    Ok(v)
}

fn read_stream(bytes: &[u8], what: &'static str) -> Result<EncodedStream> {
    let mut r = Reader::new(bytes, what);
    let s = EncodedStream::read_from(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::CorruptStream(format!("{what}: trailing bytes")));
    }
    Ok(s)
}

fn read_values(bytes: &[u8], mode: EntropyMode) -> Result<ValueStreams> {
    let mut r = Reader::new(bytes, "values section");
    let v = ValueStreams::read_from(&mut r, mode)?;
    if r.remaining() != 0 {
        return Err(Error::CorruptStream(
            "values section: trailing bytes".into(),
        ));
    }
    Ok(v)
}

/// A layer decoded back to sparse form, with the codebook when quantized.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedLayer {
    pub sparse: SparseComplexMatrix,
    pub codebook: Option<Codebook>,
    /// Codebook index per stored weight, when quantized.
    pub indices: Option<Vec<u32>>,
    /// Symbol streams as decoded, by name (`col_idx`, `indices`, `real`, `imag`).
    pub streams: Vec<(&'static str, Vec<u32>)>,
}

impl LayerRecord {
    /// Decodes the record back to a sparse matrix.
    pub fn decode(&self) -> Result<DecodedLayer> {
        let (rows, cols) = matrixize(&self.shape)?;
        if (rows, cols) != (self.rows, self.cols) {
            return Err(Error::ShapeMismatch(format!(
                "layer {:?}: shape {:?} does not give {}x{}",
                self.name, self.shape, self.rows, self.cols
            )));
        }
        let nnz = self.nnz;
        let mut streams = Vec::new();
        let structure = if self.flags.full {
            if nnz != rows * cols || !self.row_ptr.is_empty() || !self.col_idx.is_empty() {
                return Err(Error::CorruptStream(
                    "full layer with explicit structure".into(),
                ));
            }
            CsrStructure::full(rows, cols)?
        } else {
            let row_ptr = u32_section(&self.row_ptr, rows + 1, "row_ptr")?;
            let col_idx = if self.flags.col_idx_huffman {
                let syms = entropy::decode(&read_stream(&self.col_idx, "col_idx")?, nnz)?;
                streams.push(("col_idx", syms.clone()));
                syms
            } else {
                u32_section(&self.col_idx, nnz, "col_idx")?
            };
            CsrStructure {
                rows,
                cols,
                row_ptr,
                col_idx,
            }
        };
        structure.validate()?;
        if structure.nnz() != nnz {
            return Err(Error::CorruptStream("nnz disagrees with structure".into()));
        }
        let encoding = self.flags.encoding;
        if !encoding.is_quantized() {
            if !self.codebook.is_empty() {
                return Err(Error::CorruptStream("codebook in unquantized layer".into()));
            }
            let values = pair_section(&self.values, "values")?;
            if values.len() != nnz {
                return Err(Error::CorruptStream(
                    "value count disagrees with nnz".into(),
                ));
            }
            let sparse = SparseComplexMatrix { structure, values };
            return Ok(DecodedLayer {
                sparse,
                codebook: None,
                indices: None,
                streams,
            });
        }
        let centroids = pair_section(&self.codebook, "codebook")?;
        let codebook = if centroids.is_empty() {
            Codebook::empty()
        } else {
            Codebook::new(centroids).map_err(|e| Error::CorruptStream(format!("codebook: {e}")))?
        };
        let indices = match encoding {
            ValueEncoding::PackedIndices => {
                bitpack::unpack(&self.values, nnz, bitpack::index_bits(codebook.len()))?
            }
            ValueEncoding::HuffmanIndices | ValueEncoding::HuffmanSplit => {
                let mode = if encoding == ValueEncoding::HuffmanIndices {
                    EntropyMode::Indices
                } else {
                    EntropyMode::SplitValues
                };
                let vs = read_values(&self.values, mode)?;
                for (name, s) in vs.streams() {
                    streams.push((name, entropy::decode(s, nnz)?));
                }
                entropy::decode_indices(&vs, &codebook, nnz)?
            }
            ValueEncoding::RawPairs => unreachable!(),
        };
        let q = QuantizedLayer {
            structure,
            codebook,
            indices,
            original_shape: self.shape.clone(),
        };
        let sparse = crate::quantization::dequantize_layer(&q)?;
        Ok(DecodedLayer {
            sparse,
            codebook: Some(q.codebook),
            indices: Some(q.indices),
            streams,
        })
    }
}

/// Rebuilds dense layers. Pruned positions are exact zeros; stored positions
/// hold their centroid, or the original value when quantization was off.
pub fn decompress(c: &CompressedModel) -> Result<RawModel> {
    let layers = c
        .layers
        .par_iter()
        .map(|rec| {
            let d = rec.decode().map_err(|e| e.in_layer(&rec.name, "decode"))?;
            densify(&d.sparse, &rec.name, &rec.shape).map_err(|e| e.in_layer(&rec.name, "densify"))
        })
        .collect::<Result<Vec<_>>>()?;
    RawModel::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f32, im: f32) -> ComplexScalar {
        ComplexScalar::new(re, im)
    }

    fn corners_model() -> RawModel {
        let t = ComplexTensor::new(
            "toy",
            vec![2, 2],
            vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0), c(1.0, 1.0)],
        )
        .unwrap();
        RawModel::new(vec![t]).unwrap()
    }

    #[test]
    fn cluster_spec_parsing() {
        let s = ClusterSpec::parse("100", 256).unwrap();
        assert_eq!(s.clusters_for("anything"), 100);
        let s = ClusterSpec::parse("conv*=100,dense*=256", 16).unwrap();
        assert_eq!(s.clusters_for("conv1"), 100);
        assert_eq!(s.clusters_for("dense_out"), 256);
        assert_eq!(s.clusters_for("bn"), 16);
        let s = ClusterSpec::parse("8, stage1*=90", 256).unwrap();
        assert_eq!(s.default, 8);
        assert_eq!(s.clusters_for("stage1_conv"), 90);
        assert!(ClusterSpec::parse("x=abc", 1).is_err());
        assert!(ClusterSpec::parse("[=3", 1).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = PipelineConfig::default();
        cfg.stages.quantize = false;
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            clusters: ClusterSpec::uniform(0),
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.threshold_overrides.insert("a".into(), -1.0);
        assert!(cfg.validate().is_err());
        PipelineConfig::default().validate().unwrap();
        PipelineConfig::identity().validate().unwrap();
    }

    #[test]
    fn identity_pipeline_is_bit_exact() {
        let m = corners_model();
        let cm = compress(&m, &PipelineConfig::identity()).unwrap();
        assert!(cm.layers[0].flags.full);
        assert_eq!(cm.layers[0].accounting().weights(), 32);
        assert!(decompress(&cm).unwrap().bit_eq(&m));
    }

    #[test]
    fn toy_layer_two_centroids_one_bit_indices() {
        let cfg = PipelineConfig {
            clusters: ClusterSpec::uniform(2),
            init: InitScheme::LinearVertical,
            stages: Stages {
                prune: true,
                quantize: true,
                huffman: false,
            },
            ..PipelineConfig::default()
        };
        let cm = compress(&corners_model(), &cfg).unwrap();
        let rec = &cm.layers[0];
        assert_eq!(rec.flags.encoding, ValueEncoding::PackedIndices);
        assert_eq!(rec.codebook.len(), 16);
        assert_eq!(rec.values.len(), 1);
        // bottom row -> one centroid, top row -> the other
        let idx = bitpack::unpack(&rec.values, 4, 1).unwrap();
        assert_eq!(idx[0], idx[1]);
        assert_eq!(idx[2], idx[3]);
        assert_ne!(idx[0], idx[2]);
        let out = decompress(&cm).unwrap();
        let cb = pair_section(&rec.codebook, "cb").unwrap();
        for v in out.layers()[0].values() {
            assert!(cb.iter().any(|x| x.bit_eq(*v)));
        }
    }

    #[test]
    fn pruned_positions_decompress_to_zero() {
        let t = ComplexTensor::new(
            "l",
            vec![3, 2],
            vec![
                c(0.001, 0.0),
                c(2.0, 1.0),
                c(0.0, -0.002),
                c(-1.0, 3.0),
                c(0.5, 0.5),
                c(1.0, 1.0),
            ],
        )
        .unwrap();
        let m = RawModel::new(vec![t.clone()]).unwrap();
        for huffman in [false, true] {
            for mode in [EntropyMode::SplitValues, EntropyMode::Indices] {
                let cfg = PipelineConfig {
                    prune: PruneConfig::modulus(0.01).unwrap(),
                    clusters: ClusterSpec::uniform(2),
                    entropy_mode: Some(mode),
                    stages: Stages {
                        huffman,
                        ..Stages::ALL
                    },
                    ..PipelineConfig::default()
                };
                let cm = compress(&m, &cfg).unwrap();
                let bytes = cm.to_bytes().unwrap();
                assert_eq!(bytes.len() as u64, cm.byte_len());
                let back = CompressedModel::from_bytes(&bytes).unwrap();
                assert_eq!(back, cm);
                let out = decompress(&back).unwrap();
                let v = out.layers()[0].values();
                assert!(v[0].bit_eq(ComplexScalar::ZERO));
                assert!(v[2].bit_eq(ComplexScalar::ZERO));
                assert!(v
                    .iter()
                    .all(|x| !x.bit_eq(ComplexScalar::ZERO) || x == &v[0]));
            }
        }
    }

    #[test]
    fn all_pruned_layer_round_trips() {
        let t = ComplexTensor::new("z", vec![2, 2], vec![c(0.001, 0.0); 4]).unwrap();
        let m = RawModel::new(vec![t]).unwrap();
        let cfg = PipelineConfig {
            prune: PruneConfig::modulus(1.0).unwrap(),
            ..PipelineConfig::default()
        };
        let cm = compress(&m, &cfg).unwrap();
        let back = CompressedModel::from_bytes(&cm.to_bytes().unwrap()).unwrap();
        let out = decompress(&back).unwrap();
        assert!(out.layers()[0]
            .values()
            .iter()
            .all(|v| v.bit_eq(ComplexScalar::ZERO)));
    }

    #[test]
    fn empty_model_container() {
        let cm = compress(&RawModel::default(), &PipelineConfig::default()).unwrap();
        let bytes = cm.to_bytes().unwrap();
        assert_eq!(bytes.len(), FIXED_OVERHEAD);
        assert_eq!(
            u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
            crc32fast::hash(&bytes[16..])
        );
        let back = CompressedModel::from_bytes(&bytes).unwrap();
        assert!(back.layers.is_empty());
        assert_eq!(back.config, cm.config);
    }

    #[test]
    fn header_errors() {
        let cm = compress(&corners_model(), &PipelineConfig::default()).unwrap();
        let bytes = cm.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            CompressedModel::from_bytes(&bad),
            Err(Error::MagicMismatch { .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            CompressedModel::from_bytes(&bad),
            Err(Error::VersionUnsupported(9))
        ));
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0x10;
        assert!(matches!(
            CompressedModel::from_bytes(&bad),
            Err(Error::ChecksumMismatch { .. })
        ));
        assert!(CompressedModel::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn layer_errors_name_the_layer() {
        let cm = compress(&corners_model(), &PipelineConfig::default()).unwrap();
        let mut broken = cm.clone();
        broken.layers[0].values.truncate(1);
        match decompress(&broken) {
            Err(Error::Layer { layer, stage, .. }) => {
                assert_eq!(layer, "toy");
                assert_eq!(stage, "decode");
            }
            other => panic!("expected a layer error, got {other:?}"),
        }
    }

    #[test]
    fn threshold_override_applies_to_named_layer() {
        let a = ComplexTensor::new("a", vec![2], vec![c(0.1, 0.0), c(1.0, 0.0)]).unwrap();
        let b = ComplexTensor::new("b", vec![2], vec![c(0.1, 0.0), c(1.0, 0.0)]).unwrap();
        let m = RawModel::new(vec![a, b]).unwrap();
        let mut cfg = PipelineConfig::identity();
        cfg.prune = PruneConfig::modulus(0.5).unwrap();
        cfg.threshold_overrides.insert("b".into(), 0.0);
        let arts = run_pipeline(&m, &cfg).unwrap();
        assert_eq!(arts[0].pruning_ratio, 0.5);
        assert_eq!(arts[1].pruning_ratio, 0.0);
    }

    #[test]
    fn wide_layers_keep_raw_column_indices() {
        let n = 70_000;
        let vals: Vec<_> = (0..n)
            .map(|i| {
                if i % 3 == 0 {
                    c(0.0, 0.0)
                } else {
                    c(1.0, (i % 5) as f32)
                }
            })
            .collect();
        let t = ComplexTensor::new("wide", vec![n], vals).unwrap();
        let m = RawModel::new(vec![t]).unwrap();
        let cfg = PipelineConfig {
            prune: PruneConfig::modulus(0.5).unwrap(),
            clusters: ClusterSpec::uniform(5),
            ..PipelineConfig::default()
        };
        let cm = compress(&m, &cfg).unwrap();
        assert!(!cm.layers[0].flags.col_idx_huffman);
        assert_eq!(cm.layers[0].col_idx.len(), 4 * cm.layers[0].nnz);
        let out =
            decompress(&CompressedModel::from_bytes(&cm.to_bytes().unwrap()).unwrap()).unwrap();
        for (i, v) in out.layers()[0].values().iter().enumerate() {
            assert_eq!(v.bit_eq(ComplexScalar::ZERO), i % 3 == 0);
        }
    }
}
