//! Per-stage size accounting, threshold sweeps, inspection and diffs.
//!
//! Sizes are reported three ways for every stage:
//! * `weight_bytes`: codebook plus the value or index sections,
//! * `structure_bytes`: CSR row offsets and column indices,
//! * `file_bytes`: the whole file as it would be written at that stage.
//!
//! The raw stage is the CWT input: `8 x weights` of payload, no structure,
//! and the CWT file size.

use std::fmt::Write as _;

use crate::bitpack;
use crate::container::{
    assemble, run_pipeline, CompressedModel, ConfigEcho, LayerAccounting, LayerArtifacts,
    LayerRecord, PipelineConfig, FIXED_OVERHEAD,
};
use crate::entropy::SymbolHistogram;
use crate::pruning::{prune, PruneConfig, PruneKey};
use crate::quantization::KMeansReport;
use crate::tensor::{RawModel, BYTES_PER_WEIGHT};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Pruned,
    Quantized,
    Huffman,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Raw, Stage::Pruned, Stage::Quantized, Stage::Huffman];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Pruned => "pruned",
            Stage::Quantized => "quantized",
            Stage::Huffman => "huffman",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageSize {
    pub weight_bytes: u64,
    pub structure_bytes: u64,
    pub file_bytes: u64,
}

impl StageSize {
    fn from_records<'a>(records: impl Iterator<Item = &'a LayerRecord>) -> Self {
        let mut acc = LayerAccounting::default();
        for r in records {
            acc += r.accounting();
        }
        StageSize {
            weight_bytes: acc.weights(),
            structure_bytes: acc.structure(),
            file_bytes: FIXED_OVERHEAD as u64 + acc.total(),
        }
    }

    /// Weights plus structure, without headers.
    pub fn payload_with_structure(&self) -> u64 {
        self.weight_bytes + self.structure_bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub name: String,
    pub shape: Vec<usize>,
    pub weights: usize,
    pub nnz: usize,
    pub pruning_ratio: f64,
    pub clusters: Option<usize>,
    pub kmeans: Option<KMeansReport>,
    /// Empirical entropy in bits per symbol, by stream name.
    pub stream_entropy: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub raw: StageSize,
    pub pruned: StageSize,
    pub quantized: Option<StageSize>,
    pub huffman: Option<StageSize>,
    pub layers: Vec<LayerReport>,
}

fn ratio(raw: u64, stage: u64) -> f64 {
    if stage == 0 {
        if raw == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        raw as f64 / stage as f64
    }
}

impl StageReport {
    pub fn stage(&self, s: Stage) -> Option<StageSize> {
        match s {
            Stage::Raw => Some(self.raw),
            Stage::Pruned => Some(self.pruned),
            Stage::Quantized => self.quantized,
            Stage::Huffman => self.huffman,
        }
    }

    /// Stages present in the report, in pipeline order.
    pub fn stages(&self) -> Vec<(Stage, StageSize)> {
        Stage::ALL
            .iter()
            .filter_map(|&s| self.stage(s).map(|z| (s, z)))
            .collect()
    }

    /// Raw weight bytes over the stage's weight bytes.
    pub fn payload_ratio(&self, s: Stage) -> Option<f64> {
        self.stage(s)
            .map(|z| ratio(self.raw.weight_bytes, z.weight_bytes))
    }

    /// Raw weight bytes over the stage's weights plus sparse structure.
    pub fn payload_structure_ratio(&self, s: Stage) -> Option<f64> {
        self.stage(s)
            .map(|z| ratio(self.raw.weight_bytes, z.payload_with_structure()))
    }

    /// Raw file size over the stage's file size.
    pub fn file_ratio(&self, s: Stage) -> Option<f64> {
        self.stage(s)
            .map(|z| ratio(self.raw.file_bytes, z.file_bytes))
    }

    /// Reduction factor of each stage's weight bytes relative to the stage
    /// before it.
    pub fn stage_reductions(&self) -> Vec<(Stage, f64)> {
        self.stages()
            .windows(2)
            .map(|w| (w[1].0, ratio(w[0].1.weight_bytes, w[1].1.weight_bytes)))
            .collect()
    }

    /// Stage with the largest single-stage reduction factor.
    pub fn largest_reduction(&self) -> Option<Stage> {
        self.stage_reductions()
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(s, _)| s)
    }

    pub fn overall_pruning_ratio(&self) -> f64 {
        let total: usize = self.layers.iter().map(|l| l.weights).sum();
        let kept: usize = self.layers.iter().map(|l| l.nnz).sum();
        if total == 0 {
            0.0
        } else {
            (total - kept) as f64 / total as f64
        }
    }

    pub fn pruned_le_raw(&self) -> bool {
        self.pruned.weight_bytes <= self.raw.weight_bytes
    }

    /// Expected but not guaranteed: a large codebook on a small layer can
    /// outweigh the index savings.
    pub fn quantized_le_pruned(&self) -> Option<bool> {
        self.quantized
            .map(|q| q.payload_with_structure() <= self.pruned.payload_with_structure())
    }

    /// Split-value coding spends one code per component, so it can exceed
    /// the packed indices; so can code tables on small layers.
    pub fn huffman_le_quantized(&self) -> Option<bool> {
        match (self.quantized, self.huffman) {
            (Some(q), Some(h)) => Some(h.payload_with_structure() <= q.payload_with_structure()),
            _ => None,
        }
    }

    /// Aligned table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>14} {:>14} {:>14} {:>9} {:>9}",
            "stage", "weight_bytes", "struct_bytes", "file_bytes", "ratio", "file_rat"
        );
        for (st, z) in self.stages() {
            let _ = writeln!(
                s,
                "{:<10} {:>14} {:>14} {:>14} {:>9.3} {:>9.3}",
                st.name(),
                z.weight_bytes,
                z.structure_bytes,
                z.file_bytes,
                self.payload_ratio(st).unwrap_or(0.0),
                self.file_ratio(st).unwrap_or(0.0),
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>10} {:>8} {:>6} {:>6} {:>12}  entropy",
            "layer", "weights", "nnz", "pruned", "m", "iters", "max_dist"
        );
        for l in &self.layers {
            let (m, iters, dist) = match (&l.clusters, &l.kmeans) {
                (Some(m), Some(k)) => (
                    m.to_string(),
                    k.iterations.to_string(),
                    format!("{:.6e}", k.max_distance),
                ),
                _ => ("-".into(), "-".into(), "-".into()),
            };
            let ent: Vec<String> = l
                .stream_entropy
                .iter()
                .map(|(n, h)| format!("{n}={h:.3}"))
                .collect();
            let _ = writeln!(
                s,
                "{:<24} {:>10} {:>10} {:>8.4} {:>6} {:>6} {:>12}  {}",
                l.name,
                l.weights,
                l.nnz,
                l.pruning_ratio,
                m,
                iters,
                dist,
                ent.join(" ")
            );
        }
        s
    }

    /// `key: value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (st, z) in self.stages() {
            let n = st.name();
            let _ = writeln!(s, "{n}.weight_bytes: {}", z.weight_bytes);
            let _ = writeln!(s, "{n}.structure_bytes: {}", z.structure_bytes);
            let _ = writeln!(s, "{n}.file_bytes: {}", z.file_bytes);
            let _ = writeln!(s, "{n}.ratio: {}", self.payload_ratio(st).unwrap_or(0.0));
            let _ = writeln!(
                s,
                "{n}.ratio_with_structure: {}",
                self.payload_structure_ratio(st).unwrap_or(0.0)
            );
            let _ = writeln!(s, "{n}.file_ratio: {}", self.file_ratio(st).unwrap_or(0.0));
        }
        let _ = writeln!(s, "pruning_ratio: {}", self.overall_pruning_ratio());
        if let Some(st) = self.largest_reduction() {
            let _ = writeln!(s, "largest_reduction: {}", st.name());
        }
        let _ = writeln!(s, "flag.pruned_le_raw: {}", self.pruned_le_raw());
        if let Some(f) = self.quantized_le_pruned() {
            let _ = writeln!(s, "flag.quantized_le_pruned: {f}");
        }
        if let Some(f) = self.huffman_le_quantized() {
            let _ = writeln!(s, "flag.huffman_le_quantized: {f}");
        }
        for l in &self.layers {
            let p = format!("layer.{}", l.name);
            let _ = writeln!(s, "{p}.weights: {}", l.weights);
            let _ = writeln!(s, "{p}.nnz: {}", l.nnz);
            let _ = writeln!(s, "{p}.pruning_ratio: {}", l.pruning_ratio);
            if let (Some(m), Some(k)) = (l.clusters, &l.kmeans) {
                let _ = writeln!(s, "{p}.clusters: {m}");
                let _ = writeln!(s, "{p}.kmeans.iterations: {}", k.iterations);
                let _ = writeln!(s, "{p}.kmeans.converged: {}", k.converged);
                let _ = writeln!(s, "{p}.kmeans.wcss: {}", k.final_wcss);
                let _ = writeln!(s, "{p}.kmeans.max_distance: {}", k.max_distance);
            }
            for (n, h) in &l.stream_entropy {
                let _ = writeln!(s, "{p}.entropy.{n}: {h}");
            }
        }
        s
    }
}

fn layer_report(a: &LayerArtifacts) -> LayerReport {
    let weights = a.shape.iter().product();
    let mut stream_entropy = Vec::new();
    if let Some((q, _)) = &a.quantized {
        if !q.structure.is_full() {
            stream_entropy.push((
                "col_idx".to_owned(),
                SymbolHistogram::from_symbols(&q.structure.col_idx).entropy_bits(),
            ));
        }
        stream_entropy.push((
            "indices".to_owned(),
            SymbolHistogram::from_symbols(&q.indices).entropy_bits(),
        ));
        if let Some(enc) = &a.encoded {
            for (name, s) in enc.values.streams() {
                if name != "indices" {
                    let h = entropy_of_table_counts(s, q.nnz());
                    stream_entropy.push((name.to_owned(), h));
                }
            }
        }
    }
    LayerReport {
        name: a.name.clone(),
        shape: a.shape.clone(),
        weights,
        nnz: a.sparse.nnz(),
        pruning_ratio: a.pruning_ratio,
        clusters: a.quantized.as_ref().map(|(q, _)| q.codebook.len()),
        kmeans: a.quantized.as_ref().map(|(_, k)| k.clone()),
        stream_entropy,
    }
}

fn entropy_of_table_counts(s: &crate::entropy::EncodedStream, count: usize) -> f64 {
    crate::entropy::decode(s, count)
        .map(|syms| SymbolHistogram::from_symbols(&syms).entropy_bits())
        .unwrap_or(f64::NAN)
}

fn build_report(
    model: &RawModel,
    arts: &[LayerArtifacts],
    cfg: &PipelineConfig,
) -> Result<StageReport> {
    let raw = StageSize {
        weight_bytes: model.weight_count() * BYTES_PER_WEIGHT,
        structure_bytes: 0,
        file_bytes: model.cwt_len(),
    };
    let pruned_recs = arts
        .iter()
        .map(LayerArtifacts::pruned_record)
        .collect::<Result<Vec<_>>>()?;
    let pruned = StageSize::from_records(pruned_recs.iter());
    let quantized = if cfg.stages.quantize {
        let recs = arts
            .iter()
            .map(|a| a.quantized_record().map(Option::unwrap))
            .collect::<Result<Vec<_>>>()?;
        Some(StageSize::from_records(recs.iter()))
    } else {
        None
    };
    let huffman = if cfg.huffman_mode().is_some() {
        let recs = arts
            .iter()
            .map(|a| a.huffman_record().map(Option::unwrap))
            .collect::<Result<Vec<_>>>()?;
        Some(StageSize::from_records(recs.iter()))
    } else {
        None
    };
    Ok(StageReport {
        raw,
        pruned,
        quantized,
        huffman,
        layers: arts.iter().map(layer_report).collect(),
    })
}

/// Runs the pipeline once, returning the per-stage report and the
/// container of the last enabled stage.
pub fn compress_with_report(
    model: &RawModel,
    cfg: &PipelineConfig,
) -> Result<(StageReport, CompressedModel)> {
    let arts = run_pipeline(model, cfg)?;
    let report = build_report(model, &arts, cfg)?;
    let container = assemble(&arts, cfg)?;
    Ok((report, container))
}

pub fn report(model: &RawModel, cfg: &PipelineConfig) -> Result<StageReport> {
    compress_with_report(model, cfg).map(|(r, _)| r)
}

/// Overall pruning ratio for each threshold.
pub fn threshold_sweep(
    model: &RawModel,
    thresholds: &[f64],
    key: PruneKey,
) -> Result<Vec<(f64, f64)>> {
    use rayon::prelude::*;
    let total = model.weight_count();
    thresholds
        .iter()
        .map(|&t| {
            let cfg = PruneConfig::new(t, key)?;
            let kept = model
                .layers()
                .par_iter()
                .map(|l| prune(l, &cfg).map(|s| s.nnz() as u64))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum::<u64>();
            let r = if total == 0 {
                0.0
            } else {
                (total - kept) as f64 / total as f64
            };
            Ok((t, r))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSummary {
    pub name: String,
    pub shape: Vec<usize>,
    pub nnz: usize,
    pub clusters: usize,
    pub index_bits: u32,
    pub encoding: &'static str,
    pub accounting: LayerAccounting,
    pub stream_entropy: Vec<(&'static str, f64)>,
}

/// Decodes every layer of a container and summarises it.
pub fn inspect(c: &CompressedModel) -> Result<Vec<LayerSummary>> {
    c.layers
        .iter()
        .map(|rec| {
            let d = rec.decode().map_err(|e| e.in_layer(&rec.name, "decode"))?;
            let clusters = d.codebook.as_ref().map_or(0, |cb| cb.len());
            let mut stream_entropy: Vec<(&'static str, f64)> = d
                .streams
                .iter()
                .map(|(n, s)| (*n, SymbolHistogram::from_symbols(s).entropy_bits()))
                .collect();
            if let Some(idx) = &d.indices {
                if !stream_entropy.iter().any(|(n, _)| *n == "indices") {
                    stream_entropy
                        .push(("indices", SymbolHistogram::from_symbols(idx).entropy_bits()));
                }
            }
            use crate::container::ValueEncoding as V;
            Ok(LayerSummary {
                name: rec.name.clone(),
                shape: rec.shape.clone(),
                nnz: rec.nnz,
                clusters,
                index_bits: if clusters > 0 {
                    bitpack::index_bits(clusters)
                } else {
                    0
                },
                encoding: match rec.flags.encoding {
                    V::RawPairs => "raw",
                    V::PackedIndices => "packed",
                    V::HuffmanIndices => "huffman-indices",
                    V::HuffmanSplit => "huffman-split",
                },
                accounting: rec.accounting(),
                stream_entropy,
            })
        })
        .collect()
}

pub fn format_config(c: &ConfigEcho) -> String {
    format!(
        "stages: prune={} quantize={} huffman={}\nentropy: {}\nthreshold: {} ({})\ninit: {}\nmax_iters: {}\nrel_tol: {}\ndefault_clusters: {}\n",
        c.stages.prune,
        c.stages.quantize,
        c.stages.huffman,
        c.entropy_mode.map_or("none".to_owned(), |m| m.to_string()),
        c.threshold,
        c.prune_key,
        c.init,
        c.max_iters,
        c.rel_tol,
        c.default_clusters,
    )
}

pub fn format_inspect(c: &CompressedModel, layers: &[LayerSummary]) -> String {
    let mut s = format_config(&c.config);
    let _ = writeln!(s, "file_bytes: {}", c.byte_len());
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<24} {:<16} {:>10} {:>6} {:>5} {:<16} {:>12}  entropy",
        "layer", "shape", "nnz", "m", "bits", "encoding", "bytes"
    );
    for l in layers {
        let shape: Vec<String> = l.shape.iter().map(usize::to_string).collect();
        let ent: Vec<String> = l
            .stream_entropy
            .iter()
            .map(|(n, h)| format!("{n}={h:.3}"))
            .collect();
        let _ = writeln!(
            s,
            "{:<24} {:<16} {:>10} {:>6} {:>5} {:<16} {:>12}  {}",
            l.name,
            shape.join("x"),
            l.nnz,
            l.clusters,
            l.index_bits,
            l.encoding,
            l.accounting.total(),
            ent.join(" ")
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffReport {
    /// Largest per-weight distance, by layer.
    pub layers: Vec<(String, f64)>,
    pub max_distance: f64,
    pub mean_distance: f64,
}

/// Elementwise distance between two models with identical layer names and
/// shapes.
pub fn diff(a: &RawModel, b: &RawModel) -> Result<DiffReport> {
    if a.layers().len() != b.layers().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} layers vs {}",
            a.layers().len(),
            b.layers().len()
        )));
    }
    let mut layers = Vec::with_capacity(a.layers().len());
    let (mut max, mut sum, mut n) = (0.0f64, 0.0f64, 0u64);
    for la in a.layers() {
        let lb = b
            .layer(la.name())
            .ok_or_else(|| Error::ShapeMismatch(format!("layer {:?} missing", la.name())))?;
        if la.shape() != lb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "layer {:?}: {:?} vs {:?}",
                la.name(),
                la.shape(),
                lb.shape()
            )));
        }
        let mut lmax = 0.0f64;
        for (x, y) in la.values().iter().zip(lb.values()) {
            let d = x.dist_sq(*y).sqrt();
            lmax = lmax.max(d);
            sum += d;
            n += 1;
        }
        max = max.max(lmax);
        layers.push((la.name().to_owned(), lmax));
    }
    Ok(DiffReport {
        layers,
        max_distance: max,
        mean_distance: if n == 0 { 0.0 } else { sum / n as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::{ClusterSpec, Stages};
    use crate::entropy::EntropyMode;
    use crate::quantization::InitScheme;
    use crate::tensor::{ComplexScalar, ComplexTensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(n: usize, seed: u64) -> RawModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..n)
            .map(|_| ComplexScalar::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        RawModel::new(vec![ComplexTensor::new("w", vec![n / 8, 8], vals).unwrap()]).unwrap()
    }

    #[test]
    fn identity_config_ratio_one() {
        let m = random_model(64, 1);
        let r = report(&m, &PipelineConfig::identity()).unwrap();
        assert_eq!(r.pruned.weight_bytes, r.raw.weight_bytes);
        assert_eq!(r.payload_ratio(Stage::Pruned), Some(1.0));
        assert!(r.quantized.is_none() && r.huffman.is_none());
        assert_eq!(r.pruned.structure_bytes, 0);
    }

    #[test]
    fn small_accounting_example() {
        // 4096 weights, 16 clusters: 128 codebook bytes + 2048 index bytes
        let m = random_model(4096, 2);
        let cfg = PipelineConfig {
            clusters: ClusterSpec::uniform(16),
            stages: Stages {
                huffman: false,
                ..Stages::ALL
            },
            ..PipelineConfig::default()
        };
        let r = report(&m, &cfg).unwrap();
        let q = r.quantized.unwrap();
        assert_eq!(q.weight_bytes, 128 + 2048);
        assert_eq!(q.structure_bytes, 0);
        assert_eq!(r.payload_ratio(Stage::Quantized), Some(32768.0 / 2176.0));
    }

    #[test]
    fn report_matches_written_container() {
        let m = random_model(2048, 3);
        for mode in [
            Some(EntropyMode::SplitValues),
            Some(EntropyMode::Indices),
            None,
        ] {
            let cfg = PipelineConfig {
                prune: PruneConfig::modulus(0.4).unwrap(),
                clusters: ClusterSpec::uniform(32),
                entropy_mode: mode,
                ..PipelineConfig::default()
            };
            let (r, c) = compress_with_report(&m, &cfg).unwrap();
            let last = r.stages().last().unwrap().1;
            assert_eq!(last.file_bytes, c.to_bytes().unwrap().len() as u64);
            let acc = c.accounting();
            assert_eq!(last.weight_bytes, acc.weights());
            assert_eq!(last.structure_bytes, acc.structure());
        }
    }

    #[test]
    fn indices_mode_huffman_not_larger_on_skewed_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<_> = (0..8192)
            .map(|_| {
                let r: f32 = rng.gen::<f32>().powi(4);
                ComplexScalar::new(r, -r * 0.5)
            })
            .collect();
        let m = RawModel::new(vec![ComplexTensor::new("s", vec![8192], vals).unwrap()]).unwrap();
        let cfg = PipelineConfig {
            prune: PruneConfig::modulus(0.001).unwrap(),
            clusters: ClusterSpec::uniform(64),
            init: InitScheme::LinearPositive,
            entropy_mode: Some(EntropyMode::Indices),
            ..PipelineConfig::default()
        };
        let r = report(&m, &cfg).unwrap();
        assert!(r.pruned_le_raw());
        assert_eq!(r.huffman_le_quantized(), Some(true));
        assert_eq!(r.quantized_le_pruned(), Some(true));
    }

    #[test]
    fn sweep_is_monotone() {
        let m = random_model(4096, 5);
        let ts = [0.0, 0.1, 0.2, 0.4, 0.8];
        let s = threshold_sweep(&m, &ts, PruneKey::Modulus).unwrap();
        assert_eq!(s[0].1, 0.0);
        assert!(s.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn key_values_and_table_render() {
        let m = random_model(256, 6);
        let cfg = PipelineConfig {
            clusters: ClusterSpec::uniform(4),
            ..PipelineConfig::default()
        };
        let r = report(&m, &cfg).unwrap();
        let kv = r.to_key_values();
        assert!(kv.contains("raw.weight_bytes: 2048\n"));
        assert!(kv.contains("layer.w.clusters: 4\n"));
        assert!(kv.contains("layer.w.entropy.real: "));
        assert!(r.to_table().lines().count() >= 7);
    }

    #[test]
    fn inspect_reports_index_bits() {
        let m = random_model(512, 7);
        let cfg = PipelineConfig {
            clusters: ClusterSpec::uniform(5),
            entropy_mode: Some(EntropyMode::Indices),
            ..PipelineConfig::default()
        };
        let c = crate::container::compress(&m, &cfg).unwrap();
        let s = inspect(&c).unwrap();
        assert_eq!(s[0].clusters, 5);
        assert_eq!(s[0].index_bits, 3);
        assert_eq!(s[0].encoding, "huffman-indices");
        assert!(s[0].stream_entropy[0].1 <= 5f64.log2() + 1e-12);
        assert!(format_inspect(&c, &s).contains("huffman-indices"));
    }

    #[test]
    fn diff_distances() {
        let a = random_model(64, 8);
        assert_eq!(diff(&a, &a).unwrap().max_distance, 0.0);
        let shifted: Vec<_> = a.layers()[0]
            .values()
            .iter()
            .map(|v| ComplexScalar::new(v.re + 0.375, v.im))
            .collect();
        let b = RawModel::new(vec![ComplexTensor::new("w", vec![8, 8], shifted).unwrap()]).unwrap();
        let d = diff(&a, &b).unwrap();
        assert!((d.max_distance - 0.375).abs() < 1e-6);
        let c = random_model(128, 8);
        assert!(diff(&a, &c).is_err());
    }
}
