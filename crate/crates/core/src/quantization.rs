//! Weight sharing by two-dimensional k-means over the complex plane.
//!
//! Each surviving weight `a + jb` is the point `(a, b)`. Lloyd's algorithm
//! partitions the points into `m` clusters minimising the within-cluster sum
//! of squared Euclidean distances; every weight is then replaced by the index
//! of its cluster centroid in a shared [`Codebook`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::pruning::{CsrStructure, SparseComplexMatrix};
use crate::tensor::ComplexScalar;
use crate::{Error, Result};

pub const MAX_CLUSTERS: usize = 65535;

/// The shared complex weights of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<ComplexScalar>,
}

impl Codebook {
    pub fn new(centroids: Vec<ComplexScalar>) -> Result<Self> {
        if centroids.is_empty() || centroids.len() > MAX_CLUSTERS {
            return Err(Error::InvalidConfig(format!(
                "codebook size {} outside 1..={MAX_CLUSTERS}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("non-finite centroid".into()));
        }
        Ok(Codebook { centroids })
    }

    /// Codebook of a layer with no surviving weights.
    pub fn empty() -> Self {
        Codebook {
            centroids: Vec::new(),
        }
    }

    pub fn centroids(&self) -> &[ComplexScalar] {
        &self.centroids
    }

    /// Mutable access for external fine-tuning of the shared weights.
    pub fn centroids_mut(&mut self) -> &mut [ComplexScalar] {
        &mut self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn contains(&self, v: ComplexScalar) -> bool {
        self.centroids.iter().any(|c| c.bit_eq(v))
    }
}

/// How the initial centroids are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// Random distinct data points.
    Forgy { seed: u64 },
    /// Equal-mass quantiles of the data projected on its principal axis.
    /// The seed is carried for interface symmetry; the scheme is deterministic.
    Density { seed: u64 },
    /// Evenly spaced on `im = mean(im)`.
    LinearHorizontal,
    /// Evenly spaced on `re = mean(re)`.
    LinearVertical,
    /// Evenly spaced on a line of positive slope through the mean.
    LinearPositive,
    /// Evenly spaced on a line of negative slope through the mean.
    #[default]
    LinearNegative,
}

impl InitScheme {
    pub fn seed(&self) -> u64 {
        match *self {
            InitScheme::Forgy { seed } | InitScheme::Density { seed } => seed,
            _ => 0,
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, InitScheme::Forgy { .. } | InitScheme::Density { .. })
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            InitScheme::Forgy { .. } => 0,
            InitScheme::Density { .. } => 1,
            InitScheme::LinearHorizontal => 2,
            InitScheme::LinearVertical => 3,
            InitScheme::LinearPositive => 4,
            InitScheme::LinearNegative => 5,
        }
    }

    pub(crate) fn from_code(code: u8, seed: u64) -> Option<Self> {
        Some(match code {
            0 => InitScheme::Forgy { seed },
            1 => InitScheme::Density { seed },
            2 => InitScheme::LinearHorizontal,
            3 => InitScheme::LinearVertical,
            4 => InitScheme::LinearPositive,
            5 => InitScheme::LinearNegative,
            _ => return None,
        })
    }

    /// Parses the CLI names (`forgy`, `density`, `linear-h`, `linear-v`,
    /// `linear-pos`, `linear-neg`).
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        Ok(match name {
            "forgy" => InitScheme::Forgy { seed },
            "density" => InitScheme::Density { seed },
            "linear-h" | "linear-horizontal" => InitScheme::LinearHorizontal,
            "linear-v" | "linear-vertical" => InitScheme::LinearVertical,
            "linear-pos" | "linear-positive" => InitScheme::LinearPositive,
            "linear-neg" | "linear-negative" => InitScheme::LinearNegative,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown init scheme {name:?}"
                )))
            }
        })
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitScheme::parse(s, 0)
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::Forgy { seed } => write!(f, "forgy(seed={seed})"),
            InitScheme::Density { seed } => write!(f, "density(seed={seed})"),
            InitScheme::LinearHorizontal => f.write_str("linear-h"),
            InitScheme::LinearVertical => f.write_str("linear-v"),
            InitScheme::LinearPositive => f.write_str("linear-pos"),
            InitScheme::LinearNegative => f.write_str("linear-neg"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once the relative WCSS decrease of an iteration falls below this.
    pub rel_tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iters: 300,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansReport {
    pub iterations: usize,
    pub final_wcss: f64,
    pub converged: bool,
    /// WCSS after initial assignment, then after each iteration.
    pub wcss_trace: Vec<f64>,
    /// Largest distance from a point to its assigned centroid.
    pub max_distance: f64,
}

impl KMeansReport {
    fn trivial() -> Self {
        KMeansReport {
            iterations: 0,
            final_wcss: 0.0,
            converged: true,
            wcss_trace: vec![0.0],
            max_distance: 0.0,
        }
    }
}

/// Sparse structure plus one codebook index per stored weight.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub structure: CsrStructure,
    pub codebook: Codebook,
    pub indices: Vec<u32>,
    pub original_shape: Vec<usize>,
}

impl QuantizedLayer {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.structure.validate()?;
        if self.indices.len() != self.structure.nnz() {
            return Err(Error::CorruptStream(format!(
                "{} indices for {} stored positions",
                self.indices.len(),
                self.structure.nnz()
            )));
        }
        let m = self.codebook.len();
        if let Some(&bad) = self.indices.iter().find(|&&i| i as usize >= m) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                size: m,
            });
        }
        Ok(())
    }
}

struct Moments {
    mean_re: f64,
    mean_im: f64,
    var_re: f64,
    var_im: f64,
    cov: f64,
}

fn moments(points: &[ComplexScalar]) -> Moments {
    let n = points.len() as f64;
    let (sr, si) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.re as f64, b + p.im as f64));
    let (mean_re, mean_im) = (sr / n, si / n);
    let (mut var_re, mut var_im, mut cov) = (0.0, 0.0, 0.0);
    for p in points {
        let dr = p.re as f64 - mean_re;
        let di = p.im as f64 - mean_im;
        var_re += dr * dr;
        var_im += di * di;
        cov += dr * di;
    }
    Moments {
        mean_re,
        mean_im,
        var_re: var_re / n,
        var_im: var_im / n,
        cov: cov / n,
    }
}

/// A line `origin + t * dir` with unit `dir`.
#[derive(Debug, Clone, Copy)]
struct Line {
    origin: (f64, f64),
    dir: (f64, f64),
}

impl Line {
    fn through(origin: (f64, f64), dx: f64, dy: f64) -> Self {
        let norm = dx.hypot(dy);
        Line {
            origin,
            dir: (dx / norm, dy / norm),
        }
    }

    fn project(&self, p: ComplexScalar) -> f64 {
        (p.re as f64 - self.origin.0) * self.dir.0 + (p.im as f64 - self.origin.1) * self.dir.1
    }

    fn at(&self, t: f64) -> ComplexScalar {
        ComplexScalar::new(
            (self.origin.0 + t * self.dir.0) as f32,
            (self.origin.1 + t * self.dir.1) as f32,
        )
    }
}

/// Magnitude of the slope used by the inclined schemes: the least-squares
/// slope of `im` on `re`, falling back to `std(im)/std(re)`, then to 1.
fn inclined_slope(mo: &Moments) -> f64 {
    let s = (mo.cov / mo.var_re).abs();
    if s.is_finite() && s > 0.0 {
        return s;
    }
    let ratio = (mo.var_im / mo.var_re).sqrt();
    if ratio.is_finite() && ratio > 0.0 {
        ratio
    } else {
        1.0
    }
}

fn support_line(points: &[ComplexScalar], scheme: InitScheme) -> Line {
    let mo = moments(points);
    let origin = (mo.mean_re, mo.mean_im);
    match scheme {
        InitScheme::LinearHorizontal => Line::through(origin, 1.0, 0.0),
        InitScheme::LinearVertical => Line::through(origin, 0.0, 1.0),
        InitScheme::LinearPositive => Line::through(origin, 1.0, inclined_slope(&mo)),
        InitScheme::LinearNegative => Line::through(origin, 1.0, -inclined_slope(&mo)),
        InitScheme::Forgy { .. } | InitScheme::Density { .. } => {
            // principal axis of the covariance
            let theta = 0.5 * (2.0 * mo.cov).atan2(mo.var_re - mo.var_im);
            Line::through(origin, theta.cos(), theta.sin())
        }
    }
}

fn linear_init(points: &[ComplexScalar], m: usize, line: Line) -> Vec<ComplexScalar> {
    let (lo, hi) = points
        .iter()
        .map(|&p| line.project(p))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            (lo.min(t), hi.max(t))
        });
    if m == 1 {
        return vec![line.at(0.5 * (lo + hi))];
    }
    let step = (hi - lo) / (m - 1) as f64;
    (0..m)
        .map(|j| {
            let t = if j == m - 1 { hi } else { lo + step * j as f64 };
            line.at(t)
        })
        .collect()
}

fn density_init(points: &[ComplexScalar], m: usize, line: Line) -> Vec<ComplexScalar> {
    let mut proj: Vec<f64> = points.iter().map(|&p| line.project(p)).collect();
    proj.sort_by(f64::total_cmp);
    let n = proj.len();
    (0..m)
        .map(|j| {
            // midpoint of the j-th equal-mass bin, interpolated between order statistics
            let q = (j as f64 + 0.5) / m as f64;
            let h = (q * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let t = proj[lo] + (h - lo as f64) * (proj[hi] - proj[lo]);
            line.at(t)
        })
        .collect()
}

fn forgy_init(points: &[ComplexScalar], m: usize, seed: u64) -> Vec<ComplexScalar> {
    let mut seen = HashSet::new();
    let distinct: Vec<ComplexScalar> = points
        .iter()
        .copied()
        .filter(|p| seen.insert(p.to_bits()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if m <= distinct.len() {
        index::sample(&mut rng, distinct.len(), m)
            .into_iter()
            .map(|i| distinct[i])
            .collect()
    } else {
        let mut out = distinct.clone();
        while out.len() < m {
            out.push(distinct[rng.gen_range(0..distinct.len())]);
        }
        out
    }
}

/// Chooses `m` starting centroids for the given points.
pub fn init_centroids(points: &[ComplexScalar], m: usize, scheme: InitScheme) -> Result<Codebook> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if m == 0 || m > MAX_CLUSTERS {
        return Err(Error::InvalidConfig(format!(
            "cluster count {m} outside 1..={MAX_CLUSTERS}"
        )));
    }
    let centroids = match scheme {
        InitScheme::Forgy { seed } => forgy_init(points, m, seed),
        InitScheme::Density { .. } => density_init(points, m, support_line(points, scheme)),
        _ => linear_init(points, m, support_line(points, scheme)),
    };
    Codebook::new(centroids)
}

/// Index of the nearest centroid, lowest index on ties, with its squared distance.
fn nearest(p: ComplexScalar, centroids: &[ComplexScalar]) -> (u32, f64) {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = p.dist_sq(*c);
        if d < best_d {
            best_d = d;
            best = i as u32;
        }
    }
    (best, best_d)
}

fn assign(points: &[ComplexScalar], centroids: &[ComplexScalar]) -> (Vec<u32>, Vec<f64>) {
    const PAR_MIN: usize = 4096;
    let pairs: Vec<(u32, f64)> = if points.len() >= PAR_MIN {
        points
            .par_iter()
            .with_min_len(PAR_MIN)
            .map(|&p| nearest(p, centroids))
            .collect()
    } else {
        points.iter().map(|&p| nearest(p, centroids)).collect()
    };
    pairs.into_iter().unzip()
}

/// Moves points into empty clusters: each empty cluster takes the point
/// farthest from its own centroid (lowest index on ties), drawn only from
/// clusters that keep at least one member.
fn reseed_empty(
    points: &[ComplexScalar],
    centroids: &mut [ComplexScalar],
    assignment: &mut [u32],
    dists: &mut [f64],
) {
    let mut counts = vec![0usize; centroids.len()];
    for &a in assignment.iter() {
        counts[a as usize] += 1;
    }
    for empty in 0..centroids.len() {
        if counts[empty] != 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for (i, &d) in dists.iter().enumerate() {
            if counts[assignment[i] as usize] > 1 && pick.is_none_or(|p| d > dists[p]) {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { break };
        counts[assignment[i] as usize] -= 1;
        counts[empty] = 1;
        assignment[i] = empty as u32;
        dists[i] = 0.0;
        centroids[empty] = points[i];
    }
}

/// Recomputes each non-empty cluster's centroid as the mean of its members,
/// summing sequentially in point order.
fn update_means(points: &[ComplexScalar], assignment: &[u32], centroids: &mut [ComplexScalar]) {
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); centroids.len()];
    for (p, &a) in points.iter().zip(assignment) {
        let s = &mut sums[a as usize];
        s.0 += p.re as f64;
        s.1 += p.im as f64;
        s.2 += 1;
    }
    for (c, &(sr, si, n)) in centroids.iter_mut().zip(&sums) {
        if n > 0 {
            *c = ComplexScalar::new((sr / n as f64) as f32, (si / n as f64) as f32);
        }
    }
}

fn total(dists: &[f64]) -> f64 {
    dists.iter().sum()
}

/// Lloyd's algorithm from explicit starting centroids.
pub fn lloyd(
    points: &[ComplexScalar],
    initial: Codebook,
    params: KMeansParams,
) -> Result<(Codebook, Vec<u32>, KMeansReport)> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if initial.is_empty() {
        return Err(Error::InvalidConfig("empty initial codebook".into()));
    }
    let mut centroids = initial.centroids;
    let (mut assignment, mut dists) = assign(points, &centroids);
    let mut wcss = total(&dists);
    let mut trace = vec![wcss];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iters {
        if wcss == 0.0 {
            converged = true;
            break;
        }
        reseed_empty(points, &mut centroids, &mut assignment, &mut dists);
        update_means(points, &assignment, &mut centroids);
        let (next_assignment, next_dists) = assign(points, &centroids);
        // unchanged labels give unchanged means: a fixed point
        let fixed = next_assignment == assignment;
        (assignment, dists) = (next_assignment, next_dists);
        let next = total(&dists);
        iterations += 1;
        trace.push(next);
        let rel = (wcss - next) / wcss;
        wcss = next;
        if fixed || rel < params.rel_tol {
            converged = true;
            break;
        }
    }
    let max_distance = dists.iter().fold(0.0f64, |a, &d| a.max(d)).sqrt();
    let report = KMeansReport {
        iterations,
        final_wcss: wcss,
        converged,
        wcss_trace: trace,
        max_distance,
    };
    Ok((Codebook { centroids }, assignment, report))
}

/// Seeds with `scheme` and runs Lloyd's algorithm.
pub fn kmeans2d(
    points: &[ComplexScalar],
    m: usize,
    scheme: InitScheme,
    params: KMeansParams,
) -> Result<(Codebook, Vec<u32>, KMeansReport)> {
    let init = init_centroids(points, m, scheme)?;
    lloyd(points, init, params)
}

/// Clusters the stored weights of a pruned layer. Pruned positions never
/// take part; a layer with no survivors gives an empty codebook and index
/// table. The cluster count is capped at the number of stored weights.
pub fn quantize_layer(
    sparse: &SparseComplexMatrix,
    original_shape: &[usize],
    m: usize,
    scheme: InitScheme,
    params: KMeansParams,
) -> Result<(QuantizedLayer, KMeansReport)> {
    if m == 0 || m > MAX_CLUSTERS {
        return Err(Error::InvalidConfig(format!(
            "cluster count {m} outside 1..={MAX_CLUSTERS}"
        )));
    }
    sparse.validate()?;
    if sparse.nnz() == 0 {
        let q = QuantizedLayer {
            structure: sparse.structure.clone(),
            codebook: Codebook::empty(),
            indices: Vec::new(),
            original_shape: original_shape.to_vec(),
        };
        return Ok((q, KMeansReport::trivial()));
    }
    let m = m.min(sparse.nnz());
    let (codebook, indices, report) = kmeans2d(&sparse.values, m, scheme, params)?;
    let q = QuantizedLayer {
        structure: sparse.structure.clone(),
        codebook,
        indices,
        original_shape: original_shape.to_vec(),
    };
    Ok((q, report))
}

/// Replaces every index with its centroid.
pub fn dequantize_layer(q: &QuantizedLayer) -> Result<SparseComplexMatrix> {
    q.validate()?;
    let cb = q.codebook.centroids();
    Ok(SparseComplexMatrix {
        structure: q.structure.clone(),
        values: q.indices.iter().map(|&i| cb[i as usize]).collect(),
    })
}
