//! Magnitude pruning of complex weights into CSR form.

use std::fmt;
use std::str::FromStr;

use crate::tensor::{element_count, ComplexScalar, ComplexTensor};
use crate::{Error, Result};

/// Which scalar of a complex weight is compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruneKey {
    #[default]
    Modulus,
    RealPart,
    ImagPart,
}

impl PruneKey {
    /// The compared magnitude, computed in f64.
    pub fn key(self, w: ComplexScalar) -> f64 {
        match self {
            PruneKey::Modulus => (w.re as f64).hypot(w.im as f64),
            PruneKey::RealPart => (w.re as f64).abs(),
            PruneKey::ImagPart => (w.im as f64).abs(),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            PruneKey::Modulus => 0,
            PruneKey::RealPart => 1,
            PruneKey::ImagPart => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PruneKey::Modulus),
            1 => Some(PruneKey::RealPart),
            2 => Some(PruneKey::ImagPart),
            _ => None,
        }
    }
}

impl FromStr for PruneKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modulus" => Ok(PruneKey::Modulus),
            "real" | "real_part" => Ok(PruneKey::RealPart),
            "imag" | "imag_part" => Ok(PruneKey::ImagPart),
            _ => Err(Error::InvalidConfig(format!("unknown prune key {s:?}"))),
        }
    }
}

impl fmt::Display for PruneKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneKey::Modulus => "modulus",
            PruneKey::RealPart => "real",
            PruneKey::ImagPart => "imag",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    threshold: f64,
    pub key: PruneKey,
}

impl PruneConfig {
    pub fn new(threshold: f64, key: PruneKey) -> Result<Self> {
        if !threshold.is_finite() || threshold < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "threshold must be finite and >= 0, got {threshold}"
            )));
        }
        Ok(PruneConfig { threshold, key })
    }

    pub fn modulus(threshold: f64) -> Result<Self> {
        Self::new(threshold, PruneKey::Modulus)
    }

    /// Threshold 0: nothing is removed.
    pub fn identity() -> Self {
        PruneConfig {
            threshold: 0.0,
            key: PruneKey::Modulus,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// A weight is pruned iff its key is strictly below the threshold.
    pub fn prunes(&self, w: ComplexScalar) -> bool {
        self.key.key(w) < self.threshold
    }
}

/// Row/column structure of a CSR matrix without values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrStructure {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<u32>,
    pub col_idx: Vec<u32>,
}

impl CsrStructure {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// True when every position is stored, so `row_ptr`/`col_idx` are implied.
    pub fn is_full(&self) -> bool {
        self.nnz() == self.rows * self.cols
    }

    /// Structure with every position present.
    pub fn full(rows: usize, cols: usize) -> Result<Self> {
        let cols_u32 = u32::try_from(cols)
            .map_err(|_| Error::ShapeMismatch(format!("{cols} columns exceed u32")))?;
        let total = rows
            .checked_mul(cols)
            .filter(|&t| t <= u32::MAX as usize)
            .ok_or_else(|| Error::ShapeMismatch(format!("{rows}x{cols} exceeds u32 entries")))?;
        let row_ptr = (0..=rows).map(|r| (r * cols) as u32).collect();
        let mut col_idx = Vec::with_capacity(total);
        for _ in 0..rows {
            col_idx.extend(0..cols_u32);
        }
        Ok(CsrStructure {
            rows,
            cols,
            row_ptr,
            col_idx,
        })
    }

    /// Checks the CSR invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::CorruptStream(format!("CSR structure: {msg}")));
        if self.row_ptr.len() != self.rows + 1 {
            return bad(format!(
                "row_ptr has {} entries for {} rows",
                self.row_ptr.len(),
                self.rows
            ));
        }
        if self.row_ptr[0] != 0 {
            return bad("row_ptr[0] != 0".into());
        }
        if self.row_ptr[self.rows] as usize != self.nnz() {
            return bad(format!(
                "row_ptr[rows] = {} but nnz = {}",
                self.row_ptr[self.rows],
                self.nnz()
            ));
        }
        for r in 0..self.rows {
            let (start, end) = (self.row_ptr[r] as usize, self.row_ptr[r + 1] as usize);
            if start > end {
                return bad(format!("row_ptr decreases at row {r}"));
            }
            let row = &self.col_idx[start..end];
            if row.iter().any(|&c| c as usize >= self.cols) {
                return bad(format!("column index out of range in row {r}"));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("columns not strictly increasing in row {r}"));
            }
        }
        Ok(())
    }

    /// Row-major flat positions of the stored entries, in CSR order.
    pub fn flat_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (start, end) = (self.row_ptr[r] as usize, self.row_ptr[r + 1] as usize);
            self.col_idx[start..end]
                .iter()
                .map(move |&c| r * self.cols + c as usize)
        })
    }
}

/// A pruned layer in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseComplexMatrix {
    pub structure: CsrStructure,
    pub values: Vec<ComplexScalar>,
}

impl SparseComplexMatrix {
    pub fn rows(&self) -> usize {
        self.structure.rows
    }

    pub fn cols(&self) -> usize {
        self.structure.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseComplexMatrix {
            structure: CsrStructure {
                rows,
                cols,
                row_ptr: vec![0; rows + 1],
                col_idx: Vec::new(),
            },
            values: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.structure.validate()?;
        if self.values.len() != self.structure.nnz() {
            return Err(Error::CorruptStream(format!(
                "{} values for {} stored positions",
                self.values.len(),
                self.structure.nnz()
            )));
        }
        Ok(())
    }
}

/// 2D view used for CSR: rank 1 is `1 x n`, rank 2 as-is, higher ranks
/// collapse to `extent0 x rest`.
pub fn matrixize(shape: &[usize]) -> Result<(usize, usize)> {
    let n = element_count(shape)
        .filter(|&n| n > 0 && !shape.is_empty())
        .ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} has no elements")))?;
    Ok(match shape.len() {
        1 => (1, n),
        _ => (shape[0], n / shape[0]),
    })
}

/// Removes every weight whose key is strictly below the threshold.
///
/// A layer where everything is pruned yields a valid empty matrix.
pub fn prune(tensor: &ComplexTensor, cfg: &PruneConfig) -> Result<SparseComplexMatrix> {
    let (rows, cols) = matrixize(tensor.shape())?;
    if tensor.len() > u32::MAX as usize {
        return Err(Error::ShapeMismatch(format!(
            "layer {:?} has more than 2^32 entries",
            tensor.name()
        )));
    }
    let mut row_ptr = Vec::with_capacity(rows + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0u32);
    for row in tensor.values().chunks_exact(cols) {
        for (c, &w) in row.iter().enumerate() {
            if !cfg.prunes(w) {
                col_idx.push(c as u32);
                values.push(w);
            }
        }
        row_ptr.push(values.len() as u32);
    }
    Ok(SparseComplexMatrix {
        structure: CsrStructure {
            rows,
            cols,
            row_ptr,
            col_idx,
        },
        values,
    })
}

/// Fraction of weights removed: `(n - nnz) / n`.
pub fn pruning_ratio(before: &ComplexTensor, after: &SparseComplexMatrix) -> f64 {
    let n = before.len();
    if n == 0 {
        return 0.0;
    }
    (n - after.nnz()) as f64 / n as f64
}

/// Expands a sparse matrix back to a dense tensor; pruned positions are `0+0j`.
pub fn densify(
    sparse: &SparseComplexMatrix,
    name: &str,
    original_shape: &[usize],
) -> Result<ComplexTensor> {
    let (rows, cols) = matrixize(original_shape)?;
    if (rows, cols) != (sparse.rows(), sparse.cols()) {
        return Err(Error::ShapeMismatch(format!(
            "layer {name:?}: shape {original_shape:?} is {rows}x{cols}, sparse matrix is {}x{}",
            sparse.rows(),
            sparse.cols()
        )));
    }
    sparse.validate()?;
    let mut dense = vec![ComplexScalar::ZERO; rows * cols];
    for (pos, &v) in sparse.structure.flat_positions().zip(&sparse.values) {
        dense[pos] = v;
    }
    ComplexTensor::new(name, original_shape.to_vec(), dense)
}
