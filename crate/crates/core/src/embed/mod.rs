//! Dense embedding matrices, cosine kernels, relation matrices and CT intensity
//! windowing.
//!
//! Values are held as `f64` and all similarity arithmetic runs in `f64`. The
//! on-disk format (see [`io`]) stores `f32`, so a matrix read from disk always
//! round-trips exactly.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{from_bytes, read_embeddings, to_bytes, write_embeddings};

/// Tolerance on row norms for matrices flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Row-major `rows x dim` matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Empty(
                "embedding matrix needs at least one row and one column",
            ));
        }
        if data.len() != rows * dim {
            return Err(Error::DimMismatch {
                context: "data length vs rows*dim",
                left: data.len(),
                right: rows * dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "non-finite value at row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            rows,
            dim,
            data,
            normalized: false,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("no rows given"))?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    context: "ragged rows",
                    left: row.len(),
                    right: dim,
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    /// All-zero matrix; used for gradient accumulators.
    pub fn zeros(rows: usize, dim: usize) -> Self {
        assert!(rows > 0 && dim > 0, "zeros() needs a non-empty shape");
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
            normalized: false,
        }
    }

    /// Sets the normalized flag after checking every row has unit norm.
    pub fn with_normalized_flag(mut self, normalized: bool) -> Result<Self> {
        if normalized {
            for i in 0..self.rows {
                let norm = l2_norm(self.row(i));
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::Degenerate(format!(
                        "row {i} has norm {norm}, cannot flag matrix as normalized"
                    )));
                }
            }
        }
        self.normalized = normalized;
        Ok(self)
    }

    /// Returns a copy with every row scaled to unit L2 norm.
    pub fn normalize_rows(&self) -> Result<Self> {
        let (units, _) = unit_rows(self, "matrix")?;
        Ok(Self {
            rows: self.rows,
            dim: self.dim,
            data: units,
            normalized: true,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        self.normalized = false;
        &mut self.data
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidArgument(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dim, data)
    }

    /// Right-multiplies by a row-major `dim x out_dim` matrix.
    pub fn matmul(&self, rhs: &[f64], out_dim: usize) -> Result<Self> {
        if rhs.len() != self.dim * out_dim {
            return Err(Error::DimMismatch {
                context: "matmul right-hand side",
                left: rhs.len(),
                right: self.dim * out_dim,
            });
        }
        let mut out = vec![0.0; self.rows * out_dim];
        for (row, dst) in self.iter_rows().zip(out.chunks_exact_mut(out_dim)) {
            for (k, &a) in row.iter().enumerate() {
                let rhs_row = &rhs[k * out_dim..(k + 1) * out_dim];
                for (d, &b) in dst.iter_mut().zip(rhs_row) {
                    *d += a * b;
                }
            }
        }
        Self::new(self.rows, out_dim, out)
    }

    /// Rounds every value through `f32`, the storage precision of the file
    /// format.
    pub fn round_to_f32(&self) -> Self {
        Self {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
            normalized: self.normalized,
        }
    }

    /// Squared Frobenius norm of `self - other`.
    pub fn squared_distance(&self, other: &Self) -> Result<f64> {
        check_same_shape(self, other, "squared distance")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

pub(crate) fn check_same_shape(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    context: &'static str,
) -> Result<()> {
    if a.rows != b.rows {
        return Err(Error::DimMismatch {
            context,
            left: a.rows,
            right: b.rows,
        });
    }
    if a.dim != b.dim {
        return Err(Error::DimMismatch {
            context,
            left: a.dim,
            right: b.dim,
        });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit-normalized copy of every row plus the original norms. Zero rows are an
/// error naming the offending row.
pub(crate) fn unit_rows(m: &EmbeddingMatrix, name: &'static str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut units = Vec::with_capacity(m.data.len());
    let mut norms = Vec::with_capacity(m.rows);
    for (i, row) in m.iter_rows().enumerate() {
        let norm = l2_norm(row);
        if norm == 0.0 {
            return Err(Error::ZeroRow {
                matrix: name,
                row: i,
            });
        }
        units.extend(row.iter().map(|v| v / norm));
        norms.push(norm);
    }
    Ok((units, norms))
}

/// Cosine of the angle between `a` and `b`.
///
/// Zero vectors are rejected rather than mapped to 0, since a silent 0 would
/// corrupt any argmax taken over the result.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            context: "cosine similarity operands",
            left: a.len(),
            right: b.len(),
        });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Symmetric `m x m` matrix of pairwise cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    size: usize,
    values: Vec<f64>,
}

impl RelationMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.size).map(<[f64]>::to_vec).collect()
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &Self) -> Result<f64> {
        if self.size != other.size {
            return Err(Error::DimMismatch {
                context: "relation matrix sizes",
                left: self.size,
                right: other.size,
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub(crate) fn from_units(units: &[f64], rows: usize, dim: usize) -> Self {
        let mut values = vec![0.0; rows * rows];
        for i in 0..rows {
            let ui = &units[i * dim..(i + 1) * dim];
            for j in i..rows {
                let c = dot(ui, &units[j * dim..(j + 1) * dim]);
                values[i * rows + j] = c;
                values[j * rows + i] = c;
            }
        }
        Self { size: rows, values }
    }
}

/// Pairwise cosine similarities between the rows of `e`.
pub fn relation_matrix(e: &EmbeddingMatrix) -> Result<RelationMatrix> {
    let (units, _) = unit_rows(e, "relation matrix input")?;
    Ok(RelationMatrix::from_units(&units, e.rows, e.dim))
}

/// Hounsfield-unit truncation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    low: f64,
    high: f64,
}

impl HuWindow {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && low < high) {
            return Err(Error::InvalidArgument(format!(
                "HU window needs finite low < high, got [{low}, {high}]"
            )));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }
}

impl Default for HuWindow {
    /// The chest CT lung window, [-1150, 350] HU.
    fn default() -> Self {
        Self {
            low: -1150.0,
            high: 350.0,
        }
    }
}

/// Clamps `v` to the window and maps it affinely onto [-1, 1].
pub fn hu_normalize(v: f64, w: &HuWindow) -> f64 {
    let clamped = v.clamp(w.low, w.high);
    2.0 * (clamped - w.low) / (w.high - w.low) - 1.0
}
