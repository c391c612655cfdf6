//! Cell-centred grids on intervals and rectangles, the Neumann-closed
//! Laplacian, and midpoint quadrature.
//!
//! Ghost cells mirror the adjacent interior cell, so every boundary face
//! carries zero flux. The assembled Laplacian is symmetric with zero row and
//! column sums; both conservation laws of the simulator rest on that.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

/// Grids at least this large apply stencils with the parallel policy.
pub const PARALLEL_STENCIL_CELLS: usize = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("axis {axis}: cell count must be positive")]
    EmptyAxis { axis: usize },
    #[error("axis {axis}: length must be positive and finite, got {length}")]
    Length { axis: usize, length: f64 },
    #[error("field has {found} values but the grid has {expected} cells")]
    Mismatch { expected: usize, found: usize },
    #[error("field value at cell {index} is not finite")]
    NonFinite { index: usize },
}

/// Uniform cell-centred grid of dimension 1 or 2.
///
/// Values are stored row-major: in 2D cell `(i, j)` lives at `i * cells[1] + j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    cells: Vec<usize>,
    lengths: Vec<f64>,
}

impl Grid {
    pub fn new(cells: &[usize], lengths: &[f64]) -> Result<Self, GridError> {
        let dim = cells.len();
        if !(1..=2).contains(&dim) || lengths.len() != dim {
            return Err(GridError::Dimension(dim.max(lengths.len())));
        }
        for (axis, (&n, &l)) in cells.iter().zip(lengths).enumerate() {
            if n == 0 {
                return Err(GridError::EmptyAxis { axis });
            }
            if !(l.is_finite() && l > 0.0) {
                return Err(GridError::Length { axis, length: l });
            }
        }
        Ok(Self {
            cells: cells.to_vec(),
            lengths: lengths.to_vec(),
        })
    }

    pub fn interval(cells: usize, length: f64) -> Result<Self, GridError> {
        Self::new(&[cells], &[length])
    }

    pub fn rectangle(cells: [usize; 2], lengths: [f64; 2]) -> Result<Self, GridError> {
        Self::new(&cells, &lengths)
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// |Ω|
    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Stride of `axis` in the flat row-major layout.
    fn stride(&self, axis: usize) -> usize {
        self.cells[axis + 1..].iter().product()
    }

    fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim() {
            1 => [idx, 0],
            _ => [idx / self.cells[1], idx % self.cells[1]],
        }
    }

    /// Coordinates of the centre of cell `idx` (second entry is 0 in 1D).
    pub fn cell_center(&self, idx: usize) -> [f64; 2] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 2];
        for a in 0..self.dim() {
            x[a] = (m[a] as f64 + 0.5) * self.spacing(a);
        }
        x
    }

    /// Calls `visit(neighbor, 1/h²)` for every interior face of cell `idx`.
    pub fn for_each_neighbor(&self, idx: usize, mut visit: impl FnMut(usize, f64)) {
        let m = self.multi_index(idx);
        for a in 0..self.dim() {
            let w = 1.0 / (self.spacing(a) * self.spacing(a));
            let s = self.stride(a);
            if m[a] > 0 {
                visit(idx - s, w);
            }
            if m[a] + 1 < self.cells[a] {
                visit(idx + s, w);
            }
        }
    }

    /// Interior-face neighbours of cell `idx` with their weights 1/h².
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = (usize, f64)> {
        let mut buf = [(0usize, 0.0f64); 4];
        let mut len = 0;
        self.for_each_neighbor(idx, |nb, w| {
            buf[len] = (nb, w);
            len += 1;
        });
        buf.into_iter().take(len)
    }

    /// Half-bandwidth of the Laplacian in the flat layout.
    pub fn stencil_bandwidth(&self) -> usize {
        if self.dim() == 1 || self.len() == 1 {
            1
        } else {
            self.cells[1]
        }
    }

    pub fn check(&self, f: &[f64]) -> Result<(), GridError> {
        if f.len() != self.len() {
            return Err(GridError::Mismatch {
                expected: self.len(),
                found: f.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn laplacian_at(&self, f: &[f64], idx: usize) -> f64 {
        let center = f[idx];
        let mut acc = 0.0;
        self.for_each_neighbor(idx, |nb, w| acc += w * (f[nb] - center));
        acc
    }

    /// Unchecked Laplacian into a caller-provided buffer.
    pub fn laplacian_into(&self, f: &[f64], out: &mut [f64]) {
        let exec = if self.len() >= PARALLEL_STENCIL_CELLS {
            Execution::Parallel
        } else {
            Execution::Sequential
        };
        self.laplacian_into_with(exec, f, out);
    }

    pub fn laplacian_into_with(&self, exec: Execution, f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(out.len(), self.len());
        let chunk = self.stencil_bandwidth().max(256);
        exec.for_each_chunk_mut(out, chunk, |c, vals| {
            let start = c * chunk;
            for (k, v) in vals.iter_mut().enumerate() {
                *v = self.laplacian_at(f, start + k);
            }
        });
    }

    /// Discrete Neumann Laplacian Δ_h.
    pub fn neumann_laplacian(&self, f: &Field) -> Result<Field, GridError> {
        self.check(f)?;
        let mut out = vec![0.0; self.len()];
        self.laplacian_into(f, &mut out);
        Ok(Field::from_vec_unchecked(out))
    }

    /// Assembled entries `(row, col, value)` of Δ_h, diagonal included.
    pub fn laplacian_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut entries = Vec::with_capacity(self.len() * (1 + 2 * self.dim()));
        for i in 0..self.len() {
            let mut diag = 0.0;
            self.for_each_neighbor(i, |j, w| {
                entries.push((i, j, w));
                diag -= w;
            });
            entries.push((i, i, diag));
        }
        entries
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        self.integrate(f) / self.volume()
    }

    /// Quadrature inner product ∫ f g.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * self.cell_volume()
    }

    /// Face-based bilinear form ⟨∇f, ∇g⟩; equals ⟨-Δ_h f, g⟩ by summation by parts.
    pub fn grad_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let mut acc = 0.0;
        for a in 0..self.dim() {
            let w = 1.0 / (self.spacing(a) * self.spacing(a));
            let s = self.stride(a);
            let mut axis_acc = 0.0;
            for i in 0..self.len() {
                let m = self.multi_index(i);
                if m[a] + 1 < self.cells[a] {
                    axis_acc += (f[i + s] - f[i]) * (g[i + s] - g[i]);
                }
            }
            acc += w * axis_acc;
        }
        acc * self.cell_volume()
    }

    /// |∇f|₂² over interior faces; boundary faces carry no flux.
    pub fn grad_sq_norm(&self, f: &[f64]) -> f64 {
        self.grad_inner(f, f)
    }

    /// Smallest nonzero eigenvalue (π/L_max)² of the continuous Neumann operator -Δ.
    pub fn first_neumann_eigenvalue(&self) -> f64 {
        let l = self.lengths.iter().cloned().fold(0.0, f64::max);
        (PI / l).powi(2)
    }

    /// Eigenvalue of -Δ_h for the cosine mode `k` (exact for the discrete operator).
    pub fn discrete_eigenvalue(&self, k: [usize; 2]) -> f64 {
        (0..self.dim())
            .map(|a| {
                let h = self.spacing(a);
                let s = (k[a] as f64 * PI / (2.0 * self.cells[a] as f64)).sin();
                4.0 * s * s / (h * h)
            })
            .sum()
    }

    /// Discrete cosine mode cos(k₀πx/L₀)·cos(k₁πy/L₁) sampled at cell centres.
    /// These are the eigenvectors of Δ_h and are mean-free unless `k == [0, 0]`.
    pub fn cosine_mode(&self, k: [usize; 2]) -> Field {
        Field::from_fn(self, |x| {
            (0..self.dim())
                .map(|a| (k[a] as f64 * PI * x[a] / self.lengths[a]).cos())
                .product()
        })
    }
}

/// Scalar values on the cells of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self, GridError> {
        grid.check(&values)?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self {
            values: (0..grid.len()).map(|i| f(grid.cell_center(i))).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// max − min over cells.
    pub fn spread(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}
