//! Lattices, elementary cells and their dual mode sets.
//!
//! A cell is always represented as a (possibly anisotropic) box spanned by
//! three vectors. For `d = 3` these are the lattice periods. For `d < 3` the
//! periods occupy the leading coordinates and every unbounded coordinate axis
//! is truncated to `[-L, L]` and wrapped periodically, so the truncated axis
//! contributes the box vector `2L e_i`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// One plane-wave mode of the cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualMode {
    /// Integer index `m`, each component in `[-n/2, n/2)`.
    pub index: [i64; 3],
    /// Wavevector `sum_i m_i b_i`.
    pub k: Vec3,
    /// `|k|^2`.
    pub k2: f64,
    /// Squared wavenumber used by even multipliers. Equals `k2` except on
    /// Nyquist rows, where the cross terms between the Nyquist component and
    /// the remaining components are averaged out so that `m` and `-m` (which
    /// alias onto the same grid mode) share one symbol.
    pub k2_even: f64,
    /// True when some axis sits on its Nyquist index `-n/2`.
    pub nyquist: bool,
}

#[derive(Debug)]
struct CellData {
    dim: usize,
    periods: Vec<Vec3>,
    trunc: Vec<f64>,
    grid: [usize; 3],
    box_vectors: [Vec3; 3],
    dual: [Vec3; 3],
    origin: Vec3,
    volume: f64,
    modes: Vec<DualMode>,
}

/// Geometry of an elementary cell `T_d` together with its sampling grid.
///
/// Immutable after construction; clones share the same data.
#[derive(Clone)]
pub struct Cell(Arc<CellData>);

impl fmt::Debug for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cell")
            .field("dim", &self.0.dim)
            .field("periods", &self.0.periods)
            .field("trunc", &self.0.trunc)
            .field("grid", &self.0.grid)
            .field("volume", &self.0.volume)
            .finish()
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.dim == other.0.dim
                && self.0.grid == other.0.grid
                && self.0.periods == other.0.periods
                && self.0.trunc == other.0.trunc)
    }
}

/// Serializable description of a cell, as found in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub d: usize,
    pub periods: Vec<Vec3>,
    #[serde(default)]
    pub trunc: Vec<f64>,
    pub grid: [usize; 3],
}

impl CellSpec {
    pub fn build(&self) -> Result<Cell> {
        Cell::new(self.d, &self.periods, &self.trunc, self.grid)
    }
}

impl Cell {
    /// Builds a cell of lattice dimension `dim`.
    ///
    /// `periods` holds `dim` vectors and `trunc` holds `3 - dim` half-lengths,
    /// one per unbounded axis in increasing coordinate order.
    pub fn new(dim: usize, periods: &[Vec3], trunc: &[f64], grid: [usize; 3]) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::BadLattice(format!("dimension {dim} not in 1..=3")));
        }
        if periods.len() != dim {
            return Err(Error::BadLattice(format!(
                "expected {dim} periods, got {}",
                periods.len()
            )));
        }
        if trunc.len() != 3 - dim {
            return Err(Error::BadTruncation(format!(
                "expected {} half-lengths, got {}",
                3 - dim,
                trunc.len()
            )));
        }
        if grid.iter().any(|&n| n < 2 || n % 2 != 0) {
            return Err(Error::BadGrid(grid));
        }
        if periods.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::BadLattice("non-finite period component".into()));
        }
        if let Some(l) = trunc.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::BadTruncation(format!("half-length {l} must be > 0")));
        }

        // Gram determinant of the periods, scaled to be dimensionless.
        let gram: Vec<Vec<f64>> = periods
            .iter()
            .map(|a| periods.iter().map(|b| dot(a, b)).collect())
            .collect();
        let gram_det = match dim {
            1 => gram[0][0],
            2 => gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0],
            _ => {
                let g = &gram;
                g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1])
                    - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
                    + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0])
            }
        };
        let scale: f64 = periods.iter().map(|a| dot(a, a)).product();
        if !(scale > 0.0) || gram_det <= 1e-12 * scale {
            return Err(Error::DegenerateLattice(gram_det));
        }

        // Periods must avoid the truncated coordinate axes.
        for a in periods {
            let len = norm(a);
            for axis in dim..3 {
                if a[axis].abs() > 1e-12 * len {
                    return Err(Error::BadLattice(format!(
                        "period {a:?} has a component along truncated axis x{}",
                        axis + 1
                    )));
                }
            }
        }

        let mut box_vectors = [[0.0; 3]; 3];
        let mut origin = [0.0; 3];
        for (i, a) in periods.iter().enumerate() {
            box_vectors[i] = *a;
        }
        for (j, &l) in trunc.iter().enumerate() {
            let axis = dim + j;
            box_vectors[axis][axis] = 2.0 * l;
            origin[axis] = -l;
        }

        let triple = dot(&box_vectors[0], &cross(&box_vectors[1], &box_vectors[2]));
        let volume = triple.abs();
        let dual = [
            scale_vec(cross(&box_vectors[1], &box_vectors[2]), 2.0 * PI / triple),
            scale_vec(cross(&box_vectors[2], &box_vectors[0]), 2.0 * PI / triple),
            scale_vec(cross(&box_vectors[0], &box_vectors[1]), 2.0 * PI / triple),
        ];

        let modes = build_modes(grid, &dual);
        Ok(Cell(Arc::new(CellData {
            dim,
            periods: periods.to_vec(),
            trunc: trunc.to_vec(),
            grid,
            box_vectors,
            dual,
            origin,
            volume,
            modes,
        })))
    }

    /// Unit cube torus with an `n^3` grid.
    pub fn unit_torus(n: usize) -> Result<Self> {
        Cell::new(
            3,
            &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            &[],
            [n, n, n],
        )
    }

    pub fn spec(&self) -> CellSpec {
        CellSpec {
            d: self.0.dim,
            periods: self.0.periods.clone(),
            trunc: self.0.trunc.clone(),
            grid: self.0.grid,
        }
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn periods(&self) -> &[Vec3] {
        &self.0.periods
    }

    pub fn trunc(&self) -> &[f64] {
        &self.0.trunc
    }

    pub fn grid(&self) -> [usize; 3] {
        self.0.grid
    }

    pub fn len(&self) -> usize {
        self.0.grid.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn volume(&self) -> f64 {
        self.0.volume
    }

    /// Volume element of one grid sample.
    pub fn dv(&self) -> f64 {
        self.0.volume / self.len() as f64
    }

    pub fn box_vectors(&self) -> &[Vec3; 3] {
        &self.0.box_vectors
    }

    /// Dual generators `b_i` with `b_i . a_j = 2 pi delta_ij`.
    pub fn dual_generators(&self) -> &[Vec3; 3] {
        &self.0.dual
    }

    /// Cartesian position of the grid corner (fractional coordinate zero).
    pub fn origin(&self) -> Vec3 {
        self.0.origin
    }

    pub fn is_truncated_axis(&self, axis: usize) -> bool {
        axis >= self.0.dim
    }

    /// Largest distance between neighbouring samples along any box vector.
    pub fn max_spacing(&self) -> f64 {
        (0..3)
            .map(|i| norm(&self.0.box_vectors[i]) / self.0.grid[i] as f64)
            .fold(0.0, f64::max)
    }

    /// Shortest lattice period.
    pub fn min_period(&self) -> f64 {
        self.0.periods.iter().map(norm).fold(f64::INFINITY, f64::min)
    }

    pub fn modes(&self) -> &[DualMode] {
        &self.0.modes
    }

    /// Flat row-major offset of the grid point `(i1, i2, i3)`.
    pub fn flat(&self, i: [usize; 3]) -> usize {
        let [_, n2, n3] = self.0.grid;
        (i[0] * n2 + i[1]) * n3 + i[2]
    }

    /// Inverse of [`Cell::flat`].
    pub fn unflat(&self, idx: usize) -> [usize; 3] {
        let [_, n2, n3] = self.0.grid;
        [idx / (n2 * n3), (idx / n3) % n2, idx % n3]
    }

    /// Cartesian coordinates of a fractional point.
    pub fn to_cartesian(&self, frac: &Vec3) -> Vec3 {
        let mut x = self.0.origin;
        for (f, a) in frac.iter().zip(&self.0.box_vectors) {
            for c in 0..3 {
                x[c] += f * a[c];
            }
        }
        x
    }

    /// Fractional coordinates of a Cartesian point.
    pub fn to_fractional(&self, x: &Vec3) -> Vec3 {
        let rel = [
            x[0] - self.0.origin[0],
            x[1] - self.0.origin[1],
            x[2] - self.0.origin[2],
        ];
        let mut f = [0.0; 3];
        for (fi, b) in f.iter_mut().zip(&self.0.dual) {
            *fi = dot(b, &rel) / (2.0 * PI);
        }
        f
    }

    /// Converts a Cartesian displacement into a fractional one.
    pub fn displacement_to_fractional(&self, dx: &Vec3) -> Vec3 {
        let mut f = [0.0; 3];
        for (fi, b) in f.iter_mut().zip(&self.0.dual) {
            *fi = dot(b, dx) / (2.0 * PI);
        }
        f
    }

    /// Cartesian coordinates of grid point `idx`.
    pub fn point(&self, idx: usize) -> Vec3 {
        let i = self.unflat(idx);
        let frac = [
            i[0] as f64 / self.0.grid[0] as f64,
            i[1] as f64 / self.0.grid[1] as f64,
            i[2] as f64 / self.0.grid[2] as f64,
        ];
        self.to_cartesian(&frac)
    }

    /// Same geometry with a different grid.
    pub fn with_grid(&self, grid: [usize; 3]) -> Result<Self> {
        Cell::new(self.0.dim, &self.0.periods, &self.0.trunc, grid)
    }

    /// Same periods and grid with new truncation half-lengths.
    pub fn with_trunc(&self, trunc: &[f64], grid: [usize; 3]) -> Result<Self> {
        Cell::new(self.0.dim, &self.0.periods, trunc, grid)
    }
}

fn scale_vec(v: Vec3, s: f64) -> Vec3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn build_modes(grid: [usize; 3], dual: &[Vec3; 3]) -> Vec<DualMode> {
    let [n1, n2, n3] = grid;
    let mut modes = Vec::with_capacity(n1 * n2 * n3);
    for i1 in 0..n1 {
        for i2 in 0..n2 {
            for i3 in 0..n3 {
                let index = [
                    signed_index(i1, n1),
                    signed_index(i2, n2),
                    signed_index(i3, n3),
                ];
                let mut k = [0.0; 3];
                let mut k_regular = [0.0; 3];
                let mut nyq_sq = 0.0;
                let mut nyquist = false;
                for axis in 0..3 {
                    let m = index[axis] as f64;
                    let contrib = scale_vec(dual[axis], m);
                    for c in 0..3 {
                        k[c] += contrib[c];
                    }
                    if index[axis] == -(grid[axis] as i64 / 2) {
                        nyquist = true;
                        nyq_sq += dot(&contrib, &contrib);
                    } else {
                        for c in 0..3 {
                            k_regular[c] += contrib[c];
                        }
                    }
                }
                let k2 = dot(&k, &k);
                let k2_even = if nyquist {
                    dot(&k_regular, &k_regular) + nyq_sq
                } else {
                    k2
                };
                modes.push(DualMode {
                    index,
                    k,
                    k2,
                    k2_even,
                    nyquist,
                });
            }
        }
    }
    modes
}

/// Ordered dual modes of `cell` (row-major, FFT wrap-around order).
pub fn dual_modes(cell: &Cell) -> &[DualMode] {
    cell.modes()
}
