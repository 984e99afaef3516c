//! Two-level structured mesh hierarchy on a rectangle.
//!
//! The fine grid is an `nx × ny` partition into axis-aligned cells with one
//! pressure unknown per cell and one normal-velocity unknown per edge. The
//! coarse grid groups `r × r` fine cells per coarse cell. Both levels use
//! row-major indexing (x fastest). The canonical flattening of a fine-cell
//! vector is coarse-major: coarse cells in row-major order, and within each
//! coarse cell the `r × r` fine cells in local row-major order.

use crate::error::{Error, Result};

/// Uniform rectangular fine grid.
///
/// Edges are split by normal direction: x-normal edges sit between
/// horizontally adjacent cells (including the left/right boundary), y-normal
/// edges between vertically adjacent cells (including bottom/top boundary).
#[derive(Debug, Clone)]
pub struct FineGrid {
    /// Cells along x.
    pub nx: usize,
    /// Cells along y.
    pub ny: usize,
    /// Cell width.
    pub hx: f64,
    /// Cell height.
    pub hy: f64,
}

/// Which side of a cell an edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Normal along +x (edge between cells (i-1,j) and (i,j)).
    XNormal,
    /// Normal along +y (edge between cells (i,j-1) and (i,j)).
    YNormal,
}

impl FineGrid {
    /// Grid over the unit square.
    pub fn new(nx: usize, ny: usize) -> Self {
        Self::with_domain(nx, ny, 1.0, 1.0)
    }

    /// Grid over a `[0,lx] × [0,ly]` rectangle.
    pub fn with_domain(nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        assert!(nx > 0 && ny > 0, "grid must have at least one cell");
        FineGrid {
            nx,
            ny,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
        }
    }

    /// Number of cells.
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Number of x-normal edges.
    pub fn n_x_edges(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    /// Number of y-normal edges.
    pub fn n_y_edges(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    /// Total number of edges.
    pub fn n_edges(&self) -> usize {
        self.n_x_edges() + self.n_y_edges()
    }

    /// Cell area.
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Flat cell index of cell `(i, j)`.
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// Inverse of [`cell_index`](Self::cell_index).
    pub fn cell_coords(&self, idx: usize) -> (usize, usize) {
        debug_assert!(idx < self.n_cells());
        (idx % self.nx, idx / self.nx)
    }

    /// Center of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    /// Edge id of the x-normal edge at vertical line `i`, row `j`.
    pub fn x_edge_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j < self.ny);
        j * (self.nx + 1) + i
    }

    /// Edge id of the y-normal edge at horizontal line `j`, column `i`.
    pub fn y_edge_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j <= self.ny);
        self.n_x_edges() + j * self.nx + i
    }

    /// Kind and lattice coordinates of an edge id.
    pub fn edge_coords(&self, e: usize) -> (EdgeKind, usize, usize) {
        debug_assert!(e < self.n_edges());
        if e < self.n_x_edges() {
            (EdgeKind::XNormal, e % (self.nx + 1), e / (self.nx + 1))
        } else {
            let k = e - self.n_x_edges();
            (EdgeKind::YNormal, k % self.nx, k / self.nx)
        }
    }

    /// Length of an edge (x-normal edges have length `hy`, y-normal `hx`).
    pub fn edge_length(&self, e: usize) -> f64 {
        match self.edge_coords(e).0 {
            EdgeKind::XNormal => self.hy,
            EdgeKind::YNormal => self.hx,
        }
    }

    /// Cells adjacent to an edge with the sign of the fixed (+x or +y) edge
    /// normal as seen from each cell: `+1` when the normal points out of the
    /// cell, `-1` when it points in. Boundary edges list one cell.
    pub fn edge_cells(&self, e: usize) -> Vec<(usize, f64)> {
        let (kind, i, j) = self.edge_coords(e);
        let mut out = Vec::with_capacity(2);
        match kind {
            EdgeKind::XNormal => {
                if i > 0 {
                    out.push((self.cell_index(i - 1, j), 1.0));
                }
                if i < self.nx {
                    out.push((self.cell_index(i, j), -1.0));
                }
            }
            EdgeKind::YNormal => {
                if j > 0 {
                    out.push((self.cell_index(i, j - 1), 1.0));
                }
                if j < self.ny {
                    out.push((self.cell_index(i, j), -1.0));
                }
            }
        }
        out
    }

    /// The four edges of cell `(i, j)` with their outward orientation signs
    /// relative to the fixed +x/+y edge normals: west, east, south, north.
    pub fn cell_edges(&self, i: usize, j: usize) -> [(usize, f64); 4] {
        [
            (self.x_edge_index(i, j), -1.0),
            (self.x_edge_index(i + 1, j), 1.0),
            (self.y_edge_index(i, j), -1.0),
            (self.y_edge_index(i, j + 1), 1.0),
        ]
    }

    /// Whether an edge lies on the domain boundary.
    pub fn is_boundary_edge(&self, e: usize) -> bool {
        let (kind, i, j) = self.edge_coords(e);
        match kind {
            EdgeKind::XNormal => i == 0 || i == self.nx,
            EdgeKind::YNormal => j == 0 || j == self.ny,
        }
    }

    /// All boundary edge ids.
    pub fn boundary_edges(&self) -> Vec<usize> {
        (0..self.n_edges())
            .filter(|&e| self.is_boundary_edge(e))
            .collect()
    }

    /// Outward-normal sign of a boundary edge: `+1` where the fixed +x/+y
    /// normal points out of the domain, `-1` where it points in.
    pub fn boundary_outward_sign(&self, e: usize) -> f64 {
        debug_assert!(self.is_boundary_edge(e));
        let (kind, i, j) = self.edge_coords(e);
        match kind {
            EdgeKind::XNormal => {
                if i == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
            EdgeKind::YNormal => {
                if j == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Coarse grid over a [`FineGrid`], `r × r` fine cells per coarse cell.
#[derive(Debug, Clone)]
pub struct CoarseGrid {
    /// Coarse cells along x.
    pub nxc: usize,
    /// Coarse cells along y.
    pub nyc: usize,
    /// Fine cells per coarse cell side.
    pub r: usize,
    fine: FineGrid,
}

impl CoarseGrid {
    /// Build the coarse grid; the fine grid dimensions must be multiples of `r`.
    pub fn new(fine: FineGrid, r: usize) -> Result<Self> {
        if r == 0 || fine.nx % r != 0 || fine.ny % r != 0 {
            return Err(Error::InvalidArgument {
                what: "coarsening ratio",
                msg: format!("r = {r} does not divide fine grid {}x{}", fine.nx, fine.ny),
            });
        }
        Ok(CoarseGrid {
            nxc: fine.nx / r,
            nyc: fine.ny / r,
            r,
            fine,
        })
    }

    /// Default hierarchy: 10×10 coarse over 30×30 fine on the unit square.
    pub fn default_hierarchy() -> Self {
        CoarseGrid::new(FineGrid::new(30, 30), 3).expect("default hierarchy is divisible")
    }

    /// Underlying fine grid.
    pub fn fine(&self) -> &FineGrid {
        &self.fine
    }

    /// Number of coarse cells.
    pub fn n_coarse(&self) -> usize {
        self.nxc * self.nyc
    }

    /// Fine cells per coarse cell.
    pub fn cells_per_coarse(&self) -> usize {
        self.r * self.r
    }

    /// Flat coarse index of coarse cell `(ci, cj)`.
    pub fn coarse_index(&self, ci: usize, cj: usize) -> usize {
        debug_assert!(ci < self.nxc && cj < self.nyc);
        cj * self.nxc + ci
    }

    /// Fine-cell indices of one coarse cell in local row-major order.
    ///
    /// Concatenating over all coarse cells in row-major coarse order yields
    /// the canonical coarse-major flattening used by permeability and basis
    /// vectors.
    pub fn coarse_local_order(&self, coarse_idx: usize) -> Result<Vec<usize>> {
        if coarse_idx >= self.n_coarse() {
            return Err(Error::IndexOutOfRange {
                what: "coarse cell",
                index: coarse_idx,
                limit: self.n_coarse(),
            });
        }
        let ci = coarse_idx % self.nxc;
        let cj = coarse_idx / self.nxc;
        let mut out = Vec::with_capacity(self.cells_per_coarse());
        for dj in 0..self.r {
            for di in 0..self.r {
                out.push(self.fine.cell_index(ci * self.r + di, cj * self.r + dj));
            }
        }
        Ok(out)
    }

    /// Fine-cell index (row-major) for each canonical position.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.fine.n_cells());
        for c in 0..self.n_coarse() {
            out.extend(self.coarse_local_order(c).expect("in range"));
        }
        out
    }

    /// Reshape a canonical coarse-major vector to row-major fine-cell order
    /// (the `ny × nx` matrix laid out row by row).
    pub fn canonical_to_row_major(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.fine.n_cells();
        if v.len() != n {
            return Err(Error::BadLength {
                what: "canonical vector",
                got: v.len(),
                expected: n,
            });
        }
        let mut out = vec![0.0; n];
        for (pos, &cell) in self.canonical_order().iter().enumerate() {
            out[cell] = v[pos];
        }
        Ok(out)
    }

    /// Inverse of [`canonical_to_row_major`](Self::canonical_to_row_major).
    pub fn row_major_to_canonical(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.fine.n_cells();
        if v.len() != n {
            return Err(Error::BadLength {
                what: "row-major vector",
                got: v.len(),
                expected: n,
            });
        }
        Ok(self.canonical_order().iter().map(|&c| v[c]).collect())
    }

    /// Fine edges on the boundary of one coarse cell (4r edges).
    pub fn coarse_boundary_edges(&self, coarse_idx: usize) -> Result<Vec<usize>> {
        if coarse_idx >= self.n_coarse() {
            return Err(Error::IndexOutOfRange {
                what: "coarse cell",
                index: coarse_idx,
                limit: self.n_coarse(),
            });
        }
        let ci = coarse_idx % self.nxc;
        let cj = coarse_idx / self.nxc;
        let (i0, j0) = (ci * self.r, cj * self.r);
        let mut out = Vec::with_capacity(4 * self.r);
        for dj in 0..self.r {
            out.push(self.fine.x_edge_index(i0, j0 + dj));
            out.push(self.fine.x_edge_index(i0 + self.r, j0 + dj));
        }
        for di in 0..self.r {
            out.push(self.fine.y_edge_index(i0 + di, j0));
            out.push(self.fine.y_edge_index(i0 + di, j0 + self.r));
        }
        Ok(out)
    }
}
