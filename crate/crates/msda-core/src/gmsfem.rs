//! Mixed multiscale reduction of the fine-scale pressure space.
//!
//! Per coarse cell: build a snapshot space of local pressure modes, reduce it
//! with a spectral problem whose stiffness weighs inter-cell jumps by the
//! harmonic edge permeability, keep the eigenvectors of the smallest
//! eigenvalues as offline basis functions, solve the mixed system with fine
//! velocities against the offline pressure space, and downscale back to the
//! fine grid through the basis columns. The per-cell basis vectors (scaled to
//! max-abs one) double as training targets for the stage-1 operator.

use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::fem::{assemble, DarcyProblem, MassQuadrature};
use crate::grid::{CoarseGrid, FineGrid};
use crate::linalg::{generalized_symmetric_eigen, solve_pinned_spd, weighted_mean};
use crate::perm::{content_hash, PermField, SplitTag};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Basis functions kept per coarse cell in the dataset pipeline.
pub const DEFAULT_BASIS_COUNT: usize = 5;

/// How local snapshot vectors are constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotMode {
    /// Unit vector per fine cell of the patch (full local pressure space).
    PiecewiseConstant,
    /// One local Neumann solve per boundary fine edge of the patch.
    LocalNeumann,
}

/// Snapshot vectors of one coarse cell, in local row-major fine order.
#[derive(Debug, Clone)]
pub struct SnapshotSpace {
    pub mode: SnapshotMode,
    pub vectors: Vec<Vec<f64>>,
}

/// Eigenpairs of the local spectral problem, ascending, S-orthonormal.
#[derive(Debug, Clone)]
pub struct SpectralPair {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors mapped to fine-cell values (local row-major).
    pub vectors: Vec<Vec<f64>>,
    /// Snapshot directions dropped as linearly dependent.
    pub dropped: usize,
}

/// Offline basis vectors for every coarse cell.
#[derive(Debug, Clone)]
pub struct OfflineBasisSet {
    /// Basis vectors per cell, ordered by ascending eigenvalue; each scaled
    /// to max-abs one with its largest-magnitude entry positive.
    pub per_cell: Vec<Vec<Vec<f64>>>,
    /// Basis functions per cell.
    pub l: usize,
}

/// Result of the coarse mixed solve.
#[derive(Debug, Clone)]
pub struct CoarseSolution {
    /// Offline-space pressure coefficients (cell-major, basis index fastest).
    pub coeffs: Vec<f64>,
    /// Downscaled fine pressure (row-major), area-weighted mean zero.
    pub p_fine: Vec<f64>,
    /// Fine velocities of the reduced solve.
    pub u: Vec<f64>,
}

fn check_geometry(problem: &DarcyProblem, cg: &CoarseGrid) -> Result<()> {
    if problem.grid.nx != cg.fine().nx || problem.grid.ny != cg.fine().ny {
        return Err(Error::InvalidArgument {
            what: "coarse grid",
            msg: format!(
                "problem grid {}x{} does not match hierarchy {}x{}",
                problem.grid.nx,
                problem.grid.ny,
                cg.fine().nx,
                cg.fine().ny
            ),
        });
    }
    Ok(())
}

/// Permeability of one coarse cell's patch in local row-major order.
fn patch_kappa(problem: &DarcyProblem, cg: &CoarseGrid, coarse_idx: usize) -> Result<Vec<f64>> {
    Ok(cg
        .coarse_local_order(coarse_idx)?
        .iter()
        .map(|&c| problem.kappa[c])
        .collect())
}

/// Build the snapshot space of one coarse cell.
pub fn build_snapshots(
    problem: &DarcyProblem,
    cg: &CoarseGrid,
    coarse_idx: usize,
    mode: SnapshotMode,
) -> Result<SnapshotSpace> {
    check_geometry(problem, cg)?;
    let r = cg.r;
    let n_local = r * r;
    let vectors = match mode {
        SnapshotMode::PiecewiseConstant => (0..n_local)
            .map(|k| {
                let mut v = vec![0.0; n_local];
                v[k] = 1.0;
                v
            })
            .collect(),
        SnapshotMode::LocalNeumann => {
            let kappa = patch_kappa(problem, cg, coarse_idx)?;
            let fine = cg.fine();
            let local = FineGrid::with_domain(r, r, r as f64 * fine.hx, r as f64 * fine.hy);
            let patch_area = n_local as f64 * local.cell_area();
            let mut out = Vec::with_capacity(4 * r);
            for e in local.boundary_edges() {
                // Unit outward flux on edge e, zero elsewhere; the constant
                // source balances the injected mass.
                let mut g = vec![0.0; local.n_edges()];
                g[e] = 1.0;
                let alpha = local.edge_length(e) / patch_area;
                let source = vec![alpha; n_local];
                let patch = DarcyProblem::new(local.clone(), kappa.clone(), source, g)?;
                let sol = assemble(&patch, MassQuadrature::Lumped)?.solve()?;
                out.push(sol.p);
            }
            out
        }
    };
    Ok(SnapshotSpace { mode, vectors })
}

/// Local stiffness (jump form) and mass matrices of a patch in fine-cell
/// coordinates: `a(p,w) = Σ_interior-edges κ_e [p]_e [w]_e` with κ_e the
/// harmonic mean across the edge, `s(p,w) = Σ_cells κ p w |cell|`.
fn patch_forms(cg: &CoarseGrid, kappa: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = cg.r;
    let n = r * r;
    let local = FineGrid::new(r, r);
    let area = cg.fine().cell_area();
    let mut a = DMatrix::zeros(n, n);
    let mut s = DMatrix::zeros(n, n);
    for e in 0..local.n_edges() {
        if local.is_boundary_edge(e) {
            continue;
        }
        let cells = local.edge_cells(e);
        let (c1, c2) = (cells[0].0, cells[1].0);
        let ke = 2.0 / (1.0 / kappa[c1] + 1.0 / kappa[c2]);
        a[(c1, c1)] += ke;
        a[(c2, c2)] += ke;
        a[(c1, c2)] -= ke;
        a[(c2, c1)] -= ke;
    }
    for c in 0..n {
        s[(c, c)] = kappa[c] * area;
    }
    (a, s)
}

/// Modified Gram–Schmidt with a drop tolerance; returns the kept
/// orthonormal vectors and how many inputs were dropped.
fn orthonormalize(vectors: &[Vec<f64>], tol: f64) -> (Vec<Vec<f64>>, usize) {
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for qk in &q {
                let dot: f64 = w.iter().zip(qk).map(|(a, b)| a * b).sum();
                for (wi, qi) in w.iter_mut().zip(qk) {
                    *wi -= dot * qi;
                }
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let orig = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        if norm > tol * orig {
            for wi in w.iter_mut() {
                *wi /= norm;
            }
            q.push(w);
        } else {
            dropped += 1;
        }
    }
    (q, dropped)
}

/// Solve the local spectral problem of one coarse cell over its snapshots.
///
/// Snapshots are orthonormalized first (dependent directions dropped); the
/// constant function is appended when the span misses it so the zero-energy
/// mode is always representable.
pub fn local_spectral(
    problem: &DarcyProblem,
    cg: &CoarseGrid,
    coarse_idx: usize,
    snapshots: &SnapshotSpace,
) -> Result<SpectralPair> {
    check_geometry(problem, cg)?;
    if snapshots.vectors.is_empty() {
        return Err(Error::InvalidArgument {
            what: "snapshots",
            msg: "snapshot space is empty".to_string(),
        });
    }
    let kappa = patch_kappa(problem, cg, coarse_idx)?;
    let (a, s) = patch_forms(cg, &kappa);
    let n = kappa.len();

    let (mut q, dropped) = orthonormalize(&snapshots.vectors, 1e-10);
    let c = vec![1.0 / (n as f64).sqrt(); n];
    let mut resid = c.clone();
    for qk in &q {
        let dot: f64 = resid.iter().zip(qk).map(|(a, b)| a * b).sum();
        for (ri, qi) in resid.iter_mut().zip(qk) {
            *ri -= dot * qi;
        }
    }
    let rnorm = resid.iter().map(|x| x * x).sum::<f64>().sqrt();
    if rnorm > 1e-8 {
        for ri in resid.iter_mut() {
            *ri /= rnorm;
        }
        q.push(resid);
    }

    let rank = q.len();
    let qm = DMatrix::from_fn(n, rank, |i, k| q[k][i]);
    let a_red = qm.transpose() * &a * &qm;
    let s_red = qm.transpose() * &s * &qm;
    let (values, z) = generalized_symmetric_eigen(&a_red, &s_red)?;
    let vectors: Vec<Vec<f64>> = z
        .iter()
        .map(|zk| {
            let fine = &qm * zk;
            fine.iter().cloned().collect()
        })
        .collect();
    Ok(SpectralPair {
        eigenvalues: values,
        vectors,
        dropped,
    })
}

/// Scale to max-abs one and make the largest-magnitude entry positive
/// (first such entry on ties, so antisymmetric modes normalize
/// deterministically).
fn normalize_basis_vector(v: &[f64]) -> Vec<f64> {
    let mut arg = 0;
    let mut best = 0.0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            arg = i;
        }
    }
    if best == 0.0 {
        return v.to_vec();
    }
    let scale = if v[arg] < 0.0 { -best } else { best };
    v.iter().map(|x| x / scale).collect()
}

/// Build the offline basis of every coarse cell (spectral work per cell is
/// independent and runs in parallel).
pub fn build_offline_basis(
    problem: &DarcyProblem,
    cg: &CoarseGrid,
    l: usize,
    mode: SnapshotMode,
) -> Result<OfflineBasisSet> {
    check_geometry(problem, cg)?;
    let per_cell: Vec<Vec<Vec<f64>>> = (0..cg.n_coarse())
        .into_par_iter()
        .map(|c| -> Result<Vec<Vec<f64>>> {
            let snaps = build_snapshots(problem, cg, c, mode)?;
            let pair = local_spectral(problem, cg, c, &snaps)?;
            if pair.eigenvalues.len() < l {
                return Err(Error::InsufficientEigenpairs {
                    cell: c,
                    available: pair.eigenvalues.len(),
                    needed: l,
                });
            }
            Ok(pair.vectors[..l]
                .iter()
                .map(|v| normalize_basis_vector(v))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OfflineBasisSet { per_cell, l })
}

impl OfflineBasisSet {
    /// Stacked global vector of basis index `k` (1-based) in canonical
    /// coarse-major order.
    pub fn stacked(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.l {
            return Err(Error::IndexOutOfRange {
                what: "basis index",
                index: k,
                limit: self.l + 1,
            });
        }
        let mut out = Vec::with_capacity(self.per_cell.len() * self.per_cell[0][0].len());
        for cell in &self.per_cell {
            out.extend_from_slice(&cell[k - 1]);
        }
        Ok(out)
    }

    /// Downscaling matrix (fine cells × offline DOFs) with row-major fine
    /// indexing; column (cell, k) is supported on that cell's fine cells.
    pub fn r_off(&self, cg: &CoarseGrid) -> DMatrix<f64> {
        let n_fine = cg.fine().n_cells();
        let mut r = DMatrix::zeros(n_fine, self.per_cell.len() * self.l);
        for (c, cell) in self.per_cell.iter().enumerate() {
            let order = cg.coarse_local_order(c).expect("cell in range");
            for (k, basis) in cell.iter().enumerate() {
                let col = c * self.l + k;
                for (local, &fine) in order.iter().enumerate() {
                    r[(fine, col)] = basis[local];
                }
            }
        }
        r
    }
}

/// Solve the mixed system with fine velocities and the offline pressure
/// space, then downscale the pressure to the fine grid.
pub fn coarse_solve(
    problem: &DarcyProblem,
    cg: &CoarseGrid,
    basis: &OfflineBasisSet,
) -> Result<CoarseSolution> {
    check_geometry(problem, cg)?;
    let sys = assemble(problem, MassQuadrature::Lumped)?;
    let grid = &problem.grid;
    let n_cols = basis.per_cell.len() * basis.l;

    // Columns of B·R and their M⁻¹ images.
    let cols: Vec<(Vec<f64>, Vec<f64>)> = (0..n_cols)
        .into_par_iter()
        .map(|col| {
            let c = col / basis.l;
            let k = col % basis.l;
            let order = cg.coarse_local_order(c).expect("cell in range");
            let mut p = vec![0.0; grid.n_cells()];
            for (local, &fine) in order.iter().enumerate() {
                p[fine] = basis.per_cell[c][k][local];
            }
            let b_col = sys.apply_b(&p);
            let mut b_int = b_col;
            for e in grid.boundary_edges() {
                b_int[e] = 0.0;
            }
            let w = sys.apply_m_inv_interior(&b_int);
            (p, w)
        })
        .collect();

    // Reduced Schur complement (Rᵀ Bᵀ M⁻¹ B R) and source (Rᵀ F̃). Each
    // basis column is supported on one coarse cell, so only its nine fine
    // cells contribute to any inner product.
    let supports: Vec<Vec<usize>> = (0..cg.n_coarse())
        .map(|c| cg.coarse_local_order(c).expect("cell in range"))
        .collect();
    let f_adj = sys.schur_rhs();
    let mut s_red = DMatrix::zeros(n_cols, n_cols);
    let mut rhs = DVector::zeros(n_cols);
    for (col, (p_col, w_col)) in cols.iter().enumerate() {
        rhs[col] = p_col.iter().zip(&f_adj).map(|(p, f)| p * f).sum();
        let div = sys.divergence(w_col);
        for (col2, (p2, _)) in cols.iter().enumerate() {
            let mut v = 0.0;
            for &cell in &supports[col2 / basis.l] {
                v += p2[cell] * div[cell];
            }
            s_red[(col2, col)] = v;
        }
    }
    // Symmetrize against roundoff.
    for i in 0..n_cols {
        for j in (i + 1)..n_cols {
            let avg = 0.5 * (s_red[(i, j)] + s_red[(j, i)]);
            s_red[(i, j)] = avg;
            s_red[(j, i)] = avg;
        }
    }

    let coeffs = solve_pinned_spd(&s_red, &rhs, 0)?;

    // Downscale and recover velocities.
    let mut p_fine = vec![0.0; grid.n_cells()];
    for (col, (p_col, _)) in cols.iter().enumerate() {
        let c = coeffs[col];
        if c != 0.0 {
            for (pf, pc) in p_fine.iter_mut().zip(p_col) {
                *pf += c * pc;
            }
        }
    }
    let mut vel_rhs = sys.apply_b(&p_fine);
    for e in grid.boundary_edges() {
        vel_rhs[e] = 0.0;
    }
    let mut u = sys.apply_m_inv_interior(&vel_rhs);
    for e in grid.boundary_edges() {
        u[e] = problem.boundary_flux[e] * grid.boundary_outward_sign(e);
    }

    let areas = vec![grid.cell_area(); grid.n_cells()];
    let mean = weighted_mean(&p_fine, &areas);
    for p in p_fine.iter_mut() {
        *p -= mean;
    }

    Ok(CoarseSolution {
        coeffs: coeffs.iter().cloned().collect(),
        p_fine,
        u,
    })
}

/// Conservation of the reduced solve against offline test functions:
/// `max |Rᵀ(Bᵀu − F)|`.
pub fn coarse_conservation_defect(
    problem: &DarcyProblem,
    cg: &CoarseGrid,
    basis: &OfflineBasisSet,
    sol: &CoarseSolution,
) -> Result<f64> {
    let sys = assemble(problem, MassQuadrature::Lumped)?;
    let div = sys.divergence(&sol.u);
    let resid: Vec<f64> = div.iter().zip(&sys.schur_rhs()).map(|(d, f)| d - f).collect();
    let r = basis.r_off(cg);
    let mut worst = 0.0f64;
    for col in 0..r.ncols() {
        let v: f64 = (0..r.nrows()).map(|i| r[(i, col)] * resid[i]).sum();
        worst = worst.max(v.abs());
    }
    Ok(worst)
}

/// Run the full multiscale pipeline for one permeability field and package
/// the training record: permeability (canonical), basis2..basis5 (stacked),
/// and the downscaled 30×30 pressure. Pure in the field.
pub fn emit_record(cg: &CoarseGrid, field: &PermField) -> Result<DatasetRecord> {
    let kappa = field.to_row_major(cg);
    let problem = DarcyProblem::five_spot(cg.fine().clone(), kappa)?;
    let basis = build_offline_basis(&problem, cg, DEFAULT_BASIS_COUNT, SnapshotMode::PiecewiseConstant)?;
    let sol = coarse_solve(&problem, cg, &basis)?;
    Ok(DatasetRecord {
        perm: field.values.clone(),
        basis: [
            basis.stacked(2)?,
            basis.stacked(3)?,
            basis.stacked(4)?,
            basis.stacked(5)?,
        ],
        pressure: sol.p_fine,
        hash: content_hash(field),
        split: SplitTag::Train,
    })
}
