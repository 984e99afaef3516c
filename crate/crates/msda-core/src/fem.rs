//! Fine-scale mixed finite element solver for Darcy flow.
//!
//! Lowest-order Raviart–Thomas velocities (one normal-velocity unknown per
//! edge) and piecewise-constant pressures on a uniform rectangle grid. The
//! discrete system is
//!
//! ```text
//!   M u = B p          (Darcy law, interior edges)
//!   Bᵀ u = F           (mass balance per cell)
//! ```
//!
//! with `M` the κ⁻¹-weighted velocity mass matrix, `B` holding ±edge-length
//! entries so that `Bᵀu` is the net outward flux (discrete divergence) per
//! cell, and `F` the integrated source. Boundary normal velocities are
//! prescribed data; pressure is determined up to a constant and returned in
//! the area-weighted mean-zero gauge. The solve eliminates velocities through
//! the Schur complement, which is symmetric positive definite once one
//! pressure unknown is pinned.

use crate::error::{Error, Result};
use crate::grid::FineGrid;
use crate::linalg::{solve_pinned_spd, solve_tridiagonal, weighted_mean};
use nalgebra::{DMatrix, DVector};

/// Quadrature used for the velocity mass matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassQuadrature {
    /// Trapezoidal (diagonal) lumping; the default for the dataset pipeline.
    Lumped,
    /// Exact RT0 mass; couples the two same-direction edges of each cell.
    Consistent,
}

/// A Darcy problem instance on a fine grid.
#[derive(Debug, Clone)]
pub struct DarcyProblem {
    pub grid: FineGrid,
    /// Permeability per cell, row-major order. Strictly positive.
    pub kappa: Vec<f64>,
    /// Source rate density per cell.
    pub source: Vec<f64>,
    /// Outward normal velocity per edge id; only boundary entries are used.
    pub boundary_flux: Vec<f64>,
}

/// Relative scale used for the source/boundary compatibility check.
fn compat_tolerance(total_abs: f64) -> f64 {
    1e-12 * total_abs.max(1.0)
}

impl DarcyProblem {
    /// Validates positivity of κ, vector lengths, and flux compatibility.
    pub fn new(
        grid: FineGrid,
        kappa: Vec<f64>,
        source: Vec<f64>,
        boundary_flux: Vec<f64>,
    ) -> Result<Self> {
        if kappa.len() != grid.n_cells() {
            return Err(Error::BadLength {
                what: "kappa",
                got: kappa.len(),
                expected: grid.n_cells(),
            });
        }
        if source.len() != grid.n_cells() {
            return Err(Error::BadLength {
                what: "source",
                got: source.len(),
                expected: grid.n_cells(),
            });
        }
        if boundary_flux.len() != grid.n_edges() {
            return Err(Error::BadLength {
                what: "boundary_flux",
                got: boundary_flux.len(),
                expected: grid.n_edges(),
            });
        }
        if let Some(k) = kappa.iter().find(|&&k| !(k > 0.0)) {
            return Err(Error::InvalidArgument {
                what: "kappa",
                msg: format!("permeability must be positive, found {k}"),
            });
        }
        let problem = DarcyProblem {
            grid,
            kappa,
            source,
            boundary_flux,
        };
        let (defect, scale) = problem.mass_defect();
        if defect.abs() > compat_tolerance(scale) {
            return Err(Error::Incompatible {
                defect,
                tol: compat_tolerance(scale),
            });
        }
        Ok(problem)
    }

    /// Zero-mean corner source/sink pair under no-flow boundaries: +1/|cell|
    /// at cell (0,0) and −1/|cell| at cell (nx−1, ny−1).
    pub fn five_spot(grid: FineGrid, kappa: Vec<f64>) -> Result<Self> {
        let mut source = vec![0.0; grid.n_cells()];
        let area = grid.cell_area();
        source[grid.cell_index(0, 0)] = 1.0 / area;
        source[grid.cell_index(grid.nx - 1, grid.ny - 1)] = -1.0 / area;
        let boundary_flux = vec![0.0; grid.n_edges()];
        DarcyProblem::new(grid, kappa, source, boundary_flux)
    }

    /// Σ f·area − Σ g·|e| and the absolute scale of both terms.
    pub fn mass_defect(&self) -> (f64, f64) {
        let area = self.grid.cell_area();
        let src: f64 = self.source.iter().map(|f| f * area).sum();
        let mut out = 0.0;
        let mut scale: f64 = self.source.iter().map(|f| (f * area).abs()).sum();
        for e in self.grid.boundary_edges() {
            let len = self.grid.edge_length(e);
            out += self.boundary_flux[e] * len;
            scale += (self.boundary_flux[e] * len).abs();
        }
        (src - out, scale)
    }
}

/// Velocity mass matrix in a line-structured representation.
///
/// Same-direction edges only couple along their grid line, so the consistent
/// mass is tridiagonal per line; the lumped mass is diagonal.
#[derive(Debug, Clone)]
enum MassMatrix {
    Lumped {
        diag: Vec<f64>,
    },
    Consistent {
        diag: Vec<f64>,
        /// Off-diagonal entry between edge (i,·) and (i+1,·) of the same line,
        /// indexed like the lower-numbered edge of the pair.
        x_off: Vec<Vec<f64>>, // [row j][i] for i in 0..nx
        y_off: Vec<Vec<f64>>, // [col i][j] for j in 0..ny
    },
}

/// Assembled fine-scale system.
#[derive(Debug, Clone)]
pub struct FineSystem {
    pub grid: FineGrid,
    pub quadrature: MassQuadrature,
    mass: MassMatrix,
    /// Integrated source per cell (`f`·area).
    pub f_int: Vec<f64>,
    /// Prescribed velocity DOF per boundary edge (+axis convention), zero on
    /// interior edges.
    g_dof: Vec<f64>,
}

/// Solution of the mixed system.
#[derive(Debug, Clone)]
pub struct MixedSolution {
    /// Normal velocity per edge (+x / +y DOF convention), boundary included.
    pub u: Vec<f64>,
    /// Cell pressures, area-weighted mean zero.
    pub p: Vec<f64>,
}

/// Assemble mass matrix, divergence coupling, and source for a problem.
pub fn assemble(problem: &DarcyProblem, quadrature: MassQuadrature) -> Result<FineSystem> {
    let grid = problem.grid.clone();
    let (defect, scale) = problem.mass_defect();
    if defect.abs() > compat_tolerance(scale) {
        return Err(Error::Incompatible {
            defect,
            tol: compat_tolerance(scale),
        });
    }

    let area = grid.cell_area();
    let mut diag = vec![0.0; grid.n_edges()];
    let mut x_off = vec![vec![0.0; grid.nx]; grid.ny];
    let mut y_off = vec![vec![0.0; grid.ny]; grid.nx];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let kinv = 1.0 / problem.kappa[grid.cell_index(i, j)];
            match quadrature {
                MassQuadrature::Lumped => {
                    let w = kinv * area / 2.0;
                    diag[grid.x_edge_index(i, j)] += w;
                    diag[grid.x_edge_index(i + 1, j)] += w;
                    diag[grid.y_edge_index(i, j)] += w;
                    diag[grid.y_edge_index(i, j + 1)] += w;
                }
                MassQuadrature::Consistent => {
                    let w = kinv * area / 3.0;
                    let c = kinv * area / 6.0;
                    diag[grid.x_edge_index(i, j)] += w;
                    diag[grid.x_edge_index(i + 1, j)] += w;
                    diag[grid.y_edge_index(i, j)] += w;
                    diag[grid.y_edge_index(i, j + 1)] += w;
                    x_off[j][i] += c;
                    y_off[i][j] += c;
                }
            }
        }
    }
    let mass = match quadrature {
        MassQuadrature::Lumped => MassMatrix::Lumped { diag },
        MassQuadrature::Consistent => MassMatrix::Consistent { diag, x_off, y_off },
    };

    let f_int: Vec<f64> = problem.source.iter().map(|f| f * area).collect();
    let mut g_dof = vec![0.0; grid.n_edges()];
    for e in grid.boundary_edges() {
        g_dof[e] = problem.boundary_flux[e] * grid.boundary_outward_sign(e);
    }

    Ok(FineSystem {
        grid,
        quadrature,
        mass,
        f_int,
        g_dof,
    })
}

impl FineSystem {
    /// `(B p)` per edge: B holds σ(e,c)·|e| with σ the sign of the fixed +axis
    /// edge normal as seen from the cell.
    pub fn apply_b(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_edges()];
        for (e, slot) in out.iter_mut().enumerate() {
            let len = self.grid.edge_length(e);
            for (c, sign) in self.grid.edge_cells(e) {
                *slot += sign * len * p[c];
            }
        }
        out
    }

    /// `(Bᵀ u)` per cell: the net outward flux (discrete divergence).
    pub fn divergence(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_cells()];
        for e in 0..self.grid.n_edges() {
            let len = self.grid.edge_length(e);
            for (c, sign) in self.grid.edge_cells(e) {
                out[c] += sign * len * u[e];
            }
        }
        out
    }

    /// Apply `M⁻¹` on interior-edge vectors (boundary slots of both input
    /// and output are treated as zero).
    pub fn apply_m_inv_interior(&self, rhs: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let mut out = vec![0.0; grid.n_edges()];
        match &self.mass {
            MassMatrix::Lumped { diag } => {
                for e in 0..grid.n_edges() {
                    if !grid.is_boundary_edge(e) {
                        out[e] = rhs[e] / diag[e];
                    }
                }
            }
            MassMatrix::Consistent { diag, x_off, y_off } => {
                // Interior x-edges of row j form a tridiagonal block.
                for j in 0..grid.ny {
                    let n = grid.nx.saturating_sub(1);
                    if n == 0 {
                        continue;
                    }
                    let d: Vec<f64> = (1..grid.nx).map(|i| diag[grid.x_edge_index(i, j)]).collect();
                    let off: Vec<f64> = (1..grid.nx - 1).map(|i| x_off[j][i]).collect();
                    let b: Vec<f64> = (1..grid.nx).map(|i| rhs[grid.x_edge_index(i, j)]).collect();
                    let x = solve_tridiagonal(&off, &d, &off, &b);
                    for (k, i) in (1..grid.nx).enumerate() {
                        out[grid.x_edge_index(i, j)] = x[k];
                    }
                }
                for i in 0..grid.nx {
                    let n = grid.ny.saturating_sub(1);
                    if n == 0 {
                        continue;
                    }
                    let d: Vec<f64> = (1..grid.ny).map(|j| diag[grid.y_edge_index(i, j)]).collect();
                    let off: Vec<f64> = (1..grid.ny - 1).map(|j| y_off[i][j]).collect();
                    let b: Vec<f64> = (1..grid.ny).map(|j| rhs[grid.y_edge_index(i, j)]).collect();
                    let x = solve_tridiagonal(&off, &d, &off, &b);
                    for (k, j) in (1..grid.ny).enumerate() {
                        out[grid.y_edge_index(i, j)] = x[k];
                    }
                }
            }
        }
        out
    }

    /// Coupling of prescribed boundary DOFs into interior mass rows
    /// (zero for lumped mass).
    fn boundary_mass_coupling(&self) -> Vec<f64> {
        let grid = &self.grid;
        let mut out = vec![0.0; grid.n_edges()];
        if let MassMatrix::Consistent { x_off, y_off, .. } = &self.mass {
            for j in 0..grid.ny {
                if grid.nx >= 2 {
                    out[grid.x_edge_index(1, j)] +=
                        x_off[j][0] * self.g_dof[grid.x_edge_index(0, j)];
                    out[grid.x_edge_index(grid.nx - 1, j)] +=
                        x_off[j][grid.nx - 1] * self.g_dof[grid.x_edge_index(grid.nx, j)];
                }
            }
            for i in 0..grid.nx {
                if grid.ny >= 2 {
                    out[grid.y_edge_index(i, 1)] +=
                        y_off[i][0] * self.g_dof[grid.y_edge_index(i, 0)];
                    out[grid.y_edge_index(i, grid.ny - 1)] +=
                        y_off[i][grid.ny - 1] * self.g_dof[grid.y_edge_index(i, grid.ny)];
                }
            }
        }
        out
    }

    /// Dense mass matrix over all edges (test and audit use).
    pub fn dense_m(&self) -> DMatrix<f64> {
        let n = self.grid.n_edges();
        let mut m = DMatrix::zeros(n, n);
        match &self.mass {
            MassMatrix::Lumped { diag } => {
                for e in 0..n {
                    m[(e, e)] = diag[e];
                }
            }
            MassMatrix::Consistent { diag, x_off, y_off } => {
                for e in 0..n {
                    m[(e, e)] = diag[e];
                }
                for j in 0..self.grid.ny {
                    for i in 0..self.grid.nx {
                        let a = self.grid.x_edge_index(i, j);
                        let b = self.grid.x_edge_index(i + 1, j);
                        m[(a, b)] += x_off[j][i];
                        m[(b, a)] += x_off[j][i];
                    }
                }
                for i in 0..self.grid.nx {
                    for j in 0..self.grid.ny {
                        let a = self.grid.y_edge_index(i, j);
                        let b = self.grid.y_edge_index(i, j + 1);
                        m[(a, b)] += y_off[i][j];
                        m[(b, a)] += y_off[i][j];
                    }
                }
            }
        }
        m
    }

    /// Dense divergence coupling `B` (edges × cells), ±|e| entries.
    pub fn dense_b(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.grid.n_edges(), self.grid.n_cells());
        for e in 0..self.grid.n_edges() {
            let len = self.grid.edge_length(e);
            for (c, sign) in self.grid.edge_cells(e) {
                b[(e, c)] = sign * len;
            }
        }
        b
    }

    /// Right-hand side of the pressure Schur system: `F − Bᵦᵀ uᵦ + Bᵢᵀ M⁻¹ (M uᵦ)ᵢ`.
    pub(crate) fn schur_rhs(&self) -> Vec<f64> {
        let grid = &self.grid;
        let mut rhs = self.f_int.clone();
        // Known boundary fluxes leave the balance equations.
        for e in grid.boundary_edges() {
            let len = grid.edge_length(e);
            for (c, sign) in grid.edge_cells(e) {
                rhs[c] -= sign * len * self.g_dof[e];
            }
        }
        // Boundary-coupled mass terms re-enter through the eliminated
        // interior velocities.
        let coupling = self.boundary_mass_coupling();
        if coupling.iter().any(|&x| x != 0.0) {
            let w = self.apply_m_inv_interior(&coupling);
            for e in 0..grid.n_edges() {
                if w[e] != 0.0 {
                    let len = grid.edge_length(e);
                    for (c, sign) in grid.edge_cells(e) {
                        rhs[c] += sign * len * w[e];
                    }
                }
            }
        }
        rhs
    }

    /// Assemble the dense pressure Schur complement `Bᵢᵀ M⁻¹ Bᵢ`.
    fn schur_matrix(&self) -> DMatrix<f64> {
        let grid = &self.grid;
        let n = grid.n_cells();
        let mut s = DMatrix::zeros(n, n);
        let mut b_col = vec![0.0; grid.n_edges()];
        for c in 0..n {
            let (i, j) = grid.cell_coords(c);
            for (e, sign) in grid.cell_edges(i, j) {
                if !grid.is_boundary_edge(e) {
                    b_col[e] = sign * grid.edge_length(e);
                }
            }
            let w = self.apply_m_inv_interior(&b_col);
            for e in 0..grid.n_edges() {
                if w[e] != 0.0 {
                    let len = grid.edge_length(e);
                    for (c2, sign2) in grid.edge_cells(e) {
                        s[(c2, c)] += sign2 * len * w[e];
                    }
                }
            }
            for (e, _) in grid.cell_edges(i, j) {
                b_col[e] = 0.0;
            }
        }
        // Symmetrize against roundoff.
        for r in 0..n {
            for c in (r + 1)..n {
                let avg = 0.5 * (s[(r, c)] + s[(c, r)]);
                s[(r, c)] = avg;
                s[(c, r)] = avg;
            }
        }
        s
    }

    /// Solve the saddle system for velocities and mean-zero pressures.
    pub fn solve(&self) -> Result<MixedSolution> {
        let grid = &self.grid;
        let s = self.schur_matrix();
        let rhs = DVector::from_vec(self.schur_rhs());
        let p_raw = solve_pinned_spd(&s, &rhs, 0)?;

        // Recover interior velocities: u = M⁻¹ (B p − M·u_boundary).
        let p_slice: Vec<f64> = p_raw.iter().cloned().collect();
        let mut vel_rhs = self.apply_b(&p_slice);
        let coupling = self.boundary_mass_coupling();
        for e in 0..grid.n_edges() {
            vel_rhs[e] -= coupling[e];
        }
        let mut u = self.apply_m_inv_interior(&vel_rhs);
        for e in grid.boundary_edges() {
            u[e] = self.g_dof[e];
        }

        // Mean-zero pressure gauge.
        let areas = vec![grid.cell_area(); grid.n_cells()];
        let mean = weighted_mean(&p_slice, &areas);
        let p: Vec<f64> = p_slice.iter().map(|x| x - mean).collect();
        Ok(MixedSolution { u, p })
    }

    /// Maximum per-cell conservation defect `max|Bᵀu − F|`.
    pub fn conservation_defect(&self, sol: &MixedSolution) -> f64 {
        self.divergence(&sol.u)
            .iter()
            .zip(&self.f_int)
            .map(|(d, f)| (d - f).abs())
            .fold(0.0, f64::max)
    }

    /// Energy identity residual `|uᵀMu − pᵀF| / max(uᵀMu, ε)` (no-flow data).
    pub fn energy_identity_residual(&self, sol: &MixedSolution) -> f64 {
        let m = self.dense_m();
        let u = DVector::from_column_slice(&sol.u);
        let umu = (u.transpose() * &m * &u)[(0, 0)];
        let pf: f64 = sol.p.iter().zip(&self.f_int).map(|(p, f)| p * f).sum();
        (umu - pf).abs() / umu.abs().max(1e-300)
    }
}

/// Per-cell divergence of a solved velocity field, for conservation audits.
pub fn downscale_velocity_divergence(system: &FineSystem, sol: &MixedSolution) -> Vec<f64> {
    system.divergence(&sol.u)
}

/// L2(Ω) distance between a piecewise-constant cell field and a smooth
/// function, by 3×3 Gauss quadrature per cell, comparing in the mean-zero
/// gauge of both fields.
pub fn pressure_l2_error(grid: &FineGrid, p_cells: &[f64], exact: impl Fn(f64, f64) -> f64) -> f64 {
    // 3-point Gauss–Legendre on [-1/2, 1/2].
    let gp = [-0.5 * (3.0f64 / 5.0).sqrt(), 0.0, 0.5 * (3.0f64 / 5.0).sqrt()];
    let gw = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

    let areas = vec![grid.cell_area(); grid.n_cells()];
    let p_mean = weighted_mean(p_cells, &areas);

    // Quadrature mean of the exact field over the domain.
    let mut exact_mean = 0.0;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (cx, cy) = grid.cell_center(i, j);
            for (a, wa) in gp.iter().zip(gw) {
                for (b, wb) in gp.iter().zip(gw) {
                    exact_mean +=
                        wa * wb * grid.cell_area() * exact(cx + a * grid.hx, cy + b * grid.hy);
                }
            }
        }
    }
    exact_mean /= grid.n_cells() as f64 * grid.cell_area();

    let mut err2 = 0.0;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let ph = p_cells[grid.cell_index(i, j)] - p_mean;
            let (cx, cy) = grid.cell_center(i, j);
            for (a, wa) in gp.iter().zip(gw) {
                for (b, wb) in gp.iter().zip(gw) {
                    let diff = ph - (exact(cx + a * grid.hx, cy + b * grid.hy) - exact_mean);
                    err2 += wa * wb * grid.cell_area() * diff * diff;
                }
            }
        }
    }
    err2.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{EdgeKind, FineGrid};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit_kappa(grid: &FineGrid) -> Vec<f64> {
        vec![1.0; grid.n_cells()]
    }

    /// Hand assembly of the 2×2 case with unit cells (domain [0,2]²): the
    /// lumped RT0 mass carries κ⁻¹·hx·hy/2 per adjacent cell and B carries
    /// ±|e|, so with h = 1 interior mass entries equal h and B entries ±h.
    #[test]
    fn two_by_two_hand_assembly_oracle() {
        let grid = FineGrid::with_domain(2, 2, 2.0, 2.0);
        let problem = DarcyProblem::new(
            grid.clone(),
            unit_kappa(&grid),
            vec![0.0; 4],
            vec![0.0; grid.n_edges()],
        )
        .unwrap();
        let sys = assemble(&problem, MassQuadrature::Lumped).unwrap();
        let m = sys.dense_m();
        let h = 1.0;
        for e in 0..grid.n_edges() {
            let expected = if grid.is_boundary_edge(e) { h / 2.0 } else { h };
            assert_relative_eq!(m[(e, e)], expected, epsilon = 1e-15);
            for e2 in 0..grid.n_edges() {
                if e2 != e {
                    assert_eq!(m[(e, e2)], 0.0, "lumped mass must be diagonal");
                }
            }
        }
        let b = sys.dense_b();
        for e in 0..grid.n_edges() {
            for c in 0..4 {
                let cells = grid.edge_cells(e);
                match cells.iter().find(|&&(cc, _)| cc == c) {
                    Some(&(_, sign)) => assert_relative_eq!(b[(e, c)], sign * h, epsilon = 1e-15),
                    None => assert_eq!(b[(e, c)], 0.0),
                }
            }
        }
    }

    #[test]
    fn doubling_kappa_halves_m_keeps_b() {
        let grid = FineGrid::new(6, 6);
        let mk = |k: f64| {
            let problem = DarcyProblem::new(
                grid.clone(),
                vec![k; grid.n_cells()],
                vec![0.0; grid.n_cells()],
                vec![0.0; grid.n_edges()],
            )
            .unwrap();
            assemble(&problem, MassQuadrature::Consistent).unwrap()
        };
        let s1 = mk(1.0);
        let s2 = mk(2.0);
        let (m1, m2) = (s1.dense_m(), s2.dense_m());
        for e in 0..grid.n_edges() {
            for e2 in 0..grid.n_edges() {
                assert_relative_eq!(m2[(e, e2)], 0.5 * m1[(e, e2)], epsilon = 1e-15);
            }
        }
        assert_eq!(s1.dense_b(), s2.dense_b());
    }

    #[test]
    fn divergence_of_constant_field_vanishes() {
        let grid = FineGrid::new(5, 4);
        let problem = DarcyProblem::new(
            grid.clone(),
            unit_kappa(&grid),
            vec![0.0; grid.n_cells()],
            vec![0.0; grid.n_edges()],
        )
        .unwrap();
        let sys = assemble(&problem, MassQuadrature::Lumped).unwrap();
        // Constant vector field (vx, vy) sampled onto edge DOFs.
        let (vx, vy) = (1.3, -0.6);
        let mut u = vec![0.0; grid.n_edges()];
        for e in 0..grid.n_edges() {
            u[e] = match grid.edge_coords(e).0 {
                EdgeKind::XNormal => vx,
                EdgeKind::YNormal => vy,
            };
        }
        for d in sys.divergence(&u) {
            assert!(d.abs() < 1e-13);
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let grid = FineGrid::new(10, 10);
        let problem = DarcyProblem::new(
            grid.clone(),
            unit_kappa(&grid),
            vec![0.0; grid.n_cells()],
            vec![0.0; grid.n_edges()],
        )
        .unwrap();
        for q in [MassQuadrature::Lumped, MassQuadrature::Consistent] {
            let sol = assemble(&problem, q).unwrap().solve().unwrap();
            assert!(sol.u.iter().all(|&x| x.abs() < 1e-14));
            assert!(sol.p.iter().all(|&x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn incompatible_data_is_rejected_with_defect() {
        let grid = FineGrid::new(4, 4);
        let mut source = vec![0.0; grid.n_cells()];
        source[0] = 1.0; // net injection, no outflow
        let err = DarcyProblem::new(
            grid.clone(),
            unit_kappa(&grid),
            source,
            vec![0.0; grid.n_edges()],
        )
        .unwrap_err();
        match err {
            Error::Incompatible { defect, .. } => {
                assert_relative_eq!(defect, grid.cell_area(), epsilon = 1e-15)
            }
            other => panic!("expected Incompatible, got {other}"),
        }
    }

    fn manufactured_problem(n: usize) -> DarcyProblem {
        let grid = FineGrid::new(n, n);
        let mut source = vec![0.0; grid.n_cells()];
        for j in 0..n {
            for i in 0..n {
                let (x, y) = grid.cell_center(i, j);
                source[grid.cell_index(i, j)] =
                    2.0 * PI * PI * (PI * x).cos() * (PI * y).cos();
            }
        }
        let boundary = vec![0.0; grid.n_edges()];
        DarcyProblem::new(grid, vec![1.0; n * n], source, boundary).unwrap()
    }

    #[test]
    fn manufactured_solution_first_order_l2() {
        let mut errors = Vec::new();
        for n in [10, 20, 40] {
            let problem = manufactured_problem(n);
            let sys = assemble(&problem, MassQuadrature::Lumped).unwrap();
            let sol = sys.solve().unwrap();
            let err = pressure_l2_error(&problem.grid, &sol.p, |x, y| {
                (PI * x).cos() * (PI * y).cos()
            });
            errors.push(err);
        }
        let o1 = (errors[0] / errors[1]).log2();
        let o2 = (errors[1] / errors[2]).log2();
        assert!(
            (0.8..=1.2).contains(&o1) && (0.8..=1.2).contains(&o2),
            "observed orders {o1:.3}, {o2:.3} outside [0.8, 1.2]; errors {errors:?}"
        );
    }

    #[test]
    fn five_spot_matches_dense_saddle_oracle_and_is_monotone() {
        let grid = FineGrid::new(30, 30);
        let problem = DarcyProblem::five_spot(grid.clone(), unit_kappa(&grid)).unwrap();
        let sys = assemble(&problem, MassQuadrature::Lumped).unwrap();
        let sol = sys.solve().unwrap();

        // Independent route: full dense saddle system with a Lagrange
        // multiplier for the zero-mean constraint.
        let interior: Vec<usize> = (0..grid.n_edges())
            .filter(|&e| !grid.is_boundary_edge(e))
            .collect();
        let ni = interior.len();
        let nc = grid.n_cells();
        let ntot = ni + nc + 1;
        let m = sys.dense_m();
        let b = sys.dense_b();
        let mut k = DMatrix::zeros(ntot, ntot);
        for (r, &e) in interior.iter().enumerate() {
            for (c, &e2) in interior.iter().enumerate() {
                k[(r, c)] = m[(e, e2)];
            }
            for c in 0..nc {
                k[(r, ni + c)] = -b[(e, c)];
                k[(ni + c, r)] = b[(e, c)];
            }
        }
        let area = grid.cell_area();
        for c in 0..nc {
            k[(ni + c, ni + nc)] = area;
            k[(ni + nc, ni + c)] = area;
        }
        let mut rhs = DVector::zeros(ntot);
        for c in 0..nc {
            rhs[ni + c] = sys.f_int[c];
        }
        let xd = k.lu().solve(&rhs).expect("dense saddle solve");
        for (c, &pc) in sol.p.iter().enumerate() {
            assert_relative_eq!(pc, xd[ni + c], epsilon = 1e-9);
        }

        // Pressure decreases along the source→sink diagonal.
        for k in 0..grid.nx - 1 {
            let a = sol.p[grid.cell_index(k, k)];
            let b = sol.p[grid.cell_index(k + 1, k + 1)];
            assert!(a > b, "pressure not decreasing at diagonal step {k}");
        }
    }

    #[test]
    fn conservation_and_energy_identity_on_contrast_field() {
        use crate::perm::sample_perm;
        let cg = crate::grid::CoarseGrid::default_hierarchy();
        for seed in [1, 2, 3] {
            let field = sample_perm(&cg, seed);
            let kappa = field.to_row_major(&cg);
            let problem = DarcyProblem::five_spot(cg.fine().clone(), kappa).unwrap();
            for q in [MassQuadrature::Lumped, MassQuadrature::Consistent] {
                let sys = assemble(&problem, q).unwrap();
                let sol = sys.solve().unwrap();
                assert!(sol.p.iter().all(|x| x.is_finite()));
                assert!(sys.conservation_defect(&sol) < 1e-8);
                assert!(sys.energy_identity_residual(&sol) < 1e-9);
                let div = downscale_velocity_divergence(&sys, &sol);
                for (d, f) in div.iter().zip(&sys.f_int) {
                    assert!((d - f).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_solution_has_zero_divergence() {
        let grid = FineGrid::new(3, 3);
        let problem = DarcyProblem::new(
            grid.clone(),
            unit_kappa(&grid),
            vec![0.0; 9],
            vec![0.0; grid.n_edges()],
        )
        .unwrap();
        let sys = assemble(&problem, MassQuadrature::Lumped).unwrap();
        let sol = MixedSolution {
            u: vec![0.0; grid.n_edges()],
            p: vec![0.0; 9],
        };
        assert!(downscale_velocity_divergence(&sys, &sol)
            .iter()
            .all(|&d| d == 0.0));
    }

    #[test]
    fn consistent_mass_solution_close_to_lumped() {
        // Same discretization family; solutions agree at O(h²) on smooth data.
        let problem = manufactured_problem(20);
        let a = assemble(&problem, MassQuadrature::Lumped).unwrap().solve().unwrap();
        let b = assemble(&problem, MassQuadrature::Consistent)
            .unwrap()
            .solve()
            .unwrap();
        let diff: f64 = a
            .p
            .iter()
            .zip(&b.p)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = a.p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / norm < 0.05, "relative gap {}", diff / norm);
    }

    #[test]
    fn prescribed_boundary_flux_through_channel() {
        // Uniform inflow left, outflow right: exact linear pressure, u = (1, 0).
        let n = 8;
        let grid = FineGrid::new(n, n);
        let mut g = vec![0.0; grid.n_edges()];
        for j in 0..n {
            g[grid.x_edge_index(0, j)] = -1.0; // inflow (u·n_out = −1)
            g[grid.x_edge_index(n, j)] = 1.0; // outflow
        }
        let problem =
            DarcyProblem::new(grid.clone(), unit_kappa(&grid), vec![0.0; n * n], g).unwrap();
        for q in [MassQuadrature::Lumped, MassQuadrature::Consistent] {
            let sys = assemble(&problem, q).unwrap();
            let sol = sys.solve().unwrap();
            assert!(sys.conservation_defect(&sol) < 1e-10);
            for e in 0..grid.n_edges() {
                let expected = match grid.edge_coords(e).0 {
                    EdgeKind::XNormal => 1.0,
                    EdgeKind::YNormal => 0.0,
                };
                assert_relative_eq!(sol.u[e], expected, epsilon = 1e-9);
            }
            // p = −x + const, so neighboring columns differ by hx.
            for j in 0..n {
                for i in 0..n - 1 {
                    let dp = sol.p[grid.cell_index(i, j)] - sol.p[grid.cell_index(i + 1, j)];
                    assert_relative_eq!(dp, grid.hx, epsilon = 1e-9);
                }
            }
        }
    }
}
