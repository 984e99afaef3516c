//! Evaluation metrics: MSE, R², and the average absolute physical residual.

use crate::error::{Error, Result};
use crate::grid::FineGrid;

/// Mean squared error between two equal-length vectors.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: vec![y.len()],
            rhs: vec![y_hat.len()],
        });
    }
    Ok(y.iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64)
}

/// Coefficient of determination; errors on constant `y` (zero variance).
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::ShapeMismatch {
            op: "r2",
            lhs: vec![y.len()],
            rhs: vec![y_hat.len()],
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument {
            what: "r2",
            msg: "true values are constant (zero variance)".to_string(),
        });
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Conservative five-point Darcy residual `R = −div(κ∇p) − f` of a
/// cell-centered pressure field, row-major layout. Face fluxes use the
/// harmonic mean of the adjacent permeabilities; boundary faces are no-flow
/// and contribute nothing, matching the mixed solver's discretization.
pub fn discrete_residual_field(
    grid: &FineGrid,
    p: &[f64],
    kappa: &[f64],
    f: &[f64],
) -> Result<Vec<f64>> {
    let n = grid.n_cells();
    if p.len() != n || kappa.len() != n || f.len() != n {
        return Err(Error::ShapeMismatch {
            op: "discrete_residual",
            lhs: vec![p.len(), kappa.len()],
            rhs: vec![f.len(), n],
        });
    }
    if let Some(k) = kappa.iter().find(|&&k| !(k > 0.0)) {
        return Err(Error::InvalidArgument {
            what: "kappa",
            msg: format!("permeability must be positive, found {k}"),
        });
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx2, hy2) = (grid.hx * grid.hx, grid.hy * grid.hy);
    let harm = |a: f64, b: f64| 2.0 / (1.0 / a + 1.0 / b);
    let mut out = vec![0.0; n];
    for j in 0..ny {
        for i in 0..nx {
            let c = grid.cell_index(i, j);
            let mut acc = 0.0;
            if i > 0 {
                let o = grid.cell_index(i - 1, j);
                acc += harm(kappa[c], kappa[o]) * (p[c] - p[o]) / hx2;
            }
            if i + 1 < nx {
                let o = grid.cell_index(i + 1, j);
                acc += harm(kappa[c], kappa[o]) * (p[c] - p[o]) / hx2;
            }
            if j > 0 {
                let o = grid.cell_index(i, j - 1);
                acc += harm(kappa[c], kappa[o]) * (p[c] - p[o]) / hy2;
            }
            if j + 1 < ny {
                let o = grid.cell_index(i, j + 1);
                acc += harm(kappa[c], kappa[o]) * (p[c] - p[o]) / hy2;
            }
            out[c] = acc - f[c];
        }
    }
    Ok(out)
}

/// Average absolute physical residual over a batch of pressure fields.
pub fn aapr(grid: &FineGrid, p_fields: &[Vec<f64>], kappa_fields: &[Vec<f64>], f: &[f64]) -> Result<f64> {
    if p_fields.len() != kappa_fields.len() || p_fields.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "aapr",
            lhs: vec![p_fields.len()],
            rhs: vec![kappa_fields.len()],
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, k) in p_fields.iter().zip(kappa_fields) {
        let r = discrete_residual_field(grid, p, k, f)?;
        total += r.iter().map(|x| x.abs()).sum::<f64>();
        count += r.len();
    }
    Ok(total / count as f64)
}

/// Per-split metric rows plus a pooled total, serialized as CSV.
#[derive(Debug, Clone)]
pub struct MetricReport {
    /// (split name, mse, r2, aapr). `aapr` is NaN-free; rows may omit it as
    /// `None` for basis models where no residual is defined.
    pub rows: Vec<(String, f64, f64, Option<f64>)>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,mse,r2,aapr\n");
        for (name, mse, r2, aapr) in &self.rows {
            debug_assert!(*r2 <= 1.0 + 1e-12, "R² cannot exceed 1");
            match aapr {
                Some(a) => out.push_str(&format!("{name},{mse:.12e},{r2:.12e},{a:.12e}\n")),
                None => out.push_str(&format!("{name},{mse:.12e},{r2:.12e},\n")),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn perfect_prediction_scores() {
        let y = vec![1.0, 2.0, 3.0];
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let y = vec![1.0, 2.0, 3.0];
        let yhat = vec![2.0, 2.0, 2.0];
        assert_relative_eq!(r2(&y, &yhat).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn hand_computed_case() {
        let y = vec![1.0, 2.0, 3.0];
        let yhat = vec![1.0, 2.0, 4.0];
        assert_relative_eq!(mse(&y, &yhat).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(r2(&y, &yhat).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn r2_rejects_constant_truth() {
        assert!(r2(&[2.0, 2.0], &[1.0, 3.0]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn residual_of_constant_pressure_is_minus_f() {
        let grid = FineGrid::new(4, 4);
        let p = vec![3.5; 16];
        let kappa = vec![2.0; 16];
        let zero = vec![0.0; 16];
        let r = discrete_residual_field(&grid, &p, &kappa, &zero).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
        let ones = vec![1.0; 16];
        let r = discrete_residual_field(&grid, &vec![0.0; 16], &kappa, &ones).unwrap();
        assert!(r.iter().all(|&x| x == -1.0));
    }

    #[test]
    fn residual_truncation_is_second_order() {
        let mut floors = Vec::new();
        for n in [30, 60, 120] {
            let grid = FineGrid::new(n, n);
            let mut p = vec![0.0; n * n];
            let mut f = vec![0.0; n * n];
            for j in 0..n {
                for i in 0..n {
                    let (x, y) = grid.cell_center(i, j);
                    let v = (PI * x).cos() * (PI * y).cos();
                    p[grid.cell_index(i, j)] = v;
                    f[grid.cell_index(i, j)] = 2.0 * PI * PI * v;
                }
            }
            let kappa = vec![1.0; n * n];
            let r = discrete_residual_field(&grid, &p, &kappa, &f).unwrap();
            floors.push(r.iter().map(|x| x.abs()).fold(0.0, f64::max));
        }
        let o1 = (floors[0] / floors[1]).log2();
        let o2 = (floors[1] / floors[2]).log2();
        assert!(
            (1.6..=2.4).contains(&o1) && (1.6..=2.4).contains(&o2),
            "orders {o1:.3}, {o2:.3}; floors {floors:?}"
        );
    }

    #[test]
    fn fine_fem_solution_has_machine_level_residual() {
        use crate::fem::{assemble, DarcyProblem, MassQuadrature};
        use crate::grid::CoarseGrid;
        use crate::perm::sample_perm;
        let cg = CoarseGrid::default_hierarchy();
        let field = sample_perm(&cg, 4);
        let kappa = field.to_row_major(&cg);
        let problem = DarcyProblem::five_spot(cg.fine().clone(), kappa.clone()).unwrap();
        let sol = assemble(&problem, MassQuadrature::Lumped).unwrap().solve().unwrap();
        let r = discrete_residual_field(cg.fine(), &sol.p, &kappa, &problem.source).unwrap();
        let worst = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
        // The conservative stencil reproduces the mixed solver's flux balance.
        assert!(worst < 1e-6, "fine solution residual {worst}");
    }

    #[test]
    fn aapr_trivial_values() {
        let grid = FineGrid::new(3, 3);
        let p = vec![vec![0.7; 9]];
        let k = vec![vec![1.0; 9]];
        assert_eq!(aapr(&grid, &p, &k, &vec![0.0; 9]).unwrap(), 0.0);
        let zero_p = vec![vec![0.0; 9]];
        assert_eq!(aapr(&grid, &zero_p, &k, &vec![1.0; 9]).unwrap(), 1.0);
    }
}
