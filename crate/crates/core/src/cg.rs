//! Coarse Galerkin systems `A_0 = R_0 A R_0^T`, `F_0 = R_0 F` and their dense
//! direct solution. The CG coupling uses conforming multiscale basis
//! functions; [`crate::dg`] reuses the same operator type on the broken space.

use nalgebra::{DMatrix, DVector};

use crate::fem::CsrMatrix;
use crate::spaces::{BasisMatrix, Formulation};
use crate::{Error, Result};

/// Coarse system together with the basis that produced it.
#[derive(Debug, Clone)]
pub struct CoarseOperator {
    pub basis: BasisMatrix,
    pub a0: DMatrix<f64>,
    pub f0: Vec<f64>,
    pub formulation: Formulation,
}

impl CoarseOperator {
    pub fn dim(&self) -> usize {
        self.f0.len()
    }

    /// Galerkin triple product of `basis` with a fine operator and load.
    pub fn assemble(basis: BasisMatrix, a: &CsrMatrix, f: &[f64], formulation: Formulation) -> Result<Self> {
        if f.len() != basis.n_rows {
            return Err(Error::Dimension(format!(
                "load of length {} for a basis with {} rows",
                f.len(),
                basis.n_rows
            )));
        }
        let a0 = basis.galerkin(a)?;
        let f0 = basis.restrict(f);
        Ok(Self {
            basis,
            a0,
            f0,
            formulation,
        })
    }

    /// `||F_0 - A_0 U|| / ||F_0||`.
    pub fn relative_residual(&self, u: &[f64]) -> f64 {
        coarse_residual(&self.a0, &self.f0, u)
    }
}

/// `||f - A u|| / ||f||` for a dense system (absolute when `f = 0`).
pub fn coarse_residual(a: &DMatrix<f64>, f: &[f64], u: &[f64]) -> f64 {
    let r = DVector::from_column_slice(f) - a * DVector::from_column_slice(u);
    let nf = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nf > 0.0 {
        r.norm() / nf
    } else {
        r.norm()
    }
}

/// CG coarse operator from the global basis, the fine stiffness (without
/// boundary conditions; basis columns vanish on the boundary) and the load.
pub fn assemble_coarse_cg(r0: BasisMatrix, a: &CsrMatrix, f: &[f64]) -> Result<CoarseOperator> {
    CoarseOperator::assemble(r0, a, f, Formulation::Cg)
}

/// Column at which an unpivoted Cholesky factorization breaks down.
fn failing_pivot(a: &DMatrix<f64>) -> Option<(usize, f64)> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 1e-14 * scale) {
            return Some((j, d));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    None
}

/// Dense Cholesky solve with iterative refinement.
///
/// On failure the message names the basis column (and its subdomain) at
/// which the factorization broke down.
pub fn solve_dense_spd(op: &CoarseOperator) -> Result<Vec<f64>> {
    let a = &op.a0;
    let n = a.nrows();
    if n == 0 {
        return Err(Error::Solver("empty coarse system".into()));
    }
    let describe = |j: usize, d: f64| {
        let hint = match op.formulation {
            Formulation::Cg => "",
            Formulation::Dg => "; penalty too small?",
        };
        format!(
            "coarse matrix is not positive definite: pivot {d:.3e} at basis column {j} (subdomain {}){hint}",
            op.basis.groups.get(j).copied().unwrap_or(0)
        )
    };
    let chol = match a.clone().cholesky() {
        Some(c) => c,
        None => {
            let (j, d) = failing_pivot(a).unwrap_or((n - 1, 0.0));
            return Err(Error::Solver(describe(j, d)));
        }
    };
    if let Some((j, d)) = failing_pivot_cheap(&chol) {
        return Err(Error::Solver(describe(j, d)));
    }
    let f = DVector::from_column_slice(&op.f0);
    let mut u = chol.solve(&f);
    for _ in 0..3 {
        let r = &f - a * &u;
        if r.norm() <= 1e-14 * f.norm() {
            break;
        }
        u += chol.solve(&r);
    }
    let res = coarse_residual(a, &op.f0, u.as_slice());
    if !res.is_finite() || res > 1e-10 {
        return Err(Error::Solver(format!("coarse residual {res:.3e} exceeds 1e-10")));
    }
    if res > 1e-12 {
        log::warn!("coarse residual {res:.3e} above 1e-12 after refinement");
    }
    Ok(u.as_slice().to_vec())
}

/// Rejects factorizations whose pivots collapsed to round-off relative to the
/// largest one; those systems are numerically singular.
fn failing_pivot_cheap(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> Option<(usize, f64)> {
    let pivots: Vec<f64> = chol.l_dirty().diagonal().iter().map(|d| d * d).collect();
    let big = pivots.iter().cloned().fold(0.0, f64::max);
    pivots.iter().position(|&d| !(d > 1e-12 * big)).map(|j| (j, pivots[j]))
}

/// Solve the coarse system; returns `U_0` and the fine prolongation `R_0^T U_0`.
pub fn solve_coarse(op: &CoarseOperator) -> Result<(Vec<f64>, Vec<f64>)> {
    let u0 = solve_dense_spd(op)?;
    let fine = op.basis.prolong(&u0);
    Ok((u0, fine))
}
