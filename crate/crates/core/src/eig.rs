//! Dense generalized symmetric-definite eigenproblems `A v = lambda S v`.
//!
//! `S = L L^T` is factored, the standard problem `L^-1 A L^-T y = lambda y`
//! is solved with the self-adjoint eigendecomposition of `faer`, and vectors
//! are mapped back with `v = L^-T y`. The resulting vectors are
//! S-orthonormal.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Eigenvalues in ascending order with S-orthonormal eigenvectors stored as
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let asym = max_abs(&(m - m.transpose()));
    if asym > 1e-10 * scale {
        return Err(Error::Domain(format!(
            "{name} is not symmetric (|{name} - {name}^T| = {asym:.3e}, |{name}| = {scale:.3e})"
        )));
    }
    Ok(())
}

/// Make the first non-negligible component of every column positive.
pub fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let big = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-8 * big).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Full spectrum of the pencil `(A, S)` with `S` symmetric positive definite.
pub fn sym_gen_eig(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<EigPairs> {
    let n = a.nrows();
    if a.ncols() != n || s.nrows() != n || s.ncols() != n {
        return Err(Error::Dimension(format!(
            "pencil of shapes {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    if n == 0 {
        return Ok(EigPairs {
            values: vec![],
            vectors: DMatrix::zeros(0, 0),
        });
    }
    check_symmetric("A", a)?;
    check_symmetric("S", s)?;
    let sym_s = (s + s.transpose()) * 0.5;
    let chol = sym_s
        .cholesky()
        .ok_or_else(|| Error::Eigen("S is not positive definite (Cholesky failed)".into()))?;
    let l = chol.l();
    // C = L^-1 A L^-T
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite entries in the reduced problem".into()));
    }
    let evd = faer::Mat::from_fn(n, n, |i, j| c[(i, j)])
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("symmetric eigensolver failed: {e:?}")))?;
    let u = evd.U();
    let y = DMatrix::from_fn(n, n, |r, k| u[(r, k)]);
    // Rayleigh quotients of the orthonormal vectors, checked against the
    // reduced operator
    let s_diag = evd.S().column_vector();
    let scale = (0..n).map(|k| s_diag[k].abs()).fold(f64::MIN_POSITIVE, f64::max);
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let yk = y.column(k);
        let cy = &c * yk;
        let mu = yk.dot(&cy);
        let r = (cy - yk * mu).amax();
        if !(r <= 1e-6 * scale) {
            return Err(Error::Eigen(format!("eigenpair {k} (value {mu:.3e}) has residual {r:.3e}, spectral radius {scale:.3e}")));
        }
        values.push(mu);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let y = DMatrix::from_fn(n, n, |r, k| y[(r, order[k])]);
    let lt = l.transpose();
    let mut vectors = lt
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    fix_signs(&mut vectors);
    Ok(EigPairs { values, vectors })
}

/// `max_k ||A v_k - lambda_k S v_k||`.
pub fn max_residual(a: &DMatrix<f64>, s: &DMatrix<f64>, pairs: &EigPairs) -> f64 {
    (0..pairs.len())
        .map(|k| {
            let v: DVector<f64> = pairs.vectors.column(k).into();
            (a * &v - s * &v * pairs.values[k]).norm()
        })
        .fold(0.0, f64::max)
}

/// `max |V^T S V - I|`.
pub fn orthonormality_defect(s: &DMatrix<f64>, vectors: &DMatrix<f64>) -> f64 {
    let g = vectors.transpose() * s * vectors;
    let n = g.nrows();
    max_abs(&(g - DMatrix::identity(n, n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_stiffness, assemble_weighted_mass};
    use crate::grid::FineGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        b.transpose() * &b + DMatrix::identity(n, n) * (0.1 * n as f64)
    }

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &b + b.transpose()
    }

    #[test]
    fn diagonal_standard_problem() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let s = DMatrix::identity(2, 2);
        let p = sym_gen_eig(&a, &s).unwrap();
        assert_eq!(p.values.len(), 2);
        assert!((p.values[0] - 1.0).abs() < 1e-14 && (p.values[1] - 2.0).abs() < 1e-14);
        assert!((p.vectors[(1, 0)] - 1.0).abs() < 1e-14 && p.vectors[(0, 0)].abs() < 1e-14);
        assert!((p.vectors[(0, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn neumann_pencil_has_constant_null_vector() {
        let fine = FineGrid::new(8).unwrap();
        let c = vec![3.0; 64];
        let a = assemble_stiffness(&fine, &c, None).unwrap().to_dense();
        let s = assemble_weighted_mass(&fine, &c, None).unwrap().to_dense();
        let p = sym_gen_eig(&a, &s).unwrap();
        let top = *p.values.last().unwrap();
        assert!(p.values[0].abs() <= 1e-10 * top.max(1.0), "lambda_1 = {}", p.values[0]);
        let v0 = p.vectors.column(0);
        let mean = v0.mean();
        assert!(v0.iter().all(|x| (x - mean).abs() < 1e-8 * mean.abs()));
        assert!(mean > 0.0);
    }

    #[test]
    fn nearly_diagonal_values_match_vectors() {
        let c = DMatrix::from_column_slice(
            4,
            4,
            &[
                92.80631991434812, -8.359236988175534e-13, 1.4203371757262553e-13, 2.5945011764730885e-14,
                -8.359236988175534e-13, 432.8963219851988, -9.22037198940233e-14, 1.6789050945550473e-13,
                1.4203371757262553e-13, -9.22037198940233e-14, 849.3563340058719, 2.380437817770318e-13,
                2.5945011764730885e-14, 1.6789050945550473e-13, 2.380437817770318e-13, 1144.5185791820513,
            ],
        );
        let p = sym_gen_eig(&c, &DMatrix::identity(4, 4)).unwrap();
        for k in 0..4 {
            assert!((p.values[k] - c[(k, k)]).abs() < 1e-9);
            assert!((p.vectors[(k, k)] - 1.0).abs() < 1e-12, "column {k}: {}", p.vectors.column(k));
        }
        assert!(max_residual(&c, &DMatrix::identity(4, 4), &p) <= 1e-10);
    }

    #[test]
    fn random_pencils_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..10 {
            let a = random_sym(20, &mut rng);
            let s = random_spd(20, &mut rng);
            let p = sym_gen_eig(&a, &s).unwrap();
            assert!(p.values.windows(2).all(|w| w[0] <= w[1]));
            assert!(max_residual(&a, &s, &p) <= 1e-8 * max_abs(&a));
            assert!(orthonormality_defect(&s, &p.vectors) <= 1e-8);
            // trace identity
            let l = s.clone().cholesky().unwrap().l();
            let x = l.solve_lower_triangular(&a).unwrap();
            let c = l.solve_lower_triangular(&x.transpose()).unwrap();
            let tr: f64 = p.values.iter().sum();
            assert!((tr - c.trace()).abs() <= 1e-8 * c.trace().abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let s = DMatrix::identity(2, 2);
        assert!(matches!(sym_gen_eig(&a, &s), Err(Error::Domain(_))));
        let s_bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let a_ok = DMatrix::identity(2, 2);
        assert!(matches!(sym_gen_eig(&a_ok, &s_bad), Err(Error::Eigen(_))));
        assert!(matches!(
            sym_gen_eig(&a_ok, &DMatrix::identity(3, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn deterministic_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_sym(12, &mut rng);
        let s = random_spd(12, &mut rng);
        let p1 = sym_gen_eig(&a, &s).unwrap();
        let p2 = sym_gen_eig(&a, &s).unwrap();
        assert_eq!(p1, p2);
        for col in p1.vectors.column_iter() {
            let big = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let first = col.iter().find(|v| v.abs() > 1e-8 * big).unwrap();
            assert!(*first > 0.0);
        }
    }
}
