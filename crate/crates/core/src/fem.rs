//! Fine-scale bilinear (Q1) finite elements on the uniform grid.
//!
//! All coefficients are piecewise constant per fine cell and indexed by the
//! global cell id, so one-point (midpoint) evaluation of the coefficient
//! times the exact reference integrals is exact.

use nalgebra::DMatrix;

use crate::grid::{FineGrid, Patch};
use crate::{Error, Result};

/// Q1 stiffness on a square cell, counterclockwise node order. Independent of
/// the cell size in 2D.
pub const Q1_STIFFNESS: [[f64; 4]; 4] = [
    [2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0],
    [-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0],
];

/// Q1 mass on the unit square; scale by the cell area.
pub const Q1_MASS: [[f64; 4]; 4] = [
    [1.0 / 9.0, 1.0 / 18.0, 1.0 / 36.0, 1.0 / 18.0],
    [1.0 / 18.0, 1.0 / 9.0, 1.0 / 18.0, 1.0 / 36.0],
    [1.0 / 36.0, 1.0 / 18.0, 1.0 / 9.0, 1.0 / 18.0],
    [1.0 / 18.0, 1.0 / 36.0, 1.0 / 18.0, 1.0 / 9.0],
];

/// Gradient of a Q1 function at the cell midpoint from its four nodal values.
pub fn q1_midpoint_gradient(v: [f64; 4], h: f64) -> [f64; 2] {
    [
        ((v[1] - v[0]) + (v[2] - v[3])) / (2.0 * h),
        ((v[3] - v[0]) + (v[2] - v[1])) / (2.0 * h),
    ]
}

/// Square sparse matrix in compressed-row form with sorted column indices.
/// Symmetric operators store both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Alias used for the symmetric operators produced by assembly.
pub type SparseSymMatrix = CsrMatrix;

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets. Duplicates are summed in a
    /// deterministic order (sorted by row, column, then insertion).
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        // stable sort keeps insertion order among duplicates
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r},{c}) out of range for n={n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[a..b].binary_search(&j) {
            Ok(k) => self.vals[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let ax = self.matvec(x);
        ax.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Sum of matrices of equal dimension (patterns may differ).
    pub fn sum(parts: &[&CsrMatrix]) -> Self {
        let n = parts[0].n;
        let mut t = Vec::new();
        for p in parts {
            assert_eq!(p.n, n, "dimension mismatch in CsrMatrix::sum");
            for i in 0..n {
                t.extend(p.row(i).map(|(j, v)| (i, j, v)));
            }
        }
        Self::from_triplets(n, t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn restrict(&self, idx: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let mut t = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            for (j, v) in self.row(i) {
                if pos[j] != usize::MAX {
                    t.push((k, pos[j], v));
                }
            }
        }
        Self::from_triplets(idx.len(), t)
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0;
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                b = b.max(i.abs_diff(j));
            }
        }
        b
    }

    /// `self * dense` for a dense matrix with `dim()` rows.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n);
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            for i in 0..self.n {
                out[(i, c)] = self.row(i).map(|(j, v)| v * col[j]).sum();
            }
        }
        out
    }
}

/// Index map between a patch's local nodes and the assembled system.
fn node_index(fine: &FineGrid, patch: Option<&Patch>) -> (Patch, bool) {
    match patch {
        Some(p) => (*p, true),
        None => (fine.full_patch(), false),
    }
}

fn check_positive(name: &str, values: &[f64], cells: impl Iterator<Item = usize>) -> Result<()> {
    for c in cells {
        let v = values[c];
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("{name} {v} in cell {c} is not positive")));
        }
    }
    Ok(())
}

fn assemble_cellwise(
    fine: &FineGrid,
    weight: &[f64],
    patch: Option<&Patch>,
    element: &[[f64; 4]; 4],
    scale: f64,
    name: &str,
) -> Result<CsrMatrix> {
    if weight.len() != fine.num_cells() {
        return Err(Error::Dimension(format!(
            "{name} has {} values for {} cells",
            weight.len(),
            fine.num_cells()
        )));
    }
    let (p, _) = node_index(fine, patch);
    check_positive(name, weight, p.cells(fine))?;
    let mut t = Vec::with_capacity(16 * p.num_cells());
    for cell in p.cells(fine) {
        let nodes = p.local_cell_nodes(fine, cell);
        let w = weight[cell] * scale;
        for a in 0..4 {
            for b in 0..4 {
                t.push((nodes[a], nodes[b], w * element[a][b]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(p.num_nodes(), t))
}

/// Q1 stiffness `int coef grad phi_n . grad phi_m` over the patch (or the
/// whole domain), numbered by the patch-local node order. No boundary
/// conditions are applied.
pub fn assemble_stiffness(fine: &FineGrid, coef: &[f64], patch: Option<&Patch>) -> Result<CsrMatrix> {
    assemble_cellwise(fine, coef, patch, &Q1_STIFFNESS, 1.0, "coefficient")
}

/// Q1 mass `int weight phi_n phi_m`.
pub fn assemble_weighted_mass(
    fine: &FineGrid,
    weight: &[f64],
    patch: Option<&Patch>,
) -> Result<CsrMatrix> {
    let h = fine.h();
    assemble_cellwise(fine, weight, patch, &Q1_MASS, h * h, "mass weight")
}

/// Load vector for a constant source `f`.
pub fn assemble_load(fine: &FineGrid, f: f64, patch: Option<&Patch>) -> Vec<f64> {
    let (p, _) = node_index(fine, patch);
    let mut out = vec![0.0; p.num_nodes()];
    let q = f * fine.h() * fine.h() / 4.0;
    for cell in p.cells(fine) {
        for n in p.local_cell_nodes(fine, cell) {
            out[n] += q;
        }
    }
    out
}

/// Symmetric elimination of prescribed values: the constrained rows and
/// columns are replaced by the identity and their couplings moved to the
/// right-hand side.
pub fn apply_dirichlet(a: &CsrMatrix, f: &[f64], nodes: &[usize], values: &[f64]) -> (CsrMatrix, Vec<f64>) {
    assert_eq!(nodes.len(), values.len());
    let n = a.dim();
    let mut fixed = vec![None; n];
    for (&i, &v) in nodes.iter().zip(values) {
        fixed[i] = Some(v);
    }
    let mut rhs = f.to_vec();
    let mut t = Vec::with_capacity(a.nnz());
    for i in 0..n {
        if let Some(v) = fixed[i] {
            t.push((i, i, 1.0));
            rhs[i] = v;
            continue;
        }
        for (j, aij) in a.row(i) {
            match fixed[j] {
                Some(vj) => rhs[i] -= aij * vj,
                None => t.push((i, j, aij)),
            }
        }
    }
    (CsrMatrix::from_triplets(n, t), rhs)
}

/// Dirichlet elimination with zero data on the domain boundary.
pub fn apply_homogeneous_dirichlet(fine: &FineGrid, a: &CsrMatrix, f: &[f64]) -> (CsrMatrix, Vec<f64>) {
    let nodes = fine.boundary_nodes();
    let zeros = vec![0.0; nodes.len()];
    apply_dirichlet(a, f, &nodes, &zeros)
}

/// Banded Cholesky factor `A = L L^T` (lower band stored row-wise).
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i][i-bw..=i]
    band: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                for k in klo..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Solver(format!(
                            "matrix is not positive definite (pivot {s:.3e} at row {i})"
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.band[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.band[k * w + (i + bw - k)] * y[k];
            }
            y[i] = s / self.band[i * w + bw];
        }
        y
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative residual `||f - A u|| / ||f||` (absolute when `f = 0`).
pub fn relative_residual(a: &CsrMatrix, u: &[f64], f: &[f64]) -> f64 {
    let au = a.matvec(u);
    let r: Vec<f64> = f.iter().zip(&au).map(|(f, a)| f - a).collect();
    let nf = norm(f);
    if nf > 0.0 {
        norm(&r) / nf
    } else {
        norm(&r)
    }
}

/// Solve an SPD system to a relative residual of at most `1e-10`.
pub fn solve_spd(a: &CsrMatrix, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != a.dim() {
        return Err(Error::Dimension(format!(
            "rhs of length {} for a {}x{} matrix",
            f.len(),
            a.dim(),
            a.dim()
        )));
    }
    let chol = BandCholesky::factor(a)?;
    let mut u = chol.solve(f);
    for _ in 0..3 {
        if relative_residual(a, &u, f) <= 1e-12 {
            break;
        }
        let au = a.matvec(&u);
        let r: Vec<f64> = f.iter().zip(&au).map(|(f, a)| f - a).collect();
        let du = chol.solve(&r);
        u.iter_mut().zip(du).for_each(|(u, d)| *u += d);
    }
    let res = relative_residual(a, &u, f);
    if !res.is_finite() {
        return Err(Error::Solver(format!("relative residual {res:.3e}")));
    }
    if res > 1e-10 {
        let eta = backward_error(a, &u, f);
        if eta > 1e-13 {
            return Err(Error::Solver(format!(
                "relative residual {res:.3e} exceeds 1e-10 (backward error {eta:.3e})"
            )));
        }
        log::warn!("relative residual {res:.3e} limited by round-off (backward error {eta:.3e})");
    }
    Ok(u)
}

/// Normwise backward error `||f - A u|| / (||A||_inf ||u|| + ||f||)`.
pub fn backward_error(a: &CsrMatrix, u: &[f64], f: &[f64]) -> f64 {
    let au = a.matvec(u);
    let r: Vec<f64> = f.iter().zip(&au).map(|(f, a)| f - a).collect();
    let a_inf = (0..a.dim())
        .map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    norm(&r) / (a_inf * norm(u) + norm(f)).max(f64::MIN_POSITIVE)
}

/// Solve `-div(coef grad u) = 0` in the patch with the given values on the
/// patch boundary. `boundary_values` is indexed by patch-local node; interior
/// entries are ignored.
pub fn harmonic_extension(
    fine: &FineGrid,
    patch: &Patch,
    coef: &[f64],
    boundary_values: &[f64],
) -> Result<Vec<f64>> {
    let a = assemble_stiffness(fine, coef, Some(patch))?;
    let bnodes: Vec<usize> = (0..patch.num_nodes()).filter(|&l| patch.is_patch_boundary(l)).collect();
    let bvals: Vec<f64> = bnodes.iter().map(|&l| boundary_values[l]).collect();
    let zero = vec![0.0; patch.num_nodes()];
    let (a, f) = apply_dirichlet(&a, &zero, &bnodes, &bvals);
    solve_spd(&a, &f)
}
