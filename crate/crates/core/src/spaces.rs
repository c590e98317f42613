//! Multiscale partition of unity, the spectral weight `kappa_tilde`, and the
//! snapshot -> offline -> online hierarchy of local spaces.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eig::sym_gen_eig;
use crate::fem::{
    apply_dirichlet, assemble_stiffness, assemble_weighted_mass, q1_midpoint_gradient, BandCholesky,
    CsrMatrix,
};
use crate::grid::{CoarseGrid, FineGrid, Patch, Subdomain};
use crate::{Error, Result};

/// Relative residual below which a snapshot column is treated as dependent.
pub const DEDUP_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Cg,
    Dg,
}

impl Formulation {
    /// Subdomains carrying local spaces: neighborhoods for CG, elements for DG.
    pub fn subdomains(&self, coarse: &CoarseGrid) -> Vec<Subdomain> {
        match self {
            Formulation::Cg => (0..coarse.num_nodes()).map(Subdomain::Neighborhood).collect(),
            Formulation::Dg => (0..coarse.num_elements()).map(Subdomain::Element).collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Cg => "cg",
            Formulation::Dg => "dg",
        }
    }
}

/// Multiscale hat functions. For every coarse element the harmonic
/// extensions of the four vertex hats are stored over the element patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOfUnity {
    element_values: Vec<[Vec<f64>; 4]>,
    energy: Vec<f64>,
}

impl PartitionOfUnity {
    /// Values of the hat of local vertex `a` over coarse element `k`.
    pub fn on_element(&self, k: usize, a: usize) -> &[f64] {
        &self.element_values[k][a]
    }

    /// `chi_i` over the patch of the neighborhood of coarse node `i`.
    pub fn on_neighborhood(&self, fine: &FineGrid, coarse: &CoarseGrid, i: usize) -> Vec<f64> {
        let hood = coarse.neighborhood_patch(i);
        let mut out = vec![0.0; hood.num_nodes()];
        for k in coarse.neighborhood(i) {
            let a = coarse.element_vertices(k).iter().position(|&v| v == i).unwrap();
            let kp = coarse.element_patch(k);
            for (l, &v) in self.element_values[k][a].iter().enumerate() {
                let (x, y) = kp.node_ij(l);
                out[hood.local_node(x, y).unwrap()] = v;
            }
        }
        let _ = fine;
        out
    }

    /// `chi_i` as a global fine nodal vector.
    pub fn global(&self, fine: &FineGrid, coarse: &CoarseGrid, i: usize) -> Vec<f64> {
        let hood = coarse.neighborhood_patch(i);
        let mut out = vec![0.0; fine.num_nodes()];
        for (l, v) in self.on_neighborhood(fine, coarse, i).into_iter().enumerate() {
            let (x, y) = hood.node_ij(l);
            out[fine.node_id(x, y)] = v;
        }
        out
    }

    /// `max |sum_i chi_i - 1|` over the fine nodes of every coarse element.
    pub fn partition_defect(&self) -> f64 {
        self.element_values
            .iter()
            .flat_map(|hats| (0..hats[0].len()).map(move |l| (hats.iter().map(|h| h[l]).sum::<f64>() - 1.0).abs()))
            .fold(0.0, f64::max)
    }

    /// Per fine cell, `sum_i H^2 |grad chi_i|^2` at the cell midpoint.
    pub fn energy(&self) -> &[f64] {
        &self.energy
    }
}

/// Bilinear coarse hat of local vertex `a` (counterclockwise from lower-left)
/// evaluated at the patch-local nodes of a coarse element.
fn coarse_hat(patch: &Patch, a: usize) -> Vec<f64> {
    let (w, hgt) = (patch.cells_x() as f64, patch.cells_y() as f64);
    (0..patch.num_nodes())
        .map(|l| {
            let (i, j) = patch.node_ij(l);
            let s = (i - patch.x0) as f64 / w;
            let t = (j - patch.y0) as f64 / hgt;
            match a {
                0 => (1.0 - s) * (1.0 - t),
                1 => s * (1.0 - t),
                2 => s * t,
                _ => (1.0 - s) * t,
            }
        })
        .collect()
}

/// Harmonic extension of the linear vertex hats into every coarse element.
pub fn build_pou(fine: &FineGrid, coarse: &CoarseGrid, coef: &[f64]) -> Result<PartitionOfUnity> {
    let mut element_values = Vec::with_capacity(coarse.num_elements());
    for k in 0..coarse.num_elements() {
        let patch = coarse.element_patch(k);
        let a = assemble_stiffness(fine, coef, Some(&patch))?;
        let bnodes: Vec<usize> = (0..patch.num_nodes()).filter(|&l| patch.is_patch_boundary(l)).collect();
        let zero = vec![0.0; patch.num_nodes()];
        let mut chol = None;
        let mut hats: [Vec<f64>; 4] = Default::default();
        for (a_idx, hat) in hats.iter_mut().enumerate() {
            let g = coarse_hat(&patch, a_idx);
            let bvals: Vec<f64> = bnodes.iter().map(|&l| g[l]).collect();
            let (ad, rhs) = apply_dirichlet(&a, &zero, &bnodes, &bvals);
            if chol.is_none() {
                chol = Some(BandCholesky::factor(&ad).map_err(|e| e.context(format!("partition of unity on element {k}")))?);
            }
            let c = chol.as_ref().unwrap();
            let mut u = c.solve(&rhs);
            // one refinement step keeps sum_i chi_i = 1 at round-off level
            let au = ad.matvec(&u);
            let r: Vec<f64> = rhs.iter().zip(&au).map(|(f, a)| f - a).collect();
            c.solve(&r).iter().zip(u.iter_mut()).for_each(|(d, u)| *u += d);
            *hat = u;
        }
        element_values.push(hats);
    }
    let energy = pou_energy(fine, coarse, &element_values);
    Ok(PartitionOfUnity {
        element_values,
        energy,
    })
}

fn pou_energy(fine: &FineGrid, coarse: &CoarseGrid, element_values: &[[Vec<f64>; 4]]) -> Vec<f64> {
    let h2 = coarse.H() * coarse.H();
    let mut energy = vec![0.0; fine.num_cells()];
    for (k, hats) in element_values.iter().enumerate() {
        let patch = coarse.element_patch(k);
        for cell in patch.cells(fine) {
            let nodes = patch.local_cell_nodes(fine, cell);
            energy[cell] = hats
                .iter()
                .map(|v| {
                    let g = q1_midpoint_gradient(nodes.map(|n| v[n]), fine.h());
                    h2 * (g[0] * g[0] + g[1] * g[1])
                })
                .sum();
        }
    }
    energy
}

/// `kappa_tilde = coef * sum_i H^2 |grad chi_i|^2` per fine cell.
pub fn kappa_tilde(coef: &[f64], pou: &PartitionOfUnity) -> Result<Vec<f64>> {
    if coef.len() != pou.energy.len() {
        return Err(Error::Dimension("coefficient and partition of unity disagree".into()));
    }
    coef.iter()
        .zip(&pou.energy)
        .enumerate()
        .map(|(c, (k, e))| {
            let w = k * e;
            if w > 0.0 && w.is_finite() {
                Ok(w)
            } else {
                Err(Error::Domain(format!("spectral weight {w} in cell {c} is not positive")))
            }
        })
        .collect()
}

/// Equally spaced samples of the solution range, optionally paired with
/// physical parameter samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRangeGrid {
    pub u_min: f64,
    pub u_max: f64,
    pub u_points: Vec<f64>,
    pub mu_p: Option<Vec<f64>>,
}

impl SolutionRangeGrid {
    /// `(u_j, mu_p_l)` pairs, `u` varying fastest.
    pub fn pairs(&self) -> Vec<(f64, Option<f64>)> {
        match &self.mu_p {
            None => self.u_points.iter().map(|&u| (u, None)).collect(),
            Some(mus) => mus
                .iter()
                .flat_map(|&mu| self.u_points.iter().map(move |&u| (u, Some(mu))))
                .collect(),
        }
    }

    pub fn mean_u(&self) -> f64 {
        self.u_points.iter().sum::<f64>() / self.u_points.len() as f64
    }

    pub fn mean_mu_p(&self) -> Option<f64> {
        self.mu_p.as_ref().map(|m| m.iter().sum::<f64>() / m.len() as f64)
    }
}

/// `n_s` equally spaced points in `[u_min, u_max]`.
pub fn sample_range(u_min: f64, u_max: f64, n_s: usize, mu_p: Option<Vec<f64>>) -> Result<SolutionRangeGrid> {
    if n_s < 2 {
        return Err(Error::InvalidConfig(format!("N_s = {n_s} must be at least 2")));
    }
    if !(u_min < u_max) {
        return Err(Error::InvalidConfig(format!("empty solution range [{u_min}, {u_max}]")));
    }
    if let Some(m) = &mu_p {
        if m.is_empty() {
            return Err(Error::InvalidConfig("empty mu_p sample list".into()));
        }
    }
    let step = (u_max - u_min) / (n_s - 1) as f64;
    let u_points = (0..n_s).map(|k| u_min + k as f64 * step).collect();
    Ok(SolutionRangeGrid {
        u_min,
        u_max,
        u_points,
        mu_p,
    })
}

/// How many eigenfunctions to keep from each snapshot eigenproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum SnapshotRule {
    /// Keep the first `l_max` eigenfunctions of every sample.
    Fixed { l_max: usize },
    /// Keep `l_init + extra`, where `l_init` sits at the largest ratio
    /// `lambda_{l+1} / lambda_l` for `l <= l_cap` among nonzero eigenvalues.
    Adaptive { extra: usize, l_cap: usize },
}

/// Spectral-gap index (1-based count) for the adaptive rule.
pub fn spectral_gap_count(values: &[f64], l_cap: usize) -> usize {
    let n = values.len();
    if n < 2 {
        return n;
    }
    let cap = l_cap.min(n - 1).max(1);
    let scale = values[cap].abs().max(f64::MIN_POSITIVE);
    let mut best = (f64::NEG_INFINITY, 1);
    for l in 1..=cap {
        let lo = values[l - 1];
        // Neumann null modes are kept but never define the gap
        if lo <= 1e-8 * scale {
            if best.0 == f64::NEG_INFINITY {
                best.1 = l.min(cap);
            }
            continue;
        }
        let ratio = values[l] / lo;
        if ratio > best.0 {
            best = (ratio, l);
        }
    }
    if best.0 == f64::NEG_INFINITY {
        // every eigenvalue up to the cap is a null mode
        return cap;
    }
    best.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Snapshot,
    Offline,
    Online,
}

/// Local basis over the fine nodes of one subdomain (patch-local order).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSpace {
    pub subdomain: Subdomain,
    pub stage: Stage,
    /// Columns are basis functions over the patch nodes.
    pub basis: DMatrix<f64>,
    /// Full ascending spectrum of the eigenproblem that produced the basis
    /// (for snapshots, the concatenated kept eigenvalues per sample).
    pub eigenvalues: Vec<f64>,
    /// First eigenvalue whose eigenfunction was not kept.
    pub discarded_eigenvalue: Option<f64>,
    /// Number of columns before deduplication (snapshots only).
    pub raw_count: usize,
}

impl LocalSpace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Reciprocal of the first discarded eigenvalue; small when the
    /// discarded modes are energetic. This is the quantity that tracks the
    /// enrichment error.
    pub fn lambda_star(&self) -> Option<f64> {
        self.discarded_eigenvalue.map(|l| 1.0 / l)
    }
}

/// A local spectral problem: stiffness and weighted mass on a subdomain
/// patch, with optional homogeneous Dirichlet nodes (patch-local ids).
#[derive(Debug, Clone)]
pub struct LocalPencil {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub dirichlet: Vec<usize>,
}

/// Patch-local nodes lying on the boundary of the domain.
pub fn domain_boundary_nodes(fine: &FineGrid, patch: &Patch) -> Vec<usize> {
    (0..patch.num_nodes())
        .filter(|&l| {
            let (i, j) = patch.node_ij(l);
            fine.is_boundary(fine.node_id(i, j))
        })
        .collect()
}

/// Assemble the pencil `(A(mu), S(mu))` of a subdomain. Zero Neumann data on
/// the subdomain boundary, except that DG elements take Dirichlet data on
/// the part of their boundary on the domain boundary.
pub fn local_pencil(
    fine: &FineGrid,
    coarse: &CoarseGrid,
    tau: Subdomain,
    coef: &[f64],
    weight: &[f64],
) -> Result<LocalPencil> {
    let patch = coarse.patch(tau);
    let dirichlet = match tau {
        Subdomain::Element(_) => domain_boundary_nodes(fine, &patch),
        Subdomain::Neighborhood(_) => vec![],
    };
    Ok(LocalPencil {
        stiffness: assemble_stiffness(fine, coef, Some(&patch))?,
        mass: assemble_weighted_mass(fine, weight, Some(&patch))?,
        dirichlet,
    })
}

/// Full spectrum of a local pencil, with eigenvectors over all patch nodes
/// (zero at Dirichlet nodes).
pub fn solve_local_pencil(p: &LocalPencil) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = p.stiffness.dim();
    if p.dirichlet.is_empty() {
        let e = sym_gen_eig(&p.stiffness.to_dense(), &p.mass.to_dense())?;
        return Ok((e.values, e.vectors));
    }
    let mut fixed = vec![false; n];
    p.dirichlet.iter().for_each(|&d| fixed[d] = true);
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    let e = sym_gen_eig(&p.stiffness.restrict(&free).to_dense(), &p.mass.restrict(&free).to_dense())?;
    let mut v = DMatrix::zeros(n, e.len());
    for (r, &i) in free.iter().enumerate() {
        for c in 0..e.len() {
            v[(i, c)] = e.vectors[(r, c)];
        }
    }
    Ok((e.values, v))
}

/// Gram-Schmidt (twice) in the metric `metric`, dropping columns whose
/// relative residual is below [`DEDUP_TOLERANCE`]. Returns an orthonormal
/// basis of the span of the kept columns.
pub fn orthonormalize(columns: &DMatrix<f64>, metric: &CsrMatrix) -> DMatrix<f64> {
    let mut kept: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut kept_m: Vec<nalgebra::DVector<f64>> = Vec::new();
    for c in 0..columns.ncols() {
        let v: nalgebra::DVector<f64> = columns.column(c).into();
        let mv = nalgebra::DVector::from_vec(metric.matvec(v.as_slice()));
        let norm0 = v.dot(&mv).max(0.0).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut w = v;
        for _ in 0..2 {
            for (q, mq) in kept.iter().zip(&kept_m) {
                let coeff = mq.dot(&w);
                w.axpy(-coeff, q, 1.0);
            }
        }
        let mw = nalgebra::DVector::from_vec(metric.matvec(w.as_slice()));
        let norm = w.dot(&mw).max(0.0).sqrt();
        if norm < DEDUP_TOLERANCE * norm0 {
            continue;
        }
        kept.push(w / norm);
        kept_m.push(mw / norm);
    }
    let n = columns.nrows();
    DMatrix::from_fn(n, kept.len(), |r, c| kept[c][r])
}

/// Snapshot space of one subdomain from its pencils at the sample parameters.
///
/// `metric` is the inner product used for deduplication (typically the
/// unit-weight mass matrix of the patch).
pub fn build_snapshots(
    tau: Subdomain,
    pencils: &[LocalPencil],
    rule: SnapshotRule,
    metric: &CsrMatrix,
) -> Result<LocalSpace> {
    if pencils.is_empty() {
        return Err(Error::InvalidConfig("no snapshot samples".into()));
    }
    let n = pencils[0].stiffness.dim();
    let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut kept_values = Vec::new();
    for (j, p) in pencils.iter().enumerate() {
        let (values, vectors) = solve_local_pencil(p).map_err(|e| e.context(format!("snapshot sample {j} on {tau:?}")))?;
        let count = match rule {
            SnapshotRule::Fixed { l_max } => l_max,
            SnapshotRule::Adaptive { extra, l_cap } => spectral_gap_count(&values, l_cap) + extra,
        }
        .min(values.len());
        for c in 0..count {
            cols.push(vectors.column(c).into());
            kept_values.push(values[c]);
        }
    }
    let raw_count = cols.len();
    let raw = DMatrix::from_fn(n, raw_count, |r, c| cols[c][r]);
    let basis = orthonormalize(&raw, metric);
    Ok(LocalSpace {
        subdomain: tau,
        stage: Stage::Snapshot,
        basis,
        eigenvalues: kept_values,
        discarded_eigenvalue: None,
        raw_count,
    })
}

/// Projected eigenproblem `(R^T A R, R^T S R)` on the span of `space`.
fn project_and_solve(space: &LocalSpace, a: &CsrMatrix, s: &CsrMatrix) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let r = &space.basis;
    if a.dim() != r.nrows() || s.dim() != r.nrows() {
        return Err(Error::Dimension(format!(
            "pencil of size {} for a basis with {} rows",
            a.dim(),
            r.nrows()
        )));
    }
    let ar = r.transpose() * a.mul_dense(r);
    let sr = r.transpose() * s.mul_dense(r);
    let ar = (&ar + ar.transpose()) * 0.5;
    let sr = (&sr + sr.transpose()) * 0.5;
    let e = sym_gen_eig(&ar, &sr).map_err(|e| e.context(format!("projected pencil on {:?}", space.subdomain)))?;
    Ok((e.values, e.vectors))
}

/// Relative eigenvalue spacing below which consecutive modes form a cluster.
pub const CLUSTER_TOLERANCE: f64 = 1e-2;

/// Smallest count `>= keep` that does not split a cluster of near-equal
/// eigenvalues.
pub fn cluster_closed_count(values: &[f64], keep: usize) -> usize {
    let close = |j: usize| (values[j + 1] - values[j]).abs() <= CLUSTER_TOLERANCE * values[j + 1].abs().max(values[j].abs());
    let mut k = keep;
    while k > 0 && k < values.len() && close(k - 1) {
        k += 1;
    }
    k
}

fn reduce(space: &LocalSpace, a: &CsrMatrix, s: &CsrMatrix, keep: usize, stage: Stage) -> Result<LocalSpace> {
    let (values, coords) = project_and_solve(space, a, s)?;
    let keep = if stage == Stage::Online {
        cluster_closed_count(&values, keep)
    } else {
        keep
    };
    // nothing discarded: the online space is the offline space itself
    let basis = if stage == Stage::Online && keep == space.dim() {
        space.basis.clone()
    } else {
        &space.basis * coords.columns(0, keep)
    };
    Ok(LocalSpace {
        subdomain: space.subdomain,
        stage,
        basis,
        discarded_eigenvalue: values.get(keep).copied(),
        eigenvalues: values,
        raw_count: space.dim(),
    })
}

/// Offline space: the `m_off` smallest modes of the snapshot-projected pencil
/// at the averaged parameter.
pub fn build_offline(snapshot: &LocalSpace, a_bar: &CsrMatrix, s_bar: &CsrMatrix, m_off: usize) -> Result<LocalSpace> {
    if snapshot.dim() == 0 {
        return Err(Error::InvalidConfig(format!("empty snapshot space on {:?}", snapshot.subdomain)));
    }
    if m_off == 0 || m_off > snapshot.dim() {
        return Err(Error::InvalidConfig(format!(
            "M_off = {m_off} outside [1, M_snap = {}] on {:?}",
            snapshot.dim(),
            snapshot.subdomain
        )));
    }
    reduce(snapshot, a_bar, s_bar, m_off, Stage::Offline)
}

/// Online space: the `m_on` smallest modes of the offline-projected pencil
/// at the current parameter, extended to the end of a near-degenerate
/// cluster when the cut would split one. When every mode is kept the
/// offline basis is returned unchanged.
pub fn build_online(offline: &LocalSpace, a: &CsrMatrix, s: &CsrMatrix, m_on: usize) -> Result<LocalSpace> {
    if m_on == 0 || m_on > offline.dim() {
        return Err(Error::InvalidConfig(format!(
            "M_on = {m_on} outside [1, M_off = {}] on {:?}",
            offline.dim(),
            offline.subdomain
        )));
    }
    reduce(offline, a, s, m_on, Stage::Online)
}

/// One column of a global basis matrix, stored sparsely with sorted indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumn {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseColumn {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, v)| v * dense[i]).sum()
    }
}

/// Global basis matrix `R_0^T` as a list of fine-space columns.
///
/// Columns carry a group id (their subdomain); only columns of groups listed
/// as neighbors are coupled when forming Galerkin products.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub n_rows: usize,
    pub columns: Vec<SparseColumn>,
    pub groups: Vec<usize>,
    pub group_neighbors: Vec<Vec<usize>>,
}

impl BasisMatrix {
    /// Basis with every column in one group (all pairs coupled).
    pub fn from_columns(n_rows: usize, columns: Vec<SparseColumn>) -> Self {
        let groups = vec![0; columns.len()];
        Self {
            n_rows,
            columns,
            groups,
            group_neighbors: vec![vec![0]],
        }
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    /// `R_0^T c`: fine vector from coarse coefficients.
    pub fn prolong(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.ncols());
        let mut out = vec![0.0; self.n_rows];
        for (col, &c) in self.columns.iter().zip(coeffs) {
            for (&i, &v) in col.indices.iter().zip(&col.values) {
                out[i] += c * v;
            }
        }
        out
    }

    /// `R_0 v`: coarse vector of inner products with the columns.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_rows);
        self.columns.iter().map(|c| c.dot(v)).collect()
    }

    /// `R_0 A R_0^T`, exactly symmetric by construction.
    pub fn galerkin(&self, a: &CsrMatrix) -> Result<DMatrix<f64>> {
        if a.dim() != self.n_rows {
            return Err(Error::Dimension(format!(
                "fine operator of size {} for a basis with {} rows",
                a.dim(),
                self.n_rows
            )));
        }
        let nc = self.ncols();
        let n_groups = self.group_neighbors.len();
        let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
        for (c, &g) in self.groups.iter().enumerate() {
            by_group[g].push(c);
        }
        let mut out = DMatrix::zeros(nc, nc);
        let mut work = vec![0.0; self.n_rows];
        let mut touched = Vec::new();
        let mut mark = vec![false; self.n_rows];
        for j in 0..nc {
            let col = &self.columns[j];
            for (&k, &v) in col.indices.iter().zip(&col.values) {
                for (i, aik) in a.row(k) {
                    // A symmetric: (A psi)_i = sum_k A_ik psi_k
                    work[i] += aik * v;
                    if !mark[i] {
                        mark[i] = true;
                        touched.push(i);
                    }
                }
            }
            for &g in &self.group_neighbors[self.groups[j]] {
                for &i in &by_group[g] {
                    if i > j {
                        continue;
                    }
                    let d = self.columns[i].dot(&work);
                    out[(i, j)] = d;
                    out[(j, i)] = d;
                }
            }
            for &t in &touched {
                work[t] = 0.0;
                mark[t] = false;
            }
            touched.clear();
        }
        Ok(out)
    }
}

/// CG basis: columns `chi_i * psi_k` for every coarse node `i` and online
/// mode `k`, node-major. Values on the domain boundary are dropped so every
/// column vanishes there.
pub fn assemble_cg_basis(
    fine: &FineGrid,
    coarse: &CoarseGrid,
    pou: &PartitionOfUnity,
    online: &[LocalSpace],
) -> Result<BasisMatrix> {
    if online.len() != coarse.num_nodes() {
        return Err(Error::Dimension(format!(
            "{} online spaces for {} coarse nodes",
            online.len(),
            coarse.num_nodes()
        )));
    }
    let mut columns = Vec::new();
    let mut groups = Vec::new();
    for (i, space) in online.iter().enumerate() {
        let hood = coarse.neighborhood_patch(i);
        let chi = pou.on_neighborhood(fine, coarse, i);
        let nodes = hood.global_nodes(fine);
        for k in 0..space.dim() {
            let mut indices = Vec::with_capacity(nodes.len());
            let mut values = Vec::with_capacity(nodes.len());
            for (l, &g) in nodes.iter().enumerate() {
                let v = chi[l] * space.basis[(l, k)];
                if fine.is_boundary(g) || v == 0.0 {
                    continue;
                }
                indices.push(g);
                values.push(v);
            }
            columns.push(SparseColumn { indices, values });
            groups.push(i);
        }
    }
    let group_neighbors = (0..coarse.num_nodes()).map(|i| coarse.overlapping_nodes(i)).collect();
    Ok(BasisMatrix {
        n_rows: fine.num_nodes(),
        columns,
        groups,
        group_neighbors,
    })
}

/// Broken-space layout: every coarse element owns its own copy of the fine
/// nodes in its closure, so traces on coarse edges are duplicated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrokenLayout {
    pub num_elements: usize,
    pub nodes_per_element: usize,
}

impl BrokenLayout {
    pub fn new(coarse: &CoarseGrid) -> Self {
        Self {
            num_elements: coarse.num_elements(),
            nodes_per_element: (coarse.ratio() + 1) * (coarse.ratio() + 1),
        }
    }

    pub fn num_dofs(&self) -> usize {
        self.num_elements * self.nodes_per_element
    }

    pub fn dof(&self, k: usize, local: usize) -> usize {
        k * self.nodes_per_element + local
    }

    pub fn element_range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.nodes_per_element..(k + 1) * self.nodes_per_element
    }

    /// Copy a conforming fine nodal vector into the broken space.
    pub fn inject(&self, fine: &FineGrid, coarse: &CoarseGrid, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_dofs()];
        for k in 0..self.num_elements {
            let p = coarse.element_patch(k);
            for l in 0..p.num_nodes() {
                let (i, j) = p.node_ij(l);
                out[self.dof(k, l)] = u[fine.node_id(i, j)];
            }
        }
        out
    }

    /// Averaged conforming fine nodal vector from a broken one.
    pub fn average_to_conforming(&self, fine: &FineGrid, coarse: &CoarseGrid, b: &[f64]) -> Vec<f64> {
        let mut sum = vec![0.0; fine.num_nodes()];
        let mut cnt = vec![0usize; fine.num_nodes()];
        for k in 0..self.num_elements {
            let p = coarse.element_patch(k);
            for l in 0..p.num_nodes() {
                let (i, j) = p.node_ij(l);
                let g = fine.node_id(i, j);
                sum[g] += b[self.dof(k, l)];
                cnt[g] += 1;
            }
        }
        sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect()
    }
}

/// DG basis: the online modes of every coarse element, element-major, each
/// column supported on one element's broken nodes.
pub fn assemble_dg_basis(coarse: &CoarseGrid, online: &[LocalSpace]) -> Result<BasisMatrix> {
    if online.len() != coarse.num_elements() {
        return Err(Error::Dimension(format!(
            "{} online spaces for {} coarse elements",
            online.len(),
            coarse.num_elements()
        )));
    }
    let layout = BrokenLayout::new(coarse);
    let mut columns = Vec::new();
    let mut groups = Vec::new();
    for (k, space) in online.iter().enumerate() {
        if space.basis.nrows() != layout.nodes_per_element {
            return Err(Error::Dimension(format!("online space on element {k} has wrong row count")));
        }
        for c in 0..space.dim() {
            let mut indices = Vec::new();
            let mut values = Vec::new();
            for l in 0..layout.nodes_per_element {
                let v = space.basis[(l, c)];
                if v != 0.0 {
                    indices.push(layout.dof(k, l));
                    values.push(v);
                }
            }
            columns.push(SparseColumn { indices, values });
            groups.push(k);
        }
    }
    let group_neighbors = (0..coarse.num_elements()).map(|k| coarse.edge_adjacent_elements(k)).collect();
    Ok(BasisMatrix {
        n_rows: layout.num_dofs(),
        columns,
        groups,
        group_neighbors,
    })
}
