//! Picard iteration for the fine reference problem and for the CG/DG
//! multiscale solvers, plus the one-time offline stage.
//!
//! Each iteration freezes the coefficient at the previous iterate. The fine
//! operator uses the pointwise iterate (per fine cell, the mean of the four
//! nodal values), while the local spectral problems use its averages over
//! each subdomain.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cg::{assemble_coarse_cg, coarse_residual, solve_coarse, CoarseOperator};
use crate::coeff::{BasePermField, CoefficientModel, FieldFamily};
use crate::dg::{assemble_broken_load, assemble_coarse_dg, assemble_sipg, solve_coarse_dg};
use crate::fem::{
    apply_homogeneous_dirichlet, assemble_load, assemble_stiffness, assemble_weighted_mass, relative_residual,
    solve_spd,
};
use crate::grid::{CoarseGrid, FineGrid, Patch, Subdomain};
use crate::post::write_atomic;
use crate::spaces::{
    assemble_cg_basis, assemble_dg_basis, build_offline, build_online, build_pou, build_snapshots, kappa_tilde,
    local_pencil, BrokenLayout, Formulation, LocalSpace, PartitionOfUnity, SnapshotRule, SolutionRangeGrid,
};
use crate::{Error, Result};

/// Default iteration cap.
pub const DEFAULT_MAX_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub residual: f64,
    pub n_c: usize,
    pub ubar_min: f64,
    pub ubar_mean: f64,
    pub ubar_max: f64,
    /// `max |sum_i chi_i - 1|` over fine nodes (multiscale runs only).
    pub pou_defect: Option<f64>,
    pub wall_seconds: f64,
}

/// Per-iteration log of a Picard run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    pub fn last_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.residual)
    }

    /// One line per iteration: `index residual N_c`. Wall time is left out
    /// so that logs are reproducible.
    pub fn to_text(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{} {:.6e} {}\n", r.index, r.residual, r.n_c))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    fn push(&mut self, residual: f64, n_c: usize, ubar: &[f64], pou_defect: Option<f64>, start: Instant) {
        let (lo, hi, sum) = ubar
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), &u| (lo.min(u), hi.max(u), s + u));
        self.records.push(IterationRecord {
            index: self.records.len() + 1,
            residual,
            n_c,
            ubar_min: lo,
            ubar_mean: sum / ubar.len().max(1) as f64,
            ubar_max: hi,
            pou_defect,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
}

/// Per fine cell, the mean of the four nodal values (the midpoint value of
/// the Q1 interpolant).
pub fn cell_means(fine: &FineGrid, u: &[f64]) -> Vec<f64> {
    (0..fine.num_cells())
        .map(|c| fine.cell_nodes(c).iter().map(|&n| u[n]).sum::<f64>() / 4.0)
        .collect()
}

/// Cell means of a broken vector, each cell read from its own element.
pub fn broken_cell_means(fine: &FineGrid, coarse: &CoarseGrid, ub: &[f64]) -> Vec<f64> {
    let layout = BrokenLayout::new(coarse);
    let mut out = vec![0.0; fine.num_cells()];
    for k in 0..coarse.num_elements() {
        let p = coarse.element_patch(k);
        for cell in p.cells(fine) {
            out[cell] = p.local_cell_nodes(fine, cell).iter().map(|&l| ub[layout.dof(k, l)]).sum::<f64>() / 4.0;
        }
    }
    out
}

/// `int_tau u / |tau|` by midpoint quadrature of the Q1 interpolant.
pub fn region_average(fine: &FineGrid, u: &[f64], patch: &Patch) -> f64 {
    let means = patch
        .cells(fine)
        .map(|c| fine.cell_nodes(c).iter().map(|&n| u[n]).sum::<f64>() / 4.0);
    means.sum::<f64>() / patch.num_cells() as f64
}

fn patch_mean(fine: &FineGrid, cell_values: &[f64], patch: &Patch) -> f64 {
    patch.cells(fine).map(|c| cell_values[c]).sum::<f64>() / patch.num_cells() as f64
}

/// Converged fine reference solution.
#[derive(Debug, Clone)]
pub struct FineSolution {
    pub u: Vec<f64>,
    /// Coefficient at the converged iterate, per fine cell.
    pub coef: Vec<f64>,
    pub trace: IterationTrace,
}

/// Fine conforming Picard iteration from `u^0 = 0`. Stops when
/// `||F - A(u^{n+1}) u^{n+1}|| <= delta ||F||`.
pub fn run_picard_fine(
    fine: &FineGrid,
    model: &CoefficientModel,
    f: f64,
    delta: f64,
    max_iters: usize,
) -> Result<FineSolution> {
    check_tolerances(delta, max_iters)?;
    let start = Instant::now();
    let load = assemble_load(fine, f, None);
    let mut u = vec![0.0; fine.num_nodes()];
    let mut coef = model.eval(&cell_means(fine, &u))?;
    let mut trace = IterationTrace::default();
    for _ in 0..max_iters {
        let a = assemble_stiffness(fine, &coef, None)?;
        let (ad, fd) = apply_homogeneous_dirichlet(fine, &a, &load);
        u = solve_spd(&ad, &fd)?;
        coef = model.eval(&cell_means(fine, &u))?;
        let a_new = assemble_stiffness(fine, &coef, None)?;
        let (ad_new, _) = apply_homogeneous_dirichlet(fine, &a_new, &load);
        let res = relative_residual(&ad_new, &u, &fd);
        trace.push(res, fine.num_nodes(), &[], None, start);
        log::debug!("fine Picard iteration {}: residual {res:.3e}", trace.len());
        if res <= delta {
            return Ok(FineSolution { u, coef, trace });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        residual: trace.last_residual().unwrap_or(f64::NAN),
        trace: Box::new(trace),
    })
}

fn check_tolerances(delta: f64, max_iters: usize) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!("delta = {delta} must be positive")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be positive".into()));
    }
    Ok(())
}

/// `(u_min, u_max)` from fine solves at the two ends of the source range.
/// The minimum is zero by the boundary condition and the maximum principle,
/// so only the `f_high` solve is performed.
pub fn estimate_solution_range(
    fine: &FineGrid,
    model: &CoefficientModel,
    f_low: f64,
    f_high: f64,
    delta: f64,
    max_iters: usize,
) -> Result<(f64, f64)> {
    if !(f_low > 0.0 && f_high > f_low) {
        return Err(Error::InvalidConfig(format!(
            "source range [{f_low}, {f_high}] must satisfy 0 < f_low < f_high"
        )));
    }
    let sol = run_picard_fine(fine, model, f_high, delta, max_iters)
        .map_err(|e| e.context(format!("fine solve for the solution range at f = {f_high}")))?;
    let u_max = sol.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((0.0, u_max))
}

/// Inputs of the offline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineConfig {
    pub formulation: Formulation,
    pub range: SolutionRangeGrid,
    pub rule: SnapshotRule,
    /// Offline dimension per subdomain; `None` keeps the whole snapshot space.
    pub m_off: Option<usize>,
}

/// Snapshot and offline spaces of every subdomain, built once and reused by
/// every online solve.
#[derive(Debug, Clone)]
pub struct OfflineStage {
    pub formulation: Formulation,
    pub range: SolutionRangeGrid,
    pub snapshots: Vec<LocalSpace>,
    pub offline: Vec<LocalSpace>,
}

impl OfflineStage {
    pub fn max_offline_dim(&self) -> usize {
        self.offline.iter().map(|s| s.dim()).max().unwrap_or(0)
    }

    pub fn total_offline_dim(&self) -> usize {
        self.offline.iter().map(|s| s.dim()).sum()
    }
}

/// Coefficient `exp(kappa u)` with `u` constant over the domain, together
/// with the spectral weight from the matching partition of unity.
fn uniform_sample(
    fine: &FineGrid,
    coarse: &CoarseGrid,
    field: &BasePermField,
    u: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let model = CoefficientModel::new(field.clone());
    let c = model.eval_uniform(u)?;
    let pou = build_pou(fine, coarse, &c)?;
    let kt = kappa_tilde(&c, &pou)?;
    Ok((c, kt))
}

/// Snapshot spaces at every sample of the range grid, then offline spaces at
/// the averaged sample.
pub fn offline_pipeline(
    fine: &FineGrid,
    coarse: &CoarseGrid,
    family: &FieldFamily,
    cfg: &OfflineConfig,
) -> Result<OfflineStage> {
    let pairs = cfg.range.pairs();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|&(u, mu)| {
            let field = family.at(mu)?;
            uniform_sample(fine, coarse, &field, u).map_err(|e| e.context(format!("snapshot sample u = {u}")))
        })
        .collect::<Result<_>>()?;
    let field_bar = family.at(cfg.range.mean_mu_p())?;
    let (c_bar, kt_bar) = uniform_sample(fine, coarse, &field_bar, cfg.range.mean_u())?;
    let ones = vec![1.0; fine.num_cells()];

    let subdomains = cfg.formulation.subdomains(coarse);
    let mut snapshots = Vec::with_capacity(subdomains.len());
    let mut offline = Vec::with_capacity(subdomains.len());
    for &tau in &subdomains {
        let pencils = samples
            .iter()
            .map(|(c, kt)| local_pencil(fine, coarse, tau, c, kt))
            .collect::<Result<Vec<_>>>()?;
        let metric = assemble_weighted_mass(fine, &ones, Some(&coarse.patch(tau)))?;
        let snap = build_snapshots(tau, &pencils, cfg.rule, &metric)?;
        let bar = local_pencil(fine, coarse, tau, &c_bar, &kt_bar)?;
        let m_off = cfg.m_off.unwrap_or(snap.dim()).min(snap.dim());
        let off = build_offline(&snap, &bar.stiffness, &bar.mass, m_off)?;
        log::debug!("{tau:?}: {} snapshots ({} raw), {} offline", snap.dim(), snap.raw_count, off.dim());
        snapshots.push(snap);
        offline.push(off);
    }
    Ok(OfflineStage {
        formulation: cfg.formulation,
        range: cfg.range.clone(),
        snapshots,
        offline,
    })
}

/// Settings of one multiscale Picard run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsConfig {
    /// Online dimension per subdomain (clamped to the offline dimension).
    pub m_on: usize,
    pub f: f64,
    pub delta: f64,
    pub max_iters: usize,
    /// SIPG penalty (DG only).
    pub penalty: f64,
}

/// Result of a multiscale Picard run.
#[derive(Debug, Clone)]
pub struct MsSolution {
    pub formulation: Formulation,
    pub coarse: Vec<f64>,
    /// Conforming nodal vector (CG) or broken vector (DG).
    pub fine: Vec<f64>,
    /// `1 / lambda_{M_on+1}` per subdomain; `None` when nothing is discarded.
    pub lambda_star: Vec<Option<f64>>,
    pub n_c: usize,
    pub trace: IterationTrace,
}

impl MsSolution {
    /// Largest per-subdomain value, `None` when every subdomain keeps its
    /// whole offline space.
    pub fn max_lambda_star(&self) -> Option<f64> {
        self.lambda_star.iter().flatten().cloned().reduce(f64::max)
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Online spaces and the partition of unity for the given per-cell iterate.
pub fn online_spaces(
    fine: &FineGrid,
    coarse: &CoarseGrid,
    stage: &OfflineStage,
    model: &CoefficientModel,
    cell_u: &[f64],
    m_on: Option<usize>,
) -> Result<(PartitionOfUnity, Vec<LocalSpace>, Vec<f64>)> {
    // partition of unity from per-element averages
    let ubar_k: Vec<f64> = (0..coarse.num_elements())
        .map(|k| patch_mean(fine, cell_u, &coarse.element_patch(k)))
        .collect();
    let u_elem: Vec<f64> = (0..fine.num_cells())
        .map(|c| {
            let (i, j) = fine.cell_ij(c);
            ubar_k[coarse.element_of_cell(i, j)]
        })
        .collect();
    let c_pou = model.eval(&u_elem)?;
    let pou = build_pou(fine, coarse, &c_pou)?;

    let subdomains = stage.formulation.subdomains(coarse);
    let mut spaces = Vec::with_capacity(subdomains.len());
    let mut ubars = Vec::with_capacity(subdomains.len());
    for (tau, off) in subdomains.iter().zip(&stage.offline) {
        let ubar = patch_mean(fine, cell_u, &coarse.patch(*tau));
        ubars.push(ubar);
        let Some(m_on) = m_on else {
            spaces.push(off.clone());
            continue;
        };
        let c = model.eval_uniform(ubar)?;
        let kt = kappa_tilde(&c, &pou)?;
        let p = local_pencil(fine, coarse, *tau, &c, &kt)?;
        let m = m_on.min(off.dim());
        spaces.push(build_online(off, &p.stiffness, &p.mass, m).map_err(|e| e.context(format!("online space on {tau:?}")))?);
    }
    Ok((pou, spaces, ubars))
}

fn coarse_system(
    fine: &FineGrid,
    coarse: &CoarseGrid,
    formulation: Formulation,
    pou: &PartitionOfUnity,
    spaces: &[LocalSpace],
    coef: &[f64],
    cfg: &MsConfig,
) -> Result<CoarseOperator> {
    match formulation {
        Formulation::Cg => {
            let r0 = assemble_cg_basis(fine, coarse, pou, spaces)?;
            let a = assemble_stiffness(fine, coef, None)?;
            assemble_coarse_cg(r0, &a, &assemble_load(fine, cfg.f, None))
        }
        Formulation::Dg => {
            let r0 = assemble_dg_basis(coarse, spaces)?;
            let sipg = assemble_sipg(fine, coarse, coef, cfg.penalty)?;
            assemble_coarse_dg(r0, &sipg, &assemble_broken_load(fine, coarse, cfg.f))
        }
    }
}

/// Fine operator at a given per-cell coefficient, in the formulation's space.
fn fine_operator(fine: &FineGrid, coarse: &CoarseGrid, formulation: Formulation, coef: &[f64], penalty: f64) -> Result<crate::fem::CsrMatrix> {
    match formulation {
        Formulation::Cg => assemble_stiffness(fine, coef, None),
        Formulation::Dg => Ok(assemble_sipg(fine, coarse, coef, penalty)?.total),
    }
}

fn iterate_cells(fine: &FineGrid, coarse: &CoarseGrid, formulation: Formulation, u: &[f64]) -> Vec<f64> {
    match formulation {
        Formulation::Cg => cell_means(fine, u),
        Formulation::Dg => broken_cell_means(fine, coarse, u),
    }
}

/// Multiscale Picard iteration from `u^0 = 0`: every iteration refreshes the
/// partition of unity and the online spaces at the current averages, solves
/// the coarse system with the fine operator at the current iterate, and
/// stops when `||F_0 - A_0(u^{n+1}) U^{n+1}|| <= delta ||F_0||`.
pub fn run_picard_ms(
    fine: &FineGrid,
    coarse: &CoarseGrid,
    stage: &OfflineStage,
    model: &CoefficientModel,
    cfg: &MsConfig,
) -> Result<MsSolution> {
    if cfg.m_on == 0 {
        return Err(Error::InvalidConfig("M_on must be at least 1".into()));
    }
    picard_ms(fine, coarse, stage, model, cfg, Some(cfg.m_on))
}

/// Multiscale Picard iteration in the offline spaces themselves, without
/// the online reduction (`cfg.m_on` is ignored).
pub fn run_picard_offline(
    fine: &FineGrid,
    coarse: &CoarseGrid,
    stage: &OfflineStage,
    model: &CoefficientModel,
    cfg: &MsConfig,
) -> Result<MsSolution> {
    picard_ms(fine, coarse, stage, model, cfg, None)
}

fn picard_ms(
    fine: &FineGrid,
    coarse: &CoarseGrid,
    stage: &OfflineStage,
    model: &CoefficientModel,
    cfg: &MsConfig,
    m_on: Option<usize>,
) -> Result<MsSolution> {
    check_tolerances(cfg.delta, cfg.max_iters)?;
    let formulation = stage.formulation;
    let start = Instant::now();
    let n_fine = match formulation {
        Formulation::Cg => fine.num_nodes(),
        Formulation::Dg => BrokenLayout::new(coarse).num_dofs(),
    };
    let mut u = vec![0.0; n_fine];
    let mut trace = IterationTrace::default();
    for _ in 0..cfg.max_iters {
        let cell_u = iterate_cells(fine, coarse, formulation, &u);
        let (pou, spaces, ubars) = online_spaces(fine, coarse, stage, model, &cell_u, m_on)?;
        let coef = model.eval(&cell_u)?;
        let op = coarse_system(fine, coarse, formulation, &pou, &spaces, &coef, cfg)?;
        let (u0, u_new) = match formulation {
            Formulation::Cg => solve_coarse(&op)?,
            Formulation::Dg => solve_coarse_dg(&op)?,
        };
        let coef_new = model.eval(&iterate_cells(fine, coarse, formulation, &u_new))?;
        let a_new = fine_operator(fine, coarse, formulation, &coef_new, cfg.penalty)?;
        let res = coarse_residual(&op.basis.galerkin(&a_new)?, &op.f0, &u0);
        trace.push(res, op.dim(), &ubars, Some(pou.partition_defect()), start);
        log::debug!("{} Picard iteration {}: residual {res:.3e}, N_c = {}", formulation.name(), trace.len(), op.dim());
        u = u_new;
        if res <= cfg.delta {
            return Ok(MsSolution {
                formulation,
                coarse: u0,
                fine: u,
                lambda_star: spaces.iter().map(|s| m_on.and(s.lambda_star())).collect(),
                n_c: op.dim(),
                trace,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iters,
        residual: trace.last_residual().unwrap_or(f64::NAN),
        trace: Box::new(trace),
    })
}

/// Subdomain list of a stage.
pub fn stage_subdomains(stage: &OfflineStage) -> Vec<Subdomain> {
    stage.offline.iter().map(|s| s.subdomain).collect()
}
