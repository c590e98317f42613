//! Batch commands: field generation, fine solves, single multiscale solves
//! and online-dimension sweeps.

use std::path::{Path, PathBuf};

use crate::coeff::{CoefficientModel, FieldFamily};
use crate::config::RunConfig;
use crate::dg::assemble_sipg;
use crate::grid::{build_grids, CoarseGrid, FineGrid};
use crate::picard::{
    estimate_solution_range, offline_pipeline, run_picard_fine, run_picard_ms, run_picard_offline, FineSolution, MsConfig, MsSolution,
    OfflineConfig, OfflineStage,
};
use crate::post::{
    emit_field_image, emit_nodal_image, emit_report, online_offline_errors, ErrorNorms, ImageScale, ReportRow, StudyReport,
};
use crate::spaces::{build_pou, kappa_tilde, sample_range, BrokenLayout, Formulation};
use crate::{Error, Result};

/// Source range used to bound the solution for snapshot sampling.
pub const SOURCE_RANGE: (f64, f64) = (0.1, 1.0);

/// A configured problem with lazily built, cached offline stage and fine
/// reference.
pub struct Study {
    pub config: RunConfig,
    pub fine: FineGrid,
    pub coarse: CoarseGrid,
    pub family: FieldFamily,
    pub model: CoefficientModel,
    stage: Option<OfflineStage>,
    reference: Option<FineSolution>,
    offline_runs: usize,
}

/// Everything a sweep produced.
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub report: StudyReport,
    /// One run per requested `M_on`, in order.
    pub runs: Vec<MsSolution>,
    /// Run with `M_on = M_off`.
    pub full: MsSolution,
    /// Run in the offline basis without online reduction.
    pub offline: MsSolution,
    pub reference: FineSolution,
}

impl Study {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (fine, coarse) = build_grids(config.nx, config.m)?;
        let family = config.field_family()?;
        let model = CoefficientModel::new(config.online_field()?);
        Ok(Self {
            config,
            fine,
            coarse,
            family,
            model,
            stage: None,
            reference: None,
            offline_runs: 0,
        })
    }

    /// Number of times the offline pipeline has run.
    pub fn offline_runs(&self) -> usize {
        self.offline_runs
    }

    fn ms_config(&self, m_on: usize) -> MsConfig {
        MsConfig {
            m_on,
            f: self.config.f,
            delta: self.config.delta,
            max_iters: self.config.max_iters,
            penalty: self.config.penalty,
        }
    }

    /// Snapshot and offline spaces, built on first use.
    pub fn offline(&mut self) -> Result<&OfflineStage> {
        if self.stage.is_none() {
            let cfg = &self.config;
            let (u_min, u_max) = estimate_solution_range(
                &self.fine,
                &self.model,
                SOURCE_RANGE.0,
                SOURCE_RANGE.1,
                cfg.delta,
                cfg.max_iters,
            )?;
            let range = sample_range(u_min, u_max, cfg.n_s, cfg.mu_p_samples.clone())?;
            log::info!("solution range [{u_min:.4e}, {u_max:.4e}], {} snapshot samples", range.pairs().len());
            let ocfg = OfflineConfig {
                formulation: cfg.formulation,
                range,
                rule: cfg.snapshot_rule(),
                m_off: cfg.offline_dim().as_option(),
            };
            let stage = offline_pipeline(&self.fine, &self.coarse, &self.family, &ocfg)
                .map_err(|e| e.context("offline stage"))?;
            self.offline_runs += 1;
            self.stage = Some(stage);
        }
        Ok(self.stage.as_ref().unwrap())
    }

    /// Fine reference solution at the configured source, computed once.
    pub fn reference(&mut self) -> Result<&FineSolution> {
        if self.reference.is_none() {
            let c = &self.config;
            let sol = run_picard_fine(&self.fine, &self.model, c.f, c.delta, c.max_iters)
                .map_err(|e| e.context("fine reference solve"))?;
            self.reference = Some(sol);
        }
        Ok(self.reference.as_ref().unwrap())
    }

    /// Multiscale solve with `m_on` modes per subdomain.
    pub fn solve(&mut self, m_on: usize) -> Result<MsSolution> {
        let cfg = self.ms_config(m_on);
        self.offline()?;
        let stage = self.stage.as_ref().unwrap();
        run_picard_ms(&self.fine, &self.coarse, stage, &self.model, &cfg)
            .map_err(|e| e.context(format!("{} solve with M_on = {m_on}", stage.formulation.name())))
    }

    /// Multiscale solve in the full offline space.
    pub fn solve_full(&mut self) -> Result<MsSolution> {
        let m = self.offline()?.max_offline_dim();
        self.solve(m)
    }

    /// Multiscale solve directly in the offline spaces.
    pub fn solve_offline(&mut self) -> Result<MsSolution> {
        let cfg = self.ms_config(1);
        self.offline()?;
        let stage = self.stage.as_ref().unwrap();
        run_picard_offline(&self.fine, &self.coarse, stage, &self.model, &cfg)
            .map_err(|e| e.context(format!("{} solve in the offline space", stage.formulation.name())))
    }

    /// Norms at the converged reference coefficient, and the reference
    /// solution in the formulation's space.
    pub fn error_norms(&mut self) -> Result<(ErrorNorms, Vec<f64>)> {
        let formulation = self.config.formulation;
        let penalty = self.config.penalty;
        self.reference()?;
        let (fine, coarse) = (&self.fine, &self.coarse);
        let reference = self.reference.as_ref().unwrap();
        match formulation {
            Formulation::Cg => {
                let pou = build_pou(fine, coarse, &reference.coef)?;
                let weight = kappa_tilde(&reference.coef, &pou)?;
                Ok((ErrorNorms::cg(fine, &weight, &reference.coef)?, reference.u.clone()))
            }
            Formulation::Dg => {
                let op = assemble_sipg(fine, coarse, &reference.coef, penalty)?;
                let injected = BrokenLayout::new(coarse).inject(fine, coarse, &reference.u);
                Ok((ErrorNorms::dg(&op), injected))
            }
        }
    }

    /// Sweep over the configured online dimensions plus the full offline
    /// space. The offline stage is built once and shared; online-offline
    /// errors are measured against the solve in the offline basis.
    pub fn run(&mut self, m_on: &[usize]) -> Result<StudyOutput> {
        let (norms, u_ref) = self.error_norms()?;
        let offline = self.solve_offline()?;
        let full = self.solve_full()?;
        let mut runs = Vec::with_capacity(m_on.len());
        let mut rows = Vec::with_capacity(m_on.len() + 1);
        let row = |sol: &MsSolution, lambda_star: Option<f64>| -> Result<ReportRow> {
            let (e1, e2) = norms.errors(&u_ref, &sol.fine)?;
            let (o1, o2) = online_offline_errors(&norms, &sol.fine, &offline.fine)?;
            Ok(ReportRow {
                dim: sol.n_c,
                lambda_star,
                err1: e1,
                err2: e2,
                oo_err1: o1,
                oo_err2: o2,
                iters: sol.iterations(),
            })
        };
        for &m in m_on {
            let sol = self.solve(m)?;
            rows.push(row(&sol, sol.max_lambda_star()).map_err(|e| e.context(format!("errors for M_on = {m}")))?);
            runs.push(sol);
        }
        if rows.last().map(|r| r.dim) != Some(full.n_c) {
            rows.push(row(&full, None).map_err(|e| e.context("errors for the full offline space"))?);
        }
        Ok(StudyOutput {
            report: StudyReport { rows },
            runs,
            full,
            offline,
            reference: self.reference.clone().unwrap(),
        })
    }

    /// Conforming nodal view of a multiscale solution (broken DG solutions
    /// are averaged across coarse edges).
    pub fn conforming(&self, sol: &MsSolution) -> Vec<f64> {
        match sol.formulation {
            Formulation::Cg => sol.fine.clone(),
            Formulation::Dg => BrokenLayout::new(&self.coarse).average_to_conforming(&self.fine, &self.coarse, &sol.fine),
        }
    }
}

fn out_dir(cfg: &RunConfig, override_dir: Option<&Path>) -> PathBuf {
    override_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone())
}

/// Write the online field as `field.txt` and `field.pgm` (log scale).
pub fn cmd_genfield(cfg: &RunConfig, output: Option<&Path>) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = out_dir(cfg, output);
    let field = cfg.online_field()?;
    let txt = dir.join("field.txt");
    let pgm = dir.join("field.pgm");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    field.write_text(&txt)?;
    let positive: Vec<f64> = field.values().iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
    emit_field_image(&positive, field.nx(), &pgm, ImageScale::Log)?;
    Ok(vec![txt, pgm])
}

/// Fine reference solve: `solution_fine.pgm` and `trace_fine.txt`.
pub fn cmd_solvefine(cfg: &RunConfig, output: Option<&Path>) -> Result<FineSolution> {
    let dir = out_dir(cfg, output);
    let mut study = Study::new(cfg.clone())?;
    let sol = study.reference()?.clone();
    emit_nodal_image(&study.fine, &sol.u, &dir.join("solution_fine.pgm"), ImageScale::Linear)?;
    sol.trace.write(&dir.join("trace_fine.txt"))?;
    Ok(sol)
}

/// One multiscale solve with the first configured `M_on`: one-row report,
/// trace and solution image.
pub fn cmd_solve(cfg: &RunConfig, output: Option<&Path>) -> Result<StudyReport> {
    let dir = out_dir(cfg, output);
    let mut study = Study::new(cfg.clone())?;
    let m = cfg.m_on[0];
    let out = study.run(&[m])?;
    let report = StudyReport {
        rows: out.report.rows[..1].to_vec(),
    };
    let sol = &out.runs[0];
    emit_nodal_image(&study.fine, &study.conforming(sol), &dir.join("solution_ms.pgm"), ImageScale::Linear)?;
    sol.trace.write(&dir.join("trace.txt"))?;
    emit_report(&report, &dir.join("report.csv"))?;
    Ok(report)
}

/// Full sweep: `report.csv`, one trace per row and the fine trace.
pub fn cmd_study(cfg: &RunConfig, output: Option<&Path>) -> Result<StudyOutput> {
    let dir = out_dir(cfg, output);
    let mut study = Study::new(cfg.clone())?;
    let out = study.run(&cfg.m_on)?;
    for (m, sol) in cfg.m_on.iter().zip(&out.runs) {
        sol.trace.write(&dir.join(format!("trace_mon{m}.txt")))?;
    }
    out.full.trace.write(&dir.join("trace_full.txt"))?;
    out.offline.trace.write(&dir.join("trace_offline.txt"))?;
    out.reference.trace.write(&dir.join("trace_fine.txt"))?;
    let last = out.runs.last().unwrap_or(&out.full);
    emit_nodal_image(&study.fine, &study.conforming(last), &dir.join("solution_ms.pgm"), ImageScale::Linear)?;
    emit_nodal_image(&study.fine, &out.reference.u, &dir.join("solution_fine.pgm"), ImageScale::Linear)?;
    emit_report(&out.report, &dir.join("report.csv"))?;
    Ok(out)
}
