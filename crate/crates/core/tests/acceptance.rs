//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::process::ExitCode;
use std::time::Instant;

use gmsfem::config::RunConfig;
use gmsfem::dg::assemble_sipg;
use gmsfem::eig::{max_residual, orthonormality_defect, sym_gen_eig};
use gmsfem::fem::{apply_homogeneous_dirichlet, assemble_stiffness, assemble_weighted_mass, solve_spd};
use gmsfem::grid::{build_grids, FineGrid};
use gmsfem::picard::IterationTrace;
use gmsfem::post::ReportRow;
use gmsfem::spaces::{build_pou, BrokenLayout, SnapshotRule};
use gmsfem::study::{cmd_study, Study, StudyOutput};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn config(json: &str) -> RunConfig {
    RunConfig::from_json(json).expect("valid config")
}

fn cg_config() -> RunConfig {
    config(r#"{"formulation": "cg"}"#)
}

fn dg_config() -> RunConfig {
    config(r#"{"formulation": "dg"}"#)
}

fn run_study(cfg: RunConfig) -> Result<StudyOutput, String> {
    let m_on = cfg.m_on.clone();
    Study::new(cfg).and_then(|mut s| s.run(&m_on)).map_err(|e| e.to_string())
}

/// Rows of the online-dimension sweep, without the appended full row.
fn sweep_rows(out: &StudyOutput) -> &[ReportRow] {
    &out.report.rows[..out.runs.len()]
}

fn all_traces(out: &StudyOutput) -> Vec<&IterationTrace> {
    let mut t: Vec<&IterationTrace> = out.runs.iter().map(|r| &r.trace).collect();
    t.push(&out.full.trace);
    t.push(&out.offline.trace);
    t
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn fmt_seq(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

fn err1(rows: &[ReportRow]) -> Vec<f64> {
    rows.iter().map(|r| r.err1).collect()
}

fn err2(rows: &[ReportRow]) -> Vec<f64> {
    rows.iter().map(|r| r.err2).collect()
}

fn decline(v: &[f64]) -> f64 {
    v[0] / v[v.len() - 1]
}

/// λ* non-increasing, and no pair with smaller λ* has an error larger by
/// more than 5%.
fn lambda_clause(rows: &[ReportRow]) -> (bool, String) {
    let lam: Vec<f64> = rows.iter().map(|r| r.lambda_star.unwrap_or(f64::NAN)).collect();
    let err = err2(rows);
    let mut ok = lam.iter().all(|l| l.is_finite()) && non_increasing(&lam);
    let mut worst: f64 = 0.0;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if lam[j] <= lam[i] {
                worst = worst.max((err[j] - err[i]) / err[i]);
            }
        }
    }
    ok &= worst <= 0.05;
    let lam_s = lam.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ");
    (ok, format!("lambda* [{lam_s}], worst inversion {:.2}%", 100.0 * worst.max(0.0)))
}

fn c1_pou(cg: &StudyOutput, dg: &StudyOutput) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for out in [cg, dg] {
        for t in all_traces(out) {
            for r in &t.records {
                worst = worst.max(r.pou_defect.ok_or("missing partition defect")?);
                count += 1;
            }
        }
    }
    let cfg = cg_config();
    let (fine, coarse) = build_grids(cfg.nx, cfg.m).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let pou = build_pou(&fine, &coarse, &cg.reference.coef).map_err(|e| e.to_string())?;
    let at_reference = pou.partition_defect();
    let secs = start.elapsed().as_secs_f64();
    worst = worst.max(at_reference);
    Ok((
        worst <= 1e-10 && secs < 1.0,
        format!("max defect {worst:.2e} over {count} iterations and the reference coefficient, {secs:.2} s"),
    ))
}

fn c2_eigensolver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let (mut worst_res, mut worst_orth) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.gen_range(1..=100);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = b.transpose() * &b + DMatrix::identity(n, n) * 1e-3;
        let s = c.transpose() * &c + DMatrix::identity(n, n) * (0.05 * n as f64);
        let p = sym_gen_eig(&a, &s).map_err(|e| e.to_string())?;
        let norm_a = faer::Mat::from_fn(n, n, |i, j| a[(i, j)])
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| format!("{e:?}"))?
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        worst_res = worst_res.max(max_residual(&a, &s, &p) / norm_a);
        worst_orth = worst_orth.max(orthonormality_defect(&s, &p.vectors));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst_res <= 1e-8 && worst_orth <= 1e-8 && secs < 5.0,
        format!("relative residual {worst_res:.2e}, orthonormality {worst_orth:.2e}, {secs:.2} s"),
    ))
}

/// L2 error of the Q1 solution of `-lap u = 2 pi^2 u`, `u = sin(pi x) sin(pi y)`.
fn manufactured_error(nx: usize) -> Result<f64, String> {
    use std::f64::consts::PI;
    let fine = FineGrid::new(nx).map_err(|e| e.to_string())?;
    let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let ones = vec![1.0; fine.num_cells()];
    let a = assemble_stiffness(&fine, &ones, None).map_err(|e| e.to_string())?;
    let m = assemble_weighted_mass(&fine, &ones, None).map_err(|e| e.to_string())?;
    let rhs: Vec<f64> = (0..fine.num_nodes())
        .map(|n| {
            let [x, y] = fine.node_coords(n);
            2.0 * PI * PI * exact(x, y)
        })
        .collect();
    let (ad, fd) = apply_homogeneous_dirichlet(&fine, &a, &m.matvec(&rhs));
    let u = solve_spd(&ad, &fd).map_err(|e| e.to_string())?;
    let h = fine.h();
    let g = [0.5 - 0.5 * (0.6f64).sqrt(), 0.5, 0.5 + 0.5 * (0.6f64).sqrt()];
    let w = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
    let mut sum = 0.0;
    for cell in 0..fine.num_cells() {
        let (ci, cj) = fine.cell_ij(cell);
        let nodes = fine.cell_nodes(cell);
        let v = nodes.map(|n| u[n]);
        for (a, wa) in g.iter().zip(w) {
            for (b, wb) in g.iter().zip(w) {
                let uh = v[0] * (1.0 - a) * (1.0 - b) + v[1] * a * (1.0 - b) + v[2] * a * b + v[3] * (1.0 - a) * b;
                let e = uh - exact((ci as f64 + a) * h, (cj as f64 + b) * h);
                sum += wa * wb * e * e * h * h;
            }
        }
    }
    Ok(sum.sqrt())
}

fn c3_fine_order() -> Outcome {
    let start = Instant::now();
    let e32 = manufactured_error(32)?;
    let e64 = manufactured_error(64)?;
    let secs = start.elapsed().as_secs_f64();
    let ratio = e32 / e64;
    Ok((
        (3.6..=4.4).contains(&ratio) && secs < 5.0,
        format!("L2 errors {e32:.3e} / {e64:.3e}, ratio {ratio:.3}, {secs:.2} s"),
    ))
}

fn c4_cg_decline(cg: &StudyOutput, secs: f64) -> Outcome {
    let rows = sweep_rows(cg);
    let (l2, h1) = (err1(rows), err2(rows));
    let ok = non_increasing(&h1) && decline(&h1) >= 2.0 && decline(&l2) >= 3.0 && secs < 180.0;
    Ok((
        ok,
        format!(
            "H1 [{}] factor {:.2}, L2 [{}] factor {:.2}, {secs:.1} s",
            fmt_seq(&h1),
            decline(&h1),
            fmt_seq(&l2),
            decline(&l2)
        ),
    ))
}

fn c5_lambda(cg: &StudyOutput) -> Outcome {
    Ok(lambda_clause(sweep_rows(cg)))
}

fn c6_zero_row(cg: &StudyOutput, dg: &StudyOutput) -> Outcome {
    let mut worst: f64 = 0.0;
    for out in [cg, dg] {
        let last = out.report.rows.last().ok_or("empty report")?;
        if last.dim != out.full.n_c {
            return Err(format!("last row has dimension {}, full space {}", last.dim, out.full.n_c));
        }
        worst = worst.max(last.oo_err1 / 100.0).max(last.oo_err2 / 100.0);
    }
    Ok((worst <= 1e-10, format!("largest online-offline error {worst:.2e} (CG and DG)")))
}

fn iteration_counts(out: &StudyOutput) -> Vec<usize> {
    let mut v: Vec<usize> = all_traces(out).iter().map(|t| t.len()).collect();
    v.push(out.reference.trace.len());
    v
}

fn c7_picard(cg: &StudyOutput, dg: &StudyOutput) -> Outcome {
    let cg_it = iteration_counts(cg);
    let dg_it = iteration_counts(dg);
    let default_ok = cg_it.iter().chain(&dg_it).all(|&n| n <= 8);
    let mut linear = Vec::new();
    for form in ["cg", "dg"] {
        let cfg = config(&format!(
            r#"{{"formulation": "{form}", "generator": "constant", "kappa_max": 0.0, "nx": 40, "m": 4, "m_on": [1, 2, 3]}}"#
        ));
        linear.extend(iteration_counts(&run_study(cfg)?));
    }
    let linear_ok = linear.iter().all(|&n| n == 1);
    Ok((
        default_ok && linear_ok,
        format!("default CG {cg_it:?}, DG {dg_it:?}; linear {linear:?}"),
    ))
}

fn c8_dg_decline(dg: &StudyOutput, dg_extra: &StudyOutput) -> Outcome {
    let rows = sweep_rows(dg);
    let (ei, eb) = (err1(rows), err2(rows));
    let base_final = dg.report.rows.last().ok_or("empty report")?.err1;
    let extra_final = dg_extra.report.rows.last().ok_or("empty report")?.err1;
    let ok = non_increasing(&ei)
        && non_increasing(&eb)
        && decline(&ei) >= 1.3
        && decline(&eb) >= 1.3
        && extra_final <= base_final;
    Ok((
        ok,
        format!(
            "E_int [{}] factor {:.2}, E_bd [{}] factor {:.2}; final E_int {extra_final:.4} (enlarged) vs {base_final:.4}",
            fmt_seq(&ei),
            decline(&ei),
            fmt_seq(&eb),
            decline(&eb)
        ),
    ))
}

fn c9_sipg(coef: &[f64]) -> Outcome {
    let cfg = dg_config();
    let (fine, coarse) = build_grids(cfg.nx, cfg.m).map_err(|e| e.to_string())?;
    let op = assemble_sipg(&fine, &coarse, coef, cfg.penalty).map_err(|e| e.to_string())?;
    let layout = BrokenLayout::new(&coarse);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut random_continuous = || -> Vec<f64> {
        let u: Vec<f64> = (0..fine.num_nodes())
            .map(|n| if fine.is_boundary(n) { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        layout.inject(&fine, &coarse, &u)
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (u, v) = (random_continuous(), random_continuous());
        for part in [&op.consistency, &op.penalty] {
            worst = worst.max(dot(&part.matvec(&u), &v).abs()).max(part.quad_form(&u).abs());
        }
    }
    let asym = op.total.asymmetry() / op.total.max_abs();
    Ok((
        worst <= 1e-12 && asym <= 1e-12,
        format!("edge terms on continuous functions {worst:.2e}, relative asymmetry {asym:.2e}"),
    ))
}

fn c10_penalty(dg: &StudyOutput) -> Outcome {
    let base = &dg.report.rows;
    let mut notes = Vec::new();
    let mut ok = true;
    for delta in [2.0, 8.0] {
        let mut cfg = dg_config();
        cfg.penalty = delta;
        match run_study(cfg) {
            Err(e) => {
                ok = false;
                notes.push(format!("delta {delta}: {e}"));
            }
            Ok(out) => {
                let rows = &out.report.rows;
                let iters_match =
                    rows.len() == base.len() && rows.iter().zip(base).all(|(a, b)| a.iters == b.iters);
                let spread = rows
                    .iter()
                    .zip(base)
                    .flat_map(|(a, b)| [(a.err1 - b.err1).abs() / b.err1, (a.err2 - b.err2).abs() / b.err2])
                    .fold(0.0f64, f64::max);
                ok &= iters_match && spread <= 0.10;
                let its: Vec<usize> = rows.iter().map(|r| r.iters).collect();
                notes.push(format!("delta {delta}: iterations {its:?}, largest relative change {:.1}%", 100.0 * spread));
            }
        }
    }
    let its: Vec<usize> = base.iter().map(|r| r.iters).collect();
    notes.insert(0, format!("delta 4: iterations {its:?}"));
    Ok((ok, notes.join("; ")))
}

fn c11_parametric() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for form in ["cg", "dg"] {
        let cfg = config(&format!(
            r#"{{"formulation": "{form}", "n_s": 4, "mu_p_samples": [0.0, 0.5, 1.0], "mu_p_online": 0.2}}"#
        ));
        let out = run_study(cfg)?;
        let rows = sweep_rows(&out);
        let (e1, e2) = (err1(rows), err2(rows));
        match form {
            "cg" => {
                let (lam_ok, lam_note) = lambda_clause(rows);
                ok &= non_increasing(&e2) && lam_ok;
                notes.push(format!("CG H1 [{}], {lam_note}", fmt_seq(&e2)));
            }
            _ => {
                ok &= non_increasing(&e1) && non_increasing(&e2);
                notes.push(format!("DG E_int [{}], E_bd [{}]", fmt_seq(&e1), fmt_seq(&e2)));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    notes.push(format!("{secs:.1} s"));
    Ok((ok, notes.join("; ")))
}

fn c12_determinism() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let cfg = dg_config();
    for d in &dirs {
        cmd_study(&cfg, Some(d.path())).map_err(|e| e.to_string())?;
    }
    let mut names: Vec<String> = std::fs::read_dir(dirs[0].path())
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    names.sort();
    let mut differing = Vec::new();
    for n in &names {
        let a = std::fs::read(dirs[0].path().join(n)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(n)).map_err(|e| e.to_string())?;
        if a != b {
            differing.push(n.clone());
        }
    }
    Ok((
        differing.is_empty() && names.iter().any(|n| n == "report.csv"),
        format!("{} files compared, differing {differing:?}", names.len()),
    ))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, outcome: Outcome| {
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            failures += 1;
        }
        println!("{} [{id:>2}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    };

    let start = Instant::now();
    let cg = run_study(cg_config());
    let cg_secs = start.elapsed().as_secs_f64();
    let dg = run_study(dg_config());
    let dg_extra = {
        let mut cfg = dg_config();
        if let SnapshotRule::Adaptive { extra, l_cap } = cfg.snapshot_rule() {
            cfg.snapshot = Some(SnapshotRule::Adaptive {
                extra: extra + 3,
                l_cap: l_cap + 3,
            });
        }
        run_study(cfg)
    };

    let both = |f: &dyn Fn(&StudyOutput, &StudyOutput) -> Outcome| match (&cg, &dg) {
        (Ok(c), Ok(d)) => f(c, d),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    let with_cg = |f: &dyn Fn(&StudyOutput) -> Outcome| cg.as_ref().map_err(Clone::clone).and_then(f);
    let with_dg = |f: &dyn Fn(&StudyOutput) -> Outcome| dg.as_ref().map_err(Clone::clone).and_then(f);

    report(1, "partition of unity", both(&c1_pou));
    report(2, "generalized eigensolver", c2_eigensolver());
    report(3, "fine solver order", c3_fine_order());
    report(4, "CG enrichment decline", with_cg(&|c| c4_cg_decline(c, cg_secs)));
    report(5, "lambda* and error", with_cg(&c5_lambda));
    report(6, "online-offline zero row", both(&c6_zero_row));
    report(7, "Picard convergence", both(&c7_picard));
    report(
        8,
        "DG enrichment decline",
        with_dg(&|d| dg_extra.as_ref().map_err(Clone::clone).and_then(|x| c8_dg_decline(d, x))),
    );
    report(9, "SIPG structure", with_cg(&|c| c9_sipg(&c.reference.coef)));
    report(10, "penalty robustness", with_dg(&c10_penalty));
    report(11, "parameter-dependent field", c11_parametric());
    report(12, "determinism", c12_determinism());

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
