//! Error norms, study reports and PGM images.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dg::SipgOperator;
use crate::fem::{assemble_stiffness, assemble_weighted_mass};
use crate::grid::FineGrid;
use crate::{Error, Result};

/// Gray-level mapping for field images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageScale {
    Linear,
    Log,
}

/// Write a square grid of values (`n x n`, row 0 at the bottom) as an 8-bit
/// binary PGM, top row first. The minimum maps to 0 and the maximum to 255;
/// a constant field is written as uniform 0.
pub fn emit_field_image(values: &[f64], n: usize, path: &Path, scale: ImageScale) -> Result<()> {
    if values.len() != n * n || n == 0 {
        return Err(Error::Dimension(format!("{} values for a {n}x{n} image", values.len())));
    }
    let map = |v: f64| match scale {
        ImageScale::Linear => v,
        ImageScale::Log => v.max(f64::MIN_POSITIVE).ln(),
    };
    let mapped: Vec<f64> = values.iter().map(|&v| map(v)).collect();
    if mapped.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in image data".into()));
    }
    let lo = mapped.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mapped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
    for row in (0..n).rev() {
        for col in 0..n {
            let v = mapped[row * n + col];
            let g = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() } else { 0.0 };
            bytes.push(g as u8);
        }
    }
    write_atomic(path, &bytes)
}

/// Write a nodal field (`(nx+1)^2` values) as an image.
pub fn emit_nodal_image(fine: &FineGrid, values: &[f64], path: &Path, scale: ImageScale) -> Result<()> {
    emit_field_image(values, fine.nx() + 1, path, scale)
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn percentage(num: f64, den: f64) -> Result<f64> {
    if !(den > 0.0) {
        return Err(Error::Domain("reference solution has zero norm".into()));
    }
    Ok(100.0 * num.max(0.0).sqrt() / den.sqrt())
}

fn difference(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    Ok(u.iter().zip(v).map(|(a, b)| a - b).collect())
}

/// `100 ||u - u_ms||_{L2(w)} / ||u||_{L2(w)}` with a per-cell weight.
pub fn l2k_error(fine: &FineGrid, u: &[f64], u_ms: &[f64], weight: &[f64]) -> Result<f64> {
    let m = assemble_weighted_mass(fine, weight, None)?;
    let e = difference(u, u_ms)?;
    percentage(m.quad_form(&e), m.quad_form(u))
}

/// `100 |u - u_ms|_{H1(c)} / |u|_{H1(c)}` with a per-cell coefficient.
pub fn h1k_error(fine: &FineGrid, u: &[f64], u_ms: &[f64], coef: &[f64]) -> Result<f64> {
    let a = assemble_stiffness(fine, coef, None)?;
    let e = difference(u, u_ms)?;
    percentage(a.quad_form(&e), a.quad_form(u))
}

/// Interior and boundary (jump) energy errors of a broken solution against
/// a broken reference.
pub fn dg_energy_errors(u_ref: &[f64], u_ms: &[f64], op: &SipgOperator) -> Result<(f64, f64)> {
    let e = difference(u_ref, u_ms)?;
    let vu = op.volume.quad_form(u_ref);
    let pu = op.penalty.quad_form(u_ref);
    let e_int = percentage(op.volume.quad_form(&e), vu)?;
    let e_bd = percentage(op.penalty.quad_form(&e), vu + pu)?;
    Ok((e_int, e_bd))
}

/// Precomputed quadratic forms for repeated error evaluation.
#[derive(Debug, Clone)]
pub enum ErrorNorms {
    Cg {
        mass: crate::fem::CsrMatrix,
        stiffness: crate::fem::CsrMatrix,
    },
    Dg {
        volume: crate::fem::CsrMatrix,
        penalty: crate::fem::CsrMatrix,
    },
}

impl ErrorNorms {
    pub fn cg(fine: &FineGrid, weight: &[f64], coef: &[f64]) -> Result<Self> {
        Ok(ErrorNorms::Cg {
            mass: assemble_weighted_mass(fine, weight, None)?,
            stiffness: assemble_stiffness(fine, coef, None)?,
        })
    }

    pub fn dg(op: &SipgOperator) -> Self {
        ErrorNorms::Dg {
            volume: op.volume.clone(),
            penalty: op.penalty.clone(),
        }
    }

    /// `(err1, err2)` in percent: `(L2, H1)` for CG, `(E_int, E_bd)` for DG.
    pub fn errors(&self, reference: &[f64], approx: &[f64]) -> Result<(f64, f64)> {
        let e = difference(reference, approx)?;
        match self {
            ErrorNorms::Cg { mass, stiffness } => Ok((
                percentage(mass.quad_form(&e), mass.quad_form(reference))?,
                percentage(stiffness.quad_form(&e), stiffness.quad_form(reference))?,
            )),
            ErrorNorms::Dg { volume, penalty } => {
                let vu = volume.quad_form(reference);
                Ok((
                    percentage(volume.quad_form(&e), vu)?,
                    percentage(penalty.quad_form(&e), vu + penalty.quad_form(reference))?,
                ))
            }
        }
    }
}

/// Errors of an online solution against the solution in the full offline
/// space (`M_on = M_off`).
pub fn online_offline_errors(norms: &ErrorNorms, u_online: &[f64], u_offline_full: &[f64]) -> Result<(f64, f64)> {
    norms.errors(u_offline_full, u_online)
}

pub const REPORT_HEADER: &str = "dim,lambda_star,err1,err2,oo_err1,oo_err2,iters";

/// One row of a study table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dim: usize,
    /// Absent for the full offline space.
    pub lambda_star: Option<f64>,
    pub err1: f64,
    pub err2: f64,
    pub oo_err1: f64,
    pub oo_err2: f64,
    pub iters: usize,
}

/// Rows ordered by coarse dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyReport {
    pub rows: Vec<ReportRow>,
}

impl StudyReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let ls = r.lambda_star.map(|l| format!("{l:.6e}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                r.dim, ls, r.err1, r.err2, r.oo_err1, r.oo_err2, r.iters
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == REPORT_HEADER => {}
            other => return Err(Error::Parse(format!("unexpected report header {other:?}"))),
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Parse(format!("report line {}: {} columns", n + 2, f.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("report line {}: {s:?}: {e}", n + 2)))
            };
            let int = |s: &str| -> Result<usize> {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("report line {}: {s:?}: {e}", n + 2)))
            };
            rows.push(ReportRow {
                dim: int(f[0])?,
                lambda_star: if f[1].trim().is_empty() { None } else { Some(num(f[1])?) },
                err1: num(f[2])?,
                err2: num(f[3])?,
                oo_err1: num(f[4])?,
                oo_err2: num(f[5])?,
                iters: int(f[6])?,
            });
        }
        Ok(Self { rows })
    }
}

/// Write the report as CSV (atomically).
pub fn emit_report(report: &StudyReport, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::InvalidConfig("report has no rows".into()));
    }
    write_atomic(path, report.to_csv().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dg::assemble_sipg;
    use crate::grid::build_grids;
    use proptest::prelude::*;

    fn grid_fn(fine: &FineGrid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..fine.num_nodes())
            .map(|n| {
                let [x, y] = fine.node_coords(n);
                f(x, y)
            })
            .collect()
    }

    #[test]
    fn pgm_layout_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let v = vec![1.0, 2.0, 3.0, 5.0];
        emit_field_image(&v, 2, &p, ImageScale::Linear).unwrap();
        let b = fs::read(&p).unwrap();
        let head = b"P5\n2 2\n255\n";
        assert_eq!(&b[..head.len()], head);
        // top row (index 1) first
        assert_eq!(&b[head.len()..], &[128, 255, 0, 64]);
        emit_field_image(&[7.0; 9], 3, &p, ImageScale::Log).unwrap();
        let b = fs::read(&p).unwrap();
        assert!(b[b.len() - 9..].iter().all(|&g| g == b[b.len() - 1]));
        let fine = FineGrid::new(4).unwrap();
        emit_nodal_image(&fine, &vec![0.0; 25], &p, ImageScale::Linear).unwrap();
        assert_eq!(fs::read(&p).unwrap().len(), b"P5\n5 5\n255\n".len() + 25);
        assert!(emit_field_image(&[1.0; 3], 2, &p, ImageScale::Linear).is_err());
    }

    #[test]
    fn norm_oracles() {
        // u = sin(pi x) sin(pi y): ||u||^2 = 1/4, |u|_1^2 = pi^2 / 2 on a fine grid.
        let fine = FineGrid::new(64).unwrap();
        let u = grid_fn(&fine, |x, y| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin());
        let zero = vec![0.0; u.len()];
        let ones = vec![1.0; fine.num_cells()];
        assert!((l2k_error(&fine, &u, &zero, &ones).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(h1k_error(&fine, &u, &u, &ones).unwrap(), 0.0);
        let m = assemble_weighted_mass(&fine, &ones, None).unwrap();
        assert!((m.quad_form(&u) - 0.25).abs() < 0.005 * 0.25);
        let a = assemble_stiffness(&fine, &ones, None).unwrap();
        let want = std::f64::consts::PI.powi(2) / 2.0;
        assert!((a.quad_form(&u) - want).abs() < 0.005 * want);
        let half: Vec<f64> = u.iter().map(|v| 0.5 * v).collect();
        assert!((h1k_error(&fine, &u, &half, &ones).unwrap() - 50.0).abs() < 1e-10);
        assert!(l2k_error(&fine, &zero, &u, &ones).is_err());
    }

    #[test]
    fn dg_errors_structure() {
        let (fine, coarse) = build_grids(12, 3).unwrap();
        let op = assemble_sipg(&fine, &coarse, &vec![2.0; 144], 4.0).unwrap();
        let u = grid_fn(&fine, |x, y| x * (1.0 - x) * y * (1.0 - y));
        let ub = op.layout.inject(&fine, &coarse, &u);
        assert_eq!(dg_energy_errors(&ub, &ub, &op).unwrap(), (0.0, 0.0));
        // continuous error vanishing on the boundary has no jump part
        let e = grid_fn(&fine, |x, y| (x * (1.0 - x) * y * (1.0 - y)).powi(2) * (1.0 + x));
        let eb = op.layout.inject(&fine, &coarse, &e);
        let approx: Vec<f64> = ub.iter().zip(&eb).map(|(a, b)| a - b).collect();
        let (ei, eb_) = dg_energy_errors(&ub, &approx, &op).unwrap();
        assert!(eb_ <= 1e-10 && ei > 0.0);
        // direct quadratic form oracle
        let want = 100.0 * (op.volume.quad_form(&eb) / op.volume.quad_form(&ub)).sqrt();
        assert!((ei - want).abs() <= 1e-12 * want);
        let norms = ErrorNorms::dg(&op);
        assert_eq!(norms.errors(&ub, &approx).unwrap(), (ei, eb_));
    }

    #[test]
    fn report_round_trip() {
        let r = StudyReport {
            rows: vec![
                ReportRow {
                    dim: 121,
                    lambda_star: Some(0.0123),
                    err1: 1.5,
                    err2: 12.25,
                    oo_err1: 1.0,
                    oo_err2: 3.0,
                    iters: 4,
                },
                ReportRow {
                    dim: 242,
                    lambda_star: None,
                    err1: 0.5,
                    err2: 6.0,
                    oo_err1: 0.0,
                    oo_err2: 0.0,
                    iters: 4,
                },
            ],
        };
        let csv = r.to_csv();
        assert!(csv.lines().all(|l| l.split(',').count() == 7));
        assert!(csv.lines().nth(2).unwrap().starts_with("242,,"));
        let back = StudyReport::parse(&csv).unwrap();
        assert_eq!(back.to_csv(), csv);
        assert_eq!(back.rows[1].lambda_star, None);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/report.csv");
        emit_report(&r, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), csv);
        assert!(emit_report(&StudyReport::default(), &p).is_err());
        assert!(StudyReport::parse("a,b\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn error_homogeneity(s in 0.1f64..10.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let fine = FineGrid::new(6).unwrap();
            let w: Vec<f64> = (0..36).map(|_| rng.gen_range(0.5..5.0)).collect();
            let u: Vec<f64> = (0..49).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e: Vec<f64> = (0..49).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v1: Vec<f64> = u.iter().zip(&e).map(|(a, b)| a - b).collect();
            let v2: Vec<f64> = u.iter().zip(&e).map(|(a, b)| a - s * b).collect();
            let norms = ErrorNorms::cg(&fine, &w, &w).unwrap();
            let (a1, b1) = norms.errors(&u, &v1).unwrap();
            let (a2, b2) = norms.errors(&u, &v2).unwrap();
            prop_assert!((a2 - s * a1).abs() <= 1e-9 * a2.max(1.0));
            prop_assert!((b2 - s * b1).abs() <= 1e-9 * b2.max(1.0));
        }
    }
}
