//! Parameter-dependent field `mu_p k1 + (1 - mu_p) k2`: snapshots over a
//! grid of (u, mu_p) pairs, online stage at a fixed `mu_p`.
//!
//! ```text
//! cargo run --release --example parametric_study [mu_p_online]
//! ```

use gmsfem::config::RunConfig;
use gmsfem::spaces::Formulation;
use gmsfem::study::Study;

fn main() -> gmsfem::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mu_online: f64 = std::env::args().nth(1).map(|s| s.parse().expect("mu_p_online")).unwrap_or(0.2);
    for formulation in [Formulation::Cg, Formulation::Dg] {
        let cfg = RunConfig {
            formulation,
            n_s: 4,
            mu_p_samples: Some(vec![0.0, 0.5, 1.0]),
            mu_p_online: mu_online,
            ..RunConfig::default()
        };
        let mut study = Study::new(cfg.clone())?;
        let out = study.run(&cfg.m_on)?;
        let (e1, e2) = match formulation {
            Formulation::Cg => ("L2_k %", "H1_k %"),
            Formulation::Dg => ("E_int %", "E_bd %"),
        };
        println!("{} at mu_p = {mu_online}", formulation.name());
        println!("{:>6} {:>12} {:>8} {:>8} {:>5}", "N_c", "lambda*", e1, e2, "iter");
        for r in &out.report.rows {
            let ls = r.lambda_star.map(|l| format!("{l:.4e}")).unwrap_or_else(|| "---".into());
            println!("{:>6} {:>12} {:>8.3} {:>8.3} {:>5}", r.dim, ls, r.err1, r.err2, r.iters);
        }
    }
    Ok(())
}
