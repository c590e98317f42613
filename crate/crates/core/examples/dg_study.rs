//! DG enrichment study on the channelized field with the adaptive snapshot
//! rule, optionally enlarged by `extra` eigenvectors per sample.
//!
//! ```text
//! cargo run --release --example dg_study [extra] [penalty]
//! ```

use std::time::Instant;

use gmsfem::config::RunConfig;
use gmsfem::spaces::{Formulation, SnapshotRule};
use gmsfem::study::Study;

fn main() -> gmsfem::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let extra: usize = args.next().map(|s| s.parse().expect("extra")).unwrap_or(0);
    let mut cfg = RunConfig {
        formulation: Formulation::Dg,
        ..RunConfig::default()
    };
    if let Some(p) = args.next() {
        cfg.penalty = p.parse().expect("penalty");
    }
    cfg.snapshot = Some(SnapshotRule::Adaptive { extra, l_cap: 6 + extra });
    let start = Instant::now();
    let mut study = Study::new(cfg.clone())?;
    let stage = study.offline()?;
    let dims: Vec<usize> = stage.offline.iter().map(|s| s.dim()).collect();
    println!(
        "offline stage: {} elements, offline dimension {}..{} (total {}), {:.1} s",
        dims.len(),
        dims.iter().min().unwrap_or(&0),
        dims.iter().max().unwrap_or(&0),
        stage.total_offline_dim(),
        start.elapsed().as_secs_f64()
    );
    let out = study.run(&cfg.m_on)?;
    println!("fine reference: {} Picard iterations", out.reference.trace.len());
    println!("{:>6} {:>12} {:>8} {:>8} {:>8} {:>8} {:>5}", "N_c", "lambda*", "E_int %", "E_bd %", "oo int", "oo bd", "iter");
    for r in &out.report.rows {
        let ls = r.lambda_star.map(|l| format!("{l:.4e}")).unwrap_or_else(|| "---".into());
        println!(
            "{:>6} {:>12} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>5}",
            r.dim, ls, r.err1, r.err2, r.oo_err1, r.oo_err2, r.iters
        );
    }
    println!("total {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
