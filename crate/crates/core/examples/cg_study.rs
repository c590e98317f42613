//! CG enrichment study on the channelized field: sweep the online dimension
//! and print the error table.
//!
//! ```text
//! cargo run --release --example cg_study [kappa_max]
//! ```

use std::time::Instant;

use gmsfem::config::RunConfig;
use gmsfem::study::Study;

fn main() -> gmsfem::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = RunConfig::default();
    if let Some(k) = std::env::args().nth(1) {
        cfg.kappa_max = k.parse().expect("kappa_max must be a number");
    }
    let start = Instant::now();
    let mut study = Study::new(cfg.clone())?;
    let stage = study.offline()?;
    let raw: usize = stage.snapshots.iter().map(|s| s.raw_count).max().unwrap_or(0);
    let kept: usize = stage.snapshots.iter().map(|s| s.dim()).min().unwrap_or(0);
    println!(
        "offline stage: {} neighborhoods, {raw} snapshots per neighborhood ({kept} or more independent), {:.1} s",
        stage.offline.len(),
        start.elapsed().as_secs_f64()
    );
    let out = study.run(&cfg.m_on)?;
    println!("fine reference: {} Picard iterations", out.reference.trace.len());
    println!("{:>6} {:>12} {:>8} {:>8} {:>8} {:>8} {:>5}", "N_c", "lambda*", "L2_k %", "H1_k %", "oo L2", "oo H1", "iter");
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
