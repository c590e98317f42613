//! DG study at several interior penalty values: iteration counts and
//! energy errors per online dimension.
//!
//! ```text
//! cargo run --release --example penalty_sweep [delta ...]
//! ```

use gmsfem::config::RunConfig;
use gmsfem::spaces::Formulation;
use gmsfem::study::Study;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut deltas: Vec<f64> = std::env::args().skip(1).map(|s| s.parse().expect("penalty")).collect();
    if deltas.is_empty() {
        deltas = vec![2.0, 4.0, 8.0, 16.0];
    }
    for delta in deltas {
        let cfg = RunConfig {
            formulation: Formulation::Dg,
            penalty: delta,
            ..RunConfig::default()
        };
        let result = Study::new(cfg.clone()).and_then(|mut s| s.run(&cfg.m_on));
        match result {
            Ok(out) => {
                let cols: Vec<String> = out
                    .report
                    .rows
                    .iter()
                    .map(|r| format!("{}:{:.2}/{:.2}/{}", r.dim, r.err1, r.err2, r.iters))
                    .collect();
                println!("delta {delta:<5} N_c:E_int/E_bd/iter  {}", cols.join("  "));
            }
            Err(e) => println!("delta {delta:<5} failed: {e}"),
        }
    }
}
