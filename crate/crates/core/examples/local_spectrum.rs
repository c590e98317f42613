//! Spectrum of the local eigenproblem on one coarse neighborhood for several
//! frozen values of the solution, with the adaptive gap index.
//!
//! ```text
//! cargo run --release --example local_spectrum [node]
//! ```

use gmsfem::coeff::{gen_channelized, CoefficientModel};
use gmsfem::config::DEFAULT_KAPPA_MAX;
use gmsfem::grid::{build_grids, Subdomain};
use gmsfem::spaces::{build_pou, kappa_tilde, local_pencil, solve_local_pencil, spectral_gap_count};

fn main() -> gmsfem::Result<()> {
    let (fine, coarse) = build_grids(100, 10)?;
    let node: usize = std::env::args().nth(1).map(|s| s.parse().expect("node")).unwrap_or(coarse.num_nodes() / 2);
    let model = CoefficientModel::new(gen_channelized(100, DEFAULT_KAPPA_MAX)?);
    println!("neighborhood of coarse node {node} at {:?}", coarse.node_coords(node));
    for u in [0.0, 0.005, 0.01, 0.02] {
        let coef = model.eval_uniform(u)?;
        let pou = build_pou(&fine, &coarse, &coef)?;
        let weight = kappa_tilde(&coef, &pou)?;
        let pencil = local_pencil(&fine, &coarse, Subdomain::Neighborhood(node), &coef, &weight)?;
        let (values, _) = solve_local_pencil(&pencil)?;
        let shown: Vec<String> = values.iter().take(8).map(|v| format!("{v:.4e}")).collect();
        println!("u = {u:<6} gap index {}  lambda: {}", spectral_gap_count(&values, 6), shown.join(" "));
    }
    Ok(())
}
