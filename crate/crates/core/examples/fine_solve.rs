//! Fine-scale Picard reference solve on the channelized field, reporting the
//! iteration history and the coefficient contrast at the solution.
//!
//! ```text
//! cargo run --release --example fine_solve [kappa_max] [f]
//! ```

use gmsfem::coeff::{gen_channelized, CoefficientModel};
use gmsfem::config::DEFAULT_KAPPA_MAX;
use gmsfem::grid::FineGrid;
use gmsfem::picard::run_picard_fine;

fn main() -> gmsfem::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let kappa_max: f64 = args.next().map(|s| s.parse().expect("kappa_max")).unwrap_or(DEFAULT_KAPPA_MAX);
    let f: f64 = args.next().map(|s| s.parse().expect("f")).unwrap_or(0.1);
    let fine = FineGrid::new(100)?;
    let model = CoefficientModel::new(gen_channelized(100, kappa_max)?);
    let sol = run_picard_fine(&fine, &model, f, 1e-3, 25)?;
    print!("{}", sol.trace.to_text());
    let u_max = sol.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = sol
        .coef
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    println!("kappa_max {kappa_max}, f {f}: u_max {u_max:.4e}, coefficient in [{lo:.3e}, {hi:.3e}], contrast {:.3e}", hi / lo);
    Ok(())
}
