//! Generate the synthetic permeability fields and write them as text and
//! log-scaled PGM images.
//!
//! ```text
//! cargo run --release --example fields [output_dir]
//! ```

use std::path::PathBuf;

use gmsfem::coeff::{blend, gen_channelized, gen_channelized_split, gen_random_inclusions, BasePermField};
use gmsfem::config::DEFAULT_KAPPA_MAX;
use gmsfem::post::ImageScale;

fn main() -> gmsfem::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/fields".into()));
    std::fs::create_dir_all(&dir).expect("output directory");
    let nx = 100;
    let (k1, k2) = gen_channelized_split(nx, DEFAULT_KAPPA_MAX)?;
    let fields: Vec<(&str, BasePermField)> = vec![
        ("channelized", gen_channelized(nx, DEFAULT_KAPPA_MAX)?),
        ("channelized_1", k1.clone()),
        ("channelized_2", k2.clone()),
        ("blend_0.2", blend(&k1, &k2, 0.2)?),
        ("inclusions", gen_random_inclusions(nx, 7, DEFAULT_KAPPA_MAX, 0.1)?),
    ];
    for (name, field) in &fields {
        field.write_text(&dir.join(format!("{name}.txt")))?;
        field.write_pgm(&dir.join(format!("{name}.pgm")), ImageScale::Log)?;
        let high = field.values().iter().filter(|&&v| v > 1.0).count();
        println!(
            "{name:<14} kappa in [{:.3}, {:.3}], {:.1}% of cells above background",
            field.min(),
            field.max(),
            100.0 * high as f64 / field.values().len() as f64
        );
    }
    println!("written to {}", dir.display());
    Ok(())
}
