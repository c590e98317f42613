//! Synthetic high-contrast base fields and the coefficient `exp(kappa(x) u)`.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::post::{emit_field_image, ImageScale};
use crate::{Error, Result};

/// Largest exponent passed to `exp`; well below the f64 overflow point.
pub const EXPONENT_CAP: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub generator: String,
    pub seed: Option<u64>,
    pub kappa_max: f64,
}

/// Piecewise-constant base field `kappa(x)`, one value per fine cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePermField {
    nx: usize,
    values: Vec<f64>,
    pub meta: FieldMeta,
}

impl BasePermField {
    pub fn from_values(nx: usize, values: Vec<f64>, meta: FieldMeta) -> Result<Self> {
        if values.len() != nx * nx {
            return Err(Error::Dimension(format!(
                "field has {} values, expected {}",
                values.len(),
                nx * nx
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!("field value {v} is not finite and nonnegative")));
        }
        Ok(Self { nx, values, meta })
    }

    /// Uniform field. `constant(nx, 0.0)` gives the linear problem.
    pub fn constant(nx: usize, value: f64) -> Result<Self> {
        Self::from_values(
            nx,
            vec![value; nx * nx],
            FieldMeta {
                generator: "constant".into(),
                seed: None,
                kappa_max: value,
            },
        )
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Plain-text matrix: one line per grid row of cells, bottom row first.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.values.len() * 8);
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::new();
        let mut nx = None;
        for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            match nx {
                None => nx = Some(row.len()),
                Some(n) if n != row.len() => {
                    return Err(Error::Parse(format!(
                        "{}:{}: ragged row of length {}",
                        path.display(),
                        lineno + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            values.extend(row);
        }
        let nx = nx.ok_or_else(|| Error::Parse(format!("{}: empty field file", path.display())))?;
        let kappa_max = values.iter().cloned().fold(0.0, f64::max);
        Self::from_values(
            nx,
            values,
            FieldMeta {
                generator: "file".into(),
                seed: None,
                kappa_max,
            },
        )
    }

    pub fn write_pgm(&self, path: &Path, scale: ImageScale) -> Result<()> {
        emit_field_image(&self.values, self.nx, path, scale)
    }
}

fn fill_rect(values: &mut [f64], nx: usize, x: (f64, f64), y: (f64, f64), width: usize, value: f64) {
    // x and y are unit-square extents; a degenerate extent gets `width` cells.
    let cells = |a: f64, b: f64| {
        let lo = (a * nx as f64).round() as usize;
        let hi = ((b * nx as f64).round() as usize).max(lo + width).min(nx);
        (lo.min(nx), hi)
    };
    let (x0, x1) = cells(x.0, x.1);
    let (y0, y1) = cells(y.0, y.1);
    for j in y0..y1 {
        for i in x0..x1 {
            values[j * nx + i] = value;
        }
    }
}

/// Channel geometry in unit coordinates: `(x extent, y extent, group)`.
/// Group 0 channels form the first component of the split field and group 1
/// the second.
const CHANNELS: &[((f64, f64), (f64, f64), u8)] = &[
    ((0.05, 0.85), (0.20, 0.20), 0),
    ((0.15, 0.95), (0.47, 0.47), 1),
    ((0.10, 0.62), (0.76, 0.76), 0),
    ((0.60, 0.60), (0.58, 0.78), 0),
    ((0.30, 0.30), (0.84, 0.95), 1),
    ((0.72, 0.92), (0.88, 0.88), 1),
    ((0.40, 0.40), (0.04, 0.16), 1),
];

fn channel_width(nx: usize) -> usize {
    (nx / 50).max(2)
}

fn channel_field(nx: usize, kappa_max: f64, groups: &[u8]) -> Vec<f64> {
    let mut values = vec![1.0; nx * nx];
    let w = channel_width(nx);
    for &(x, y, g) in CHANNELS {
        if groups.contains(&g) {
            fill_rect(&mut values, nx, x, y, w, kappa_max);
        }
    }
    values
}

/// Background 1 with several straight and L-shaped channels at `kappa_max`.
pub fn gen_channelized(nx: usize, kappa_max: f64) -> Result<BasePermField> {
    check_kappa_max(kappa_max)?;
    BasePermField::from_values(
        nx,
        channel_field(nx, kappa_max, &[0, 1]),
        FieldMeta {
            generator: "channelized".into(),
            seed: None,
            kappa_max,
        },
    )
}

/// The channelized field split into two disjoint channel families; the
/// pointwise maximum of the two is [`gen_channelized`].
pub fn gen_channelized_split(nx: usize, kappa_max: f64) -> Result<(BasePermField, BasePermField)> {
    check_kappa_max(kappa_max)?;
    let meta = |name: &str| FieldMeta {
        generator: name.into(),
        seed: None,
        kappa_max,
    };
    Ok((
        BasePermField::from_values(nx, channel_field(nx, kappa_max, &[0]), meta("channelized-1"))?,
        BasePermField::from_values(nx, channel_field(nx, kappa_max, &[1]), meta("channelized-2"))?,
    ))
}

/// Background 1 with randomly placed, non-overlapping small square blocks
/// valued uniformly in `[kappa_max / 2, kappa_max]`.
pub fn gen_random_inclusions(
    nx: usize,
    seed: u64,
    kappa_max: f64,
    fill_fraction: f64,
) -> Result<BasePermField> {
    check_kappa_max(kappa_max)?;
    if !(fill_fraction > 0.0 && fill_fraction < 0.3) {
        return Err(Error::InvalidConfig(format!(
            "fill_fraction {fill_fraction} outside (0, 0.3)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = (nx / 50).max(1).min(nx);
    let target = (fill_fraction * (nx * nx) as f64).round() as usize;
    let mut values = vec![1.0; nx * nx];
    let mut taken = vec![false; nx * nx];
    let mut filled = 0;
    let mut attempts = 0;
    while filled < target && attempts < 100 * nx * nx {
        attempts += 1;
        let i0 = rng.gen_range(0..=nx - b);
        let j0 = rng.gen_range(0..=nx - b);
        let value = rng.gen_range(kappa_max / 2.0..=kappa_max);
        let cells: Vec<usize> = (j0..j0 + b)
            .flat_map(|j| (i0..i0 + b).map(move |i| j * nx + i))
            .collect();
        if cells.iter().any(|&c| taken[c]) {
            continue;
        }
        for c in cells {
            taken[c] = true;
            values[c] = value;
            filled += 1;
        }
    }
    BasePermField::from_values(
        nx,
        values,
        FieldMeta {
            generator: "random_inclusions".into(),
            seed: Some(seed),
            kappa_max,
        },
    )
}

fn check_kappa_max(kappa_max: f64) -> Result<()> {
    if !(kappa_max.is_finite() && kappa_max >= 1.0) {
        return Err(Error::InvalidConfig(format!("kappa_max {kappa_max} must be >= 1")));
    }
    Ok(())
}

/// Element-wise `mu_p * k1 + (1 - mu_p) * k2`.
pub fn blend(k1: &BasePermField, k2: &BasePermField, mu_p: f64) -> Result<BasePermField> {
    if k1.nx != k2.nx {
        return Err(Error::Dimension(format!(
            "cannot blend fields on {}^2 and {}^2 grids",
            k1.nx, k2.nx
        )));
    }
    if !(0.0..=1.0).contains(&mu_p) {
        return Err(Error::Domain(format!("mu_p {mu_p} outside [0, 1]")));
    }
    let values = k1
        .values
        .iter()
        .zip(&k2.values)
        .map(|(a, b)| mu_p * a + (1.0 - mu_p) * b)
        .collect();
    BasePermField::from_values(
        k1.nx,
        values,
        FieldMeta {
            generator: format!("blend({},{})", k1.meta.generator, k2.meta.generator),
            seed: k1.meta.seed,
            kappa_max: k1.meta.kappa_max.max(k2.meta.kappa_max),
        },
    )
}

/// `kappa_max` such that `kappa_max * u_max = ln(contrast)`.
pub fn kappa_max_for_contrast(contrast: f64, u_max: f64) -> f64 {
    contrast.ln() / u_max
}

/// Either a fixed base field or a two-component family blended by the
/// physical parameter `mu_p`.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldFamily {
    Fixed(BasePermField),
    Blended(BasePermField, BasePermField),
}

impl FieldFamily {
    pub fn nx(&self) -> usize {
        match self {
            FieldFamily::Fixed(k) | FieldFamily::Blended(k, _) => k.nx,
        }
    }

    /// Field at the physical parameter; `mu_p` is ignored for fixed fields.
    pub fn at(&self, mu_p: Option<f64>) -> Result<BasePermField> {
        match (self, mu_p) {
            (FieldFamily::Fixed(k), _) => Ok(k.clone()),
            (FieldFamily::Blended(k1, k2), Some(mu)) => blend(k1, k2, mu),
            (FieldFamily::Blended(..), None) => Err(Error::InvalidConfig(
                "blended field family needs a mu_p value".into(),
            )),
        }
    }
}

/// `kappa(x; u) = exp(min(kappa(x) u, cap))`, evaluated per fine cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientModel {
    pub field: BasePermField,
    pub cap: f64,
}

impl CoefficientModel {
    pub fn new(field: BasePermField) -> Self {
        Self {
            field,
            cap: EXPONENT_CAP,
        }
    }

    pub fn eval(&self, u_elem: &[f64]) -> Result<Vec<f64>> {
        eval_coefficient(self, u_elem)
    }

    /// Coefficient for a value of `u` that is constant over the whole grid.
    pub fn eval_uniform(&self, u: f64) -> Result<Vec<f64>> {
        eval_coefficient(self, &vec![u; self.field.values.len()])
    }
}

pub fn eval_coefficient(model: &CoefficientModel, u_elem: &[f64]) -> Result<Vec<f64>> {
    if u_elem.len() != model.field.values.len() {
        return Err(Error::Dimension(format!(
            "{} cell values for a field of {} cells",
            u_elem.len(),
            model.field.values.len()
        )));
    }
    let mut capped = 0usize;
    let out = model
        .field
        .values
        .iter()
        .zip(u_elem)
        .map(|(&k, &u)| {
            if !u.is_finite() {
                return Err(Error::Domain(format!("non-finite solution value {u}")));
            }
            let mut e = k * u;
            if e > model.cap {
                capped += 1;
                e = model.cap;
            }
            Ok(e.exp())
        })
        .collect::<Result<Vec<_>>>()?;
    if capped > 0 {
        log::warn!("coefficient exponent capped at {} in {capped} cells; field looks mis-scaled", model.cap);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tiny_fill_is_constant() {
        let f = gen_random_inclusions(50, 3, 9.0, 1e-6).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_inclusions_deterministic_and_filled() {
        let a = gen_random_inclusions(100, 42, 9.0, 0.1).unwrap();
        let b = gen_random_inclusions(100, 42, 9.0, 0.1).unwrap();
        assert_eq!(a, b);
        let high = a.values().iter().filter(|&&v| (4.5..=9.0).contains(&v)).count();
        let frac = high as f64 / 10_000.0;
        assert!((frac - 0.1).abs() < 0.005, "fraction {frac}");
        assert!(a.values().iter().all(|&v| v == 1.0 || (4.5..=9.0).contains(&v)));
        let c = gen_random_inclusions(100, 43, 9.0, 0.1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn channelized_properties() {
        let one = gen_channelized(100, 1.0).unwrap();
        assert!(one.values().iter().all(|&v| v == 1.0));
        let f = gen_channelized(100, 50.0).unwrap();
        assert_eq!(f.max(), 50.0);
        assert_eq!(f.min(), 1.0);
        // Count coarse elements (m = 10) touched by the first channel's row band.
        let (_, coarse) = crate::build_grids(100, 10).unwrap();
        let row = 21;
        let touched: std::collections::BTreeSet<_> = (0..100)
            .filter(|&i| f.values()[row * 100 + i] == 50.0)
            .map(|i| coarse.element_of_cell(i, row))
            .collect();
        assert!(touched.len() >= 3, "channel crosses {} coarse elements", touched.len());
        // channel width at least two cells
        assert_eq!(f.values()[20 * 100 + 30], 50.0);
        assert_eq!(f.values()[21 * 100 + 30], 50.0);
    }

    #[test]
    fn split_recovers_full_field() {
        let full = gen_channelized(60, 20.0).unwrap();
        let (k1, k2) = gen_channelized_split(60, 20.0).unwrap();
        for i in 0..full.values().len() {
            assert_eq!(full.values()[i], k1.values()[i].max(k2.values()[i]));
        }
    }

    #[test]
    fn blend_endpoints() {
        let (k1, k2) = gen_channelized_split(40, 10.0).unwrap();
        assert_eq!(blend(&k1, &k2, 1.0).unwrap().values(), k1.values());
        assert_eq!(blend(&k1, &k2, 0.0).unwrap().values(), k2.values());
        let b = blend(&k1, &k2, 0.2).unwrap();
        for i in 0..b.values().len() {
            let want = 0.2 * k1.values()[i] + 0.8 * k2.values()[i];
            assert!((b.values()[i] - want).abs() <= 1e-15 * want);
        }
        let other = BasePermField::constant(20, 1.0).unwrap();
        assert!(matches!(blend(&k1, &other, 0.5), Err(Error::Dimension(_))));
    }

    #[test]
    fn coefficient_basics() {
        let m = CoefficientModel::new(BasePermField::constant(4, 1.0).unwrap());
        assert!(m.eval(&[0.0; 16]).unwrap().iter().all(|&c| c == 1.0));
        let c = m.eval(&[2f64.ln(); 16]).unwrap();
        assert!(c.iter().all(|&c| (c - 2.0).abs() < 1e-15));
        let mut bad = [0.0; 16];
        bad[3] = f64::NAN;
        assert!(matches!(m.eval(&bad), Err(Error::Domain(_))));
        let big = CoefficientModel::new(BasePermField::constant(2, 1e4).unwrap());
        let c = big.eval(&[1.0; 4]).unwrap();
        assert!(c.iter().all(|c| c.is_finite() && *c > 0.0));
    }

    #[test]
    fn text_roundtrip() {
        let f = gen_random_inclusions(20, 5, 7.5, 0.2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("field.txt");
        f.write_text(&p).unwrap();
        let g = BasePermField::read_text(&p).unwrap();
        assert_eq!(f.values(), g.values());
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 20);
        assert!(text.lines().all(|l| l.split_whitespace().count() == 20));
    }

    proptest! {
        #[test]
        fn coefficient_matches_direct_exp(k in 0.0f64..50.0, u in -5.0f64..5.0) {
            let m = CoefficientModel::new(BasePermField::constant(1, k).unwrap());
            let c = m.eval(&[u]).unwrap()[0];
            let direct = (k * u).exp();
            prop_assert!((c - direct).abs() <= 1e-15 * direct);
        }

        #[test]
        fn blend_is_affine_identity(mu in 0.0f64..=1.0, seed in 0u64..50) {
            let k = gen_random_inclusions(10, seed, 5.0, 0.1).unwrap();
            let b = blend(&k, &k, mu).unwrap();
            for (x, y) in b.values().iter().zip(k.values()) {
                prop_assert!((x - y).abs() <= 1e-14 * y);
            }
        }
    }
}
