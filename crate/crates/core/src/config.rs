//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coeff::{
    blend, gen_channelized, gen_channelized_split, gen_random_inclusions, BasePermField, FieldFamily,
};
use crate::dg::DEFAULT_PENALTY;
use crate::picard::DEFAULT_MAX_ITERS;
use crate::spaces::{Formulation, SnapshotRule};
use crate::{Error, Result};

/// Default channel permeability: at the top of the sampled solution range
/// (`f = 1`) the coefficient spans about four orders of magnitude.
pub const DEFAULT_KAPPA_MAX: f64 = 240.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Channelized,
    RandomInclusions,
    /// `kappa(x) = kappa_max` everywhere (0 gives the linear problem).
    Constant,
    /// Read from `field_file`.
    File,
}

/// Offline dimension: the whole snapshot space or a fixed count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfflineDim {
    All,
    Count(usize),
}

impl Serialize for OfflineDim {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            OfflineDim::All => s.serialize_str("all"),
            OfflineDim::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for OfflineDim {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(OfflineDim::Count(n)),
            Raw::Word(w) if w == "all" => Ok(OfflineDim::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected \"all\" or a count, got {w:?}"))),
        }
    }
}

impl OfflineDim {
    pub fn as_option(&self) -> Option<usize> {
        match self {
            OfflineDim::All => None,
            OfflineDim::Count(n) => Some(*n),
        }
    }
}

fn default_nx() -> usize {
    100
}
fn default_m() -> usize {
    10
}
fn default_generator() -> Generator {
    Generator::Channelized
}
fn default_seed() -> u64 {
    1
}
fn default_kappa_max() -> f64 {
    DEFAULT_KAPPA_MAX
}
fn default_fill() -> f64 {
    0.1
}
fn default_f() -> f64 {
    0.1
}
fn default_delta() -> f64 {
    1e-3
}
fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}
fn default_n_s() -> usize {
    9
}
fn default_m_on() -> Vec<usize> {
    vec![1, 2, 3, 4, 5]
}
fn default_penalty() -> f64 {
    DEFAULT_PENALTY
}
fn default_mu_online() -> f64 {
    0.2
}
fn default_formulation() -> Formulation {
    Formulation::Cg
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// All settings of a run. Absent keys take their defaults; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_generator")]
    pub generator: Generator,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_kappa_max")]
    pub kappa_max: f64,
    #[serde(default = "default_fill")]
    pub fill_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_file: Option<PathBuf>,
    #[serde(default = "default_f")]
    pub f: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_n_s")]
    pub n_s: usize,
    /// Defaults to a fixed three modes per sample for CG and the adaptive
    /// gap rule for DG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<SnapshotRule>,
    /// Defaults to 10 for CG and the whole snapshot space for DG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_off: Option<OfflineDim>,
    #[serde(default = "default_m_on")]
    pub m_on: Vec<usize>,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    /// Physical parameter samples for the blended two-field family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_p_samples: Option<Vec<f64>>,
    #[serde(default = "default_mu_online")]
    pub mu_p_online: f64,
    #[serde(default = "default_formulation")]
    pub formulation: Formulation,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn snapshot_rule(&self) -> SnapshotRule {
        self.snapshot.unwrap_or(match self.formulation {
            Formulation::Cg => SnapshotRule::Fixed { l_max: 3 },
            Formulation::Dg => SnapshotRule::Adaptive { extra: 0, l_cap: 6 },
        })
    }

    pub fn offline_dim(&self) -> OfflineDim {
        self.m_off.unwrap_or(match self.formulation {
            Formulation::Cg => OfflineDim::Count(10),
            Formulation::Dg => OfflineDim::All,
        })
    }

    /// Check every constraint, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 {
            return Err(invalid("nx", "must be positive"));
        }
        if self.m == 0 || self.nx % self.m != 0 || self.nx < 2 * self.m {
            return Err(invalid("m", format!("must divide nx = {} with at least 2 cells per element", self.nx)));
        }
        match self.generator {
            Generator::Constant => {
                if !(self.kappa_max >= 0.0 && self.kappa_max.is_finite()) {
                    return Err(invalid("kappa_max", "must be finite and non-negative"));
                }
            }
            _ => {
                if !(self.kappa_max > 0.0 && self.kappa_max.is_finite()) {
                    return Err(invalid("kappa_max", "must be positive"));
                }
            }
        }
        if !(self.fill_fraction > 0.0 && self.fill_fraction < 0.3) {
            return Err(invalid("fill_fraction", "must lie in (0, 0.3)"));
        }
        if self.generator == Generator::File && self.field_file.is_none() {
            return Err(invalid("field_file", "required when generator is \"file\""));
        }
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(invalid("f", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", "must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be positive"));
        }
        if self.n_s < 2 {
            return Err(invalid("n_s", "must be at least 2"));
        }
        match self.snapshot_rule() {
            SnapshotRule::Fixed { l_max } if l_max == 0 => return Err(invalid("snapshot.l_max", "must be positive")),
            SnapshotRule::Adaptive { l_cap, .. } if l_cap == 0 => {
                return Err(invalid("snapshot.l_cap", "must be positive"))
            }
            _ => {}
        }
        if let OfflineDim::Count(n) = self.offline_dim() {
            if n == 0 {
                return Err(invalid("m_off", "must be positive"));
            }
        }
        if self.m_on.is_empty() {
            return Err(invalid("m_on", "needs at least one value"));
        }
        if self.m_on.iter().any(|&v| v == 0) {
            return Err(invalid("m_on", "values must be positive"));
        }
        if self.m_on.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("m_on", "values must be strictly increasing"));
        }
        if let OfflineDim::Count(n) = self.offline_dim() {
            if let Some(&big) = self.m_on.iter().find(|&&v| v > n) {
                return Err(invalid("m_on", format!("value {big} exceeds m_off = {n}")));
            }
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(invalid("penalty", "must be positive"));
        }
        if let Some(mus) = &self.mu_p_samples {
            if mus.is_empty() || mus.iter().any(|m| !(0.0..=1.0).contains(m)) {
                return Err(invalid("mu_p_samples", "must be a non-empty list of values in [0, 1]"));
            }
            if self.generator == Generator::File || self.generator == Generator::Constant {
                return Err(invalid("mu_p_samples", "needs a generated two-component field"));
            }
        }
        if !(0.0..=1.0).contains(&self.mu_p_online) {
            return Err(invalid("mu_p_online", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The permeability field family described by the configuration.
    pub fn field_family(&self) -> Result<FieldFamily> {
        let single = || -> Result<BasePermField> {
            match self.generator {
                Generator::Channelized => gen_channelized(self.nx, self.kappa_max),
                Generator::RandomInclusions => {
                    gen_random_inclusions(self.nx, self.seed, self.kappa_max, self.fill_fraction)
                }
                Generator::Constant => BasePermField::constant(self.nx, self.kappa_max),
                Generator::File => {
                    let path = self.field_file.as_ref().expect("validated");
                    let f = BasePermField::read_text(path)?;
                    if f.nx() != self.nx {
                        return Err(invalid("field_file", format!("field is {0}x{0}, expected nx = {1}", f.nx(), self.nx)));
                    }
                    Ok(f)
                }
            }
        };
        if self.mu_p_samples.is_none() {
            return Ok(FieldFamily::Fixed(single()?));
        }
        let (k1, k2) = match self.generator {
            Generator::Channelized => gen_channelized_split(self.nx, self.kappa_max)?,
            Generator::RandomInclusions => (
                gen_random_inclusions(self.nx, self.seed, self.kappa_max, self.fill_fraction)?,
                gen_random_inclusions(self.nx, self.seed.wrapping_add(1), self.kappa_max, self.fill_fraction)?,
            ),
            _ => unreachable!("validated"),
        };
        Ok(FieldFamily::Blended(k1, k2))
    }

    /// Field used by the online stage and the fine reference.
    pub fn online_field(&self) -> Result<BasePermField> {
        let family = self.field_family()?;
        match &family {
            FieldFamily::Fixed(k) => Ok(k.clone()),
            FieldFamily::Blended(k1, k2) => blend(k1, k2, self.mu_p_online),
        }
    }

    /// Short deterministic fingerprint of the configuration (FNV-1a of its
    /// JSON form).
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_json().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
