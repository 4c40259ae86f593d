use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::KeyValues;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskPattern {
    PseudoRadial,
    Cartesian,
}

impl MaskPattern {
    pub const ALL: [MaskPattern; 2] = [MaskPattern::PseudoRadial, MaskPattern::Cartesian];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskPattern::PseudoRadial => "radial",
            MaskPattern::Cartesian => "cartesian",
        }
    }
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "radial" | "pseudo_radial" | "pseudo-radial" => Ok(MaskPattern::PseudoRadial),
            "cartesian" => Ok(MaskPattern::Cartesian),
            other => Err(Error::Config(format!("unknown mask pattern `{other}`"))),
        }
    }
}

/// Which representation the network is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IqtDomain {
    /// Two-channel real/imaginary k-space (kIQT).
    Kspace,
    /// Single-channel magnitude image (sIQT).
    Spatial,
}

impl IqtDomain {
    pub fn as_str(self) -> &'static str {
        match self {
            IqtDomain::Kspace => "kspace",
            IqtDomain::Spatial => "spatial",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            IqtDomain::Kspace => 2,
            IqtDomain::Spatial => 1,
        }
    }

    /// Method label used in metric tables.
    pub fn method_label(self) -> &'static str {
        match self {
            IqtDomain::Kspace => "kIQT",
            IqtDomain::Spatial => "sIQT",
        }
    }
}

impl fmt::Display for IqtDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IqtDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kspace" | "k-space" => Ok(IqtDomain::Kspace),
            "spatial" | "image" => Ok(IqtDomain::Spatial),
            other => Err(Error::Config(format!("unknown iqt domain `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mask_pattern: MaskPattern,
    pub sampling_fraction: f64,
    pub iqt_domain: IqtDomain,
    pub folds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    /// Training settings of the reference protocol: 3 folds, 150 epochs,
    /// batch 8, Adam at 1e-3 with weight decay 1e-6.
    fn default() -> Self {
        Self {
            mask_pattern: MaskPattern::PseudoRadial,
            sampling_fraction: 0.5,
            iqt_domain: IqtDomain::Kspace,
            folds: 3,
            epochs: 150,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 9] = [
        "mask_pattern",
        "sampling_fraction",
        "iqt_domain",
        "folds",
        "epochs",
        "batch_size",
        "learning_rate",
        "weight_decay",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_fraction > 0.0 && self.sampling_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "sampling_fraction must lie in (0, 1], got {}",
                self.sampling_fraction
            )));
        }
        if self.folds == 0 || self.batch_size == 0 {
            return Err(Error::Config("folds and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }

    /// True for the 100%, 50% and 30% conditions of the reference benchmark.
    pub fn is_reference_condition(&self) -> bool {
        [1.0, 0.5, 0.3]
            .iter()
            .any(|f| (self.sampling_fraction - f).abs() < 1e-9)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("mask_pattern", self.mask_pattern);
        kv.insert("sampling_fraction", self.sampling_fraction);
        kv.insert("iqt_domain", self.iqt_domain);
        kv.insert("folds", self.folds);
        kv.insert("epochs", self.epochs);
        kv.insert("batch_size", self.batch_size);
        kv.insert("learning_rate", self.learning_rate);
        kv.insert("weight_decay", self.weight_decay);
        kv.insert("seed", self.seed);
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        if let Some(extra) = kv.keys().find(|k| !Self::KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown key `{extra}`")));
        }
        let cfg = Self {
            mask_pattern: kv.require("mask_pattern")?.parse()?,
            sampling_fraction: kv.parse_value("sampling_fraction")?,
            iqt_domain: kv.require("iqt_domain")?.parse()?,
            folds: kv.parse_value("folds")?,
            epochs: kv.parse_value("epochs")?,
            batch_size: kv.parse_value("batch_size")?,
            learning_rate: kv.parse_value("learning_rate")?,
            weight_decay: kv.parse_value("weight_decay")?,
            seed: kv.parse_value("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_key_values().save(path)
    }

    /// Hex SHA-256 of the canonical key-value rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_key_values().render().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
