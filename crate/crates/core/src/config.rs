//! Run configuration as flat `key=value` text.
//!
//! Blank lines and `#` comments are ignored. Keys may be written with `_` or
//! `-`. Unknown keys and out-of-range values are errors that name the key.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ald::MaskConfig;
use crate::data::PairConfig;
use crate::error::{Error, Result};
use crate::group::OperatorKind;
use crate::nn::Architecture;
use crate::training::LossWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSpec {
    Glyph,
    MnistIdx { images: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    /// Training images (glyphs generated, or the first `n_images` of an IDX file).
    pub n_images: usize,
    /// Held-out images for evaluation and probing.
    pub n_test_images: usize,
    pub n_test_pairs: usize,
    pub blocked: bool,
    pub block_prob: f64,
    pub latent_dim: usize,
    pub pair_aligned_mask: bool,
    pub tau: f64,
    pub operator: OperatorKind,
    pub lambda_r: f64,
    pub lambda_i: f64,
    pub lambda_v: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub n_pairs: usize,
    pub hidden: Vec<usize>,
    pub output_dir: PathBuf,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            seed: 0,
            dataset: DatasetSpec::Glyph,
            n_images: 2000,
            n_test_images: 500,
            n_test_pairs: 1000,
            blocked: false,
            block_prob: 0.5,
            latent_dim: 32,
            pair_aligned_mask: true,
            tau: 0.5,
            operator: OperatorKind::Geometric,
            lambda_r: 1.0,
            lambda_i: 1.0,
            lambda_v: 1.0,
            lr: 1e-3,
            epochs: 30,
            batch: 64,
            n_pairs: 4000,
            hidden: vec![256, 64],
            output_dir: PathBuf::from("out"),
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "dataset",
    "mnist_images",
    "mnist_labels",
    "n_images",
    "n_test_images",
    "n_test_pairs",
    "blocked",
    "block_prob",
    "latent_dim",
    "pair_aligned_mask",
    "tau",
    "operator",
    "lambda_r",
    "lambda_i",
    "lambda_v",
    "lr",
    "epochs",
    "batch",
    "n_pairs",
    "hidden",
    "output_dir",
];

fn err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| err(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(err(key, format!("expected a boolean, got `{value}`"))),
    }
}

/// Splits `key=value` text into normalised pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(line, format!("line {} is not key=value", n + 1)))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses one `KEY=VALUE` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| err(s, "override must be KEY=VALUE"))?;
    Ok((k.trim().replace('-', "_"), v.trim().to_string()))
}

impl TrainingConfig {
    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match file {
            Some(p) => parse_pairs(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(&pairs)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        let mut kind: Option<String> = None;
        let mut images: Option<PathBuf> = None;
        let mut labels: Option<PathBuf> = None;
        for (k, v) in pairs {
            let k = k.as_str();
            match k {
                "seed" => cfg.seed = parse(k, v)?,
                "dataset" => kind = Some(v.clone()),
                "mnist_images" => images = Some(PathBuf::from(v)),
                "mnist_labels" => labels = Some(PathBuf::from(v)),
                "n_images" => cfg.n_images = parse(k, v)?,
                "n_test_images" => cfg.n_test_images = parse(k, v)?,
                "n_test_pairs" => cfg.n_test_pairs = parse(k, v)?,
                "blocked" => cfg.blocked = parse_bool(k, v)?,
                "block_prob" => cfg.block_prob = parse(k, v)?,
                "latent_dim" => cfg.latent_dim = parse(k, v)?,
                "pair_aligned_mask" => cfg.pair_aligned_mask = parse_bool(k, v)?,
                "tau" => cfg.tau = parse(k, v)?,
                "operator" => cfg.operator = v.parse().map_err(|e: String| err(k, e))?,
                "lambda_r" => cfg.lambda_r = parse(k, v)?,
                "lambda_i" => cfg.lambda_i = parse(k, v)?,
                "lambda_v" => cfg.lambda_v = parse(k, v)?,
                "lr" => cfg.lr = parse(k, v)?,
                "epochs" => cfg.epochs = parse(k, v)?,
                "batch" => cfg.batch = parse(k, v)?,
                "n_pairs" => cfg.n_pairs = parse(k, v)?,
                "hidden" => {
                    cfg.hidden = v
                        .split(',')
                        .map(|s| parse(k, s.trim()))
                        .collect::<Result<_>>()?
                }
                "output_dir" => cfg.output_dir = PathBuf::from(v),
                _ => return Err(err(k, format!("unknown key; valid keys: {}", KEYS.join(", ")))),
            }
        }
        cfg.dataset = match kind.as_deref() {
            None | Some("glyph") => DatasetSpec::Glyph,
            Some("mnist-idx") | Some("mnist_idx") => DatasetSpec::MnistIdx {
                images: images.ok_or_else(|| err("mnist_images", "required for dataset=mnist-idx"))?,
                labels: labels.ok_or_else(|| err("mnist_labels", "required for dataset=mnist-idx"))?,
            },
            Some(other) => {
                return Err(err("dataset", format!("expected `glyph` or `mnist-idx`, got `{other}`")))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let in_open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_open_unit(self.tau) {
            return Err(err("tau", format!("{} is outside (0, 1)", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.block_prob) {
            return Err(err("block_prob", format!("{} is outside [0, 1]", self.block_prob)));
        }
        for (k, v) in [
            ("lambda_r", self.lambda_r),
            ("lambda_i", self.lambda_i),
            ("lambda_v", self.lambda_v),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(err(k, format!("{v} must be finite and non-negative")));
            }
        }
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return Err(err("lr", format!("{} is outside (0, 1]", self.lr)));
        }
        if !(2..=4096).contains(&self.latent_dim) {
            return Err(err("latent_dim", format!("{} is outside 2..=4096", self.latent_dim)));
        }
        if self.pair_aligned_mask && !self.latent_dim.is_multiple_of(2) {
            return Err(err("latent_dim", "must be even when pair_aligned_mask is on"));
        }
        if self.operator == OperatorKind::Geometric && !self.pair_aligned_mask {
            return Err(err("pair_aligned_mask", "the geometric operator requires pair alignment"));
        }
        for (k, v) in [
            ("epochs", self.epochs),
            ("batch", self.batch),
            ("n_pairs", self.n_pairs),
            ("n_test_pairs", self.n_test_pairs),
            ("n_test_images", self.n_test_images),
        ] {
            if v == 0 {
                return Err(err(k, "must be positive"));
            }
        }
        if self.n_images < 10 {
            return Err(err("n_images", "must be at least 10"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(err("hidden", "needs one or more positive widths"));
        }
        Ok(())
    }

    pub fn mask(&self) -> MaskConfig {
        MaskConfig {
            tau: self.tau,
            pair_aligned: self.pair_aligned_mask,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            recon: self.lambda_r,
            inv: self.lambda_i,
            consistency: self.lambda_v,
        }
    }

    pub fn pair_config(&self) -> PairConfig {
        PairConfig {
            blocked: self.blocked,
            block_prob: self.block_prob,
            block_size: 7,
        }
    }

    pub fn architecture(&self, height: usize, width: usize) -> Architecture {
        Architecture {
            operator: self.operator,
            pair_aligned: self.pair_aligned_mask,
            ..Architecture::new(height, width, self.latent_dim, self.hidden.clone())
        }
    }

    /// Every key with its effective value, one per line, in a fixed order.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        line("seed", self.seed.to_string());
        match &self.dataset {
            DatasetSpec::Glyph => line("dataset", "glyph".into()),
            DatasetSpec::MnistIdx { images, labels } => {
                line("dataset", "mnist-idx".into());
                line("mnist_images", images.display().to_string());
                line("mnist_labels", labels.display().to_string());
            }
        }
        line("n_images", self.n_images.to_string());
        line("n_test_images", self.n_test_images.to_string());
        line("n_test_pairs", self.n_test_pairs.to_string());
        line("blocked", self.blocked.to_string());
        line("block_prob", self.block_prob.to_string());
        line("latent_dim", self.latent_dim.to_string());
        line("pair_aligned_mask", self.pair_aligned_mask.to_string());
        line("tau", self.tau.to_string());
        line("operator", self.operator.to_string());
        line("lambda_r", self.lambda_r.to_string());
        line("lambda_i", self.lambda_i.to_string());
        line("lambda_v", self.lambda_v.to_string());
        line("lr", self.lr.to_string());
        line("epochs", self.epochs.to_string());
        line("batch", self.batch.to_string());
        line("n_pairs", self.n_pairs.to_string());
        line(
            "hidden",
            self.hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        line("output_dir", self.output_dir.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = TrainingConfig::parse_str("").unwrap();
        assert_eq!(cfg, TrainingConfig::default());
        assert_eq!(cfg.tau, 0.5);
        assert_eq!((cfg.lambda_r, cfg.lambda_i, cfg.lambda_v), (1.0, 1.0, 1.0));
        assert_eq!((cfg.latent_dim, cfg.epochs), (32, 30));
    }

    #[test]
    fn out_of_range_names_the_key() {
        let e = TrainingConfig::parse_str("tau=1.5").unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "tau"), "{e}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let e = TrainingConfig::parse_str("learning_rate=0.1").unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "learning_rate"));
    }

    #[test]
    fn later_pairs_win() {
        let file = parse_pairs("tau = 0.6\n# comment\nlatent-dim=16\n").unwrap();
        let mut all = file.clone();
        all.push(parse_override("tau=0.7").unwrap());
        let cfg = TrainingConfig::from_pairs(&all).unwrap();
        assert_eq!(cfg.tau, 0.7);
        assert_eq!(cfg.latent_dim, 16);
        assert!(cfg.resolved().contains("tau=0.7\n"));
    }

    #[test]
    fn mnist_requires_paths() {
        let e = TrainingConfig::parse_str("dataset=mnist-idx\nmnist_images=a").unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "mnist_labels"));
        let ok = TrainingConfig::parse_str("dataset=mnist-idx\nmnist_images=a\nmnist_labels=b").unwrap();
        assert!(matches!(ok.dataset, DatasetSpec::MnistIdx { .. }));
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = TrainingConfig::parse_str("hidden=128,32\nblocked=true\noperator=learned\npair_aligned_mask=false\nlatent_dim=9").unwrap();
        assert_eq!(TrainingConfig::parse_str(&cfg.resolved()).unwrap(), cfg);
    }

    #[test]
    fn malformed_values() {
        for text in ["epochs=0", "hidden=", "blocked=maybe", "lambda_i=-1", "latent_dim=7", "operator=conv", "seed=x"] {
            assert!(TrainingConfig::parse_str(text).is_err(), "{text}");
        }
    }
}
