//! End-to-end runs built from a [`TrainingConfig`]: dataset preparation,
//! training, held-out evaluation and the loss ablation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, TrainingConfig};
use crate::data::{gen_glyph_dataset, load_idx, make_pairs, ImageDataset, PairSet};
use crate::error::Result;
use crate::eval::{constant_baseline, evaluate_reconstruction};
use crate::rng::derive_seed;
use crate::training::{train, Trained};

pub const GLYPH_SIZE: usize = 28;
pub const GLYPH_CLASSES_USED: usize = 10;

/// Train images, held-out images and the held-out evaluation pairs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: ImageDataset,
    pub test: ImageDataset,
    pub test_pairs: PairSet,
}

/// The full image pool for `cfg`, before the train/test split.
pub fn load_dataset(cfg: &TrainingConfig) -> Result<ImageDataset> {
    let total = cfg.n_images + cfg.n_test_images;
    match &cfg.dataset {
        DatasetSpec::Glyph => gen_glyph_dataset(total, GLYPH_CLASSES_USED, GLYPH_SIZE, derive_seed(cfg.seed, "glyphs")),
        DatasetSpec::MnistIdx { images, labels } => Ok(load_idx(images, labels)?.take(total)),
    }
}

pub fn prepare(cfg: &TrainingConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = load_dataset(cfg)?.split_tail(cfg.n_test_images)?;
    let test_pairs = make_pairs(&test, cfg.n_test_pairs, &cfg.pair_config(), derive_seed(cfg.seed, "test-pairs"))?;
    Ok(Prepared {
        train,
        test,
        test_pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub lambda_i: f64,
    pub lambda_v: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// PSNR of a constant 0.5 prediction on the same pairs.
    pub baseline_psnr: f64,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,lambda_i,lambda_v,psnr,ssim,rmse\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{},{}", r.name, r.lambda_i, r.lambda_v, r.psnr, r.ssim, r.rmse).unwrap();
        }
        s
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// The three loss configurations: invariance only, consistency only, both.
/// `λ_r` is kept from `cfg` in every row.
pub fn ablation_configs(cfg: &TrainingConfig) -> Vec<(&'static str, TrainingConfig)> {
    let with = |li: f64, lv: f64| TrainingConfig {
        lambda_i: li,
        lambda_v: lv,
        ..cfg.clone()
    };
    vec![
        ("inv_only", with(cfg.lambda_i.max(1.0), 0.0)),
        ("const_only", with(0.0, cfg.lambda_v.max(1.0))),
        ("both", with(cfg.lambda_i.max(1.0), cfg.lambda_v.max(1.0))),
    ]
}

/// Trains and scores each configuration. `reuse` may supply an already
/// trained model for a row (matched by name), which skips retraining it.
pub fn run_ablation(
    cfg: &TrainingConfig,
    prepared: &Prepared,
    mut reuse: impl FnMut(&str, &TrainingConfig) -> Option<Trained>,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (name, c) in ablation_configs(cfg) {
        let trained = match reuse(name, &c) {
            Some(t) => t,
            None => train(&c, &prepared.train)?,
        };
        let m = evaluate_reconstruction(&trained.model, &prepared.test_pairs, &c.mask())?;
        let row = AblationRow {
            name: name.to_string(),
            lambda_i: c.lambda_i,
            lambda_v: c.lambda_v,
            psnr: m.psnr_mean,
            ssim: m.ssim_mean,
            rmse: m.rmse_mean,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationTable {
        rows,
        baseline_psnr: constant_baseline(&prepared.test_pairs)?.psnr_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainingConfig {
        TrainingConfig {
            n_images: 30,
            n_test_images: 10,
            n_test_pairs: 12,
            n_pairs: 32,
            epochs: 1,
            batch: 16,
            latent_dim: 4,
            hidden: vec![8],
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn preparation_is_deterministic_and_disjoint() {
        let cfg = small();
        let a = prepare(&cfg).unwrap();
        let b = prepare(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test_pairs, b.test_pairs);
        assert_eq!(a.train.len(), 30);
        assert_eq!(a.test.len(), 10);
        assert_eq!(a.test_pairs.len(), 12);
    }

    #[test]
    fn ablation_emits_three_rows() {
        let cfg = small();
        let p = prepare(&cfg).unwrap();
        let mut seen = Vec::new();
        let t = run_ablation(&cfg, &p, |_, _| None, |r| seen.push(r.name.clone())).unwrap();
        assert_eq!(seen, ["inv_only", "const_only", "both"]);
        assert_eq!(t.row("inv_only").unwrap().lambda_v, 0.0);
        assert_eq!(t.row("const_only").unwrap().lambda_i, 0.0);
        assert_eq!(t.to_csv().lines().count(), 4);
        assert!(t.rows.iter().all(|r| r.psnr.is_finite()));
    }
}
