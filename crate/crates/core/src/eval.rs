//! Read-only evaluation of a trained model: reconstruction metrics, latent
//! extraction, probes, the threshold sweep, latent swapping and per-dimension
//! magnitudes. Nothing here records a tape or mutates the model.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ald::{mask_stats, mask_values, partition_latent, MaskConfig};
use crate::data::{rotate_image, PairSet};
use crate::error::{Error, Result};
use crate::group::{recombine, GroupElement};
use crate::metrics::MetricsReport;
use crate::nn::Model;
use crate::probe::{train_probe, ProbeReport};
use crate::rng::rng_for;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 256;

/// Thresholds swept by default: 0.1, 0.2, …, 0.9.
pub fn default_taus() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// A threshold close enough to zero that every coordinate is variant for any
/// logit above about −20.
pub const TAU_NEAR_ZERO: f64 = 1e-9;

/// `D(recombine(Φ_g(z_v), z_i))` for a batch of images and angles.
pub fn predict_transformed(
    model: &Model<f32>,
    x: &Tensor<f32>,
    g: &[GroupElement],
    mask_cfg: &MaskConfig,
) -> Result<Tensor<f32>> {
    let mask = mask_values(&model.mask_logits, mask_cfg)?;
    let part = partition_latent(&model.encode(x)?, &mask)?;
    let moved = model.operator.apply(&part.variant, g, &mask)?;
    model.decode(&recombine(&moved, &part.invariant)?)
}

/// Compares the prediction for every pair against its target `T_g(x)`.
pub fn evaluate_reconstruction(model: &Model<f32>, pairs: &PairSet, mask_cfg: &MaskConfig) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for batch in pairs.in_order(EVAL_BATCH) {
        let y = predict_transformed(model, &batch.x, &batch.g, mask_cfg)?;
        for r in 0..batch.len() {
            preds.push(y.row(r).to_vec());
            targets.push(batch.x_t.row(r).to_vec());
        }
    }
    MetricsReport::from_pairs(
        preds.iter().zip(&targets).map(|(p, t)| (p.as_slice(), t.as_slice())),
        pairs.height,
        pairs.width,
    )
}

/// Metrics of a model whose decoder outputs 0.5 everywhere (the output of a
/// sigmoid decoder with zero weights), against the same targets.
pub fn constant_baseline(pairs: &PairSet) -> Result<MetricsReport> {
    let flat = vec![0.5f32; pairs.height * pairs.width];
    MetricsReport::from_pairs(
        pairs.pairs.iter().map(|p| (flat.as_slice(), p.x_t.as_slice())),
        pairs.height,
        pairs.width,
    )
}

/// Frozen latents of a set of images.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub z: Tensor<f32>,
    pub z_v: Tensor<f32>,
    pub z_i: Tensor<f32>,
    pub mask: Tensor<f32>,
}

pub fn extract_latents(model: &Model<f32>, images: &Tensor<f32>, mask_cfg: &MaskConfig) -> Result<Latents> {
    let (n, _) = images.matrix_dims("extract_latents")?;
    let d = model.latent_dim();
    let mut z = Vec::with_capacity(n * d);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        z.extend_from_slice(model.encode(&images.gather_rows(chunk)?)?.data());
    }
    let z = Tensor::new([n, d], z)?;
    let mask = mask_values(&model.mask_logits, mask_cfg)?;
    let part = partition_latent(&z, &mask)?;
    Ok(Latents {
        z,
        z_v: part.variant,
        z_i: part.invariant,
        mask,
    })
}

/// The probe images of a pair set: every transformed target with its label.
pub fn probe_inputs(pairs: &PairSet) -> (Tensor<f32>, Vec<usize>) {
    let idx: Vec<usize> = (0..pairs.len()).collect();
    let batch = pairs.batch(&idx);
    (batch.x_t, batch.labels.iter().map(|&l| l as usize).collect())
}

/// Probes on `z`, `z_v` and `z_i`, in that order, with one shared seed.
pub fn probe_all(
    model: &Model<f32>,
    images: &Tensor<f32>,
    labels: &[usize],
    num_classes: usize,
    mask_cfg: &MaskConfig,
    seed: u64,
) -> Result<Vec<ProbeReport>> {
    let lat = extract_latents(model, images, mask_cfg)?;
    Ok(vec![
        train_probe(&lat.z, labels, num_classes, seed)?.named("z"),
        train_probe(&lat.z_v, labels, num_classes, seed)?.named("z_v"),
        train_probe(&lat.z_i, labels, num_classes, seed)?.named("z_i"),
    ])
}

/// Mean squared latent displacement between `x` and `T_g(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// mean ‖z_i(x) − z_i(T_g x)‖²
    pub invariant: f64,
    /// mean ‖z(x) − z(T_g x)‖²
    pub full: f64,
    pub ratio: f64,
}

pub fn invariance(model: &Model<f32>, pairs: &PairSet, mask_cfg: &MaskConfig) -> Result<InvarianceReport> {
    let (mut inv, mut full) = (0.0f64, 0.0f64);
    let mask = mask_values(&model.mask_logits, mask_cfg)?;
    for batch in pairs.in_order(EVAL_BATCH) {
        let a = partition_latent(&model.encode(&batch.x)?, &mask)?;
        let b = partition_latent(&model.encode(&batch.x_t)?, &mask)?;
        let sq = |p: &Tensor<f32>, q: &Tensor<f32>| -> f64 {
            p.data().iter().zip(q.data()).map(|(&u, &v)| (u as f64 - v as f64).powi(2)).sum()
        };
        inv += sq(&a.invariant, &b.invariant);
        full += sq(&a.z, &b.z);
    }
    let n = pairs.len().max(1) as f64;
    let (inv, full) = (inv / n, full / n);
    Ok(InvarianceReport {
        invariant: inv,
        full,
        ratio: if full > 0.0 { inv / full } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau: f64,
    pub variant_fraction: f64,
    pub accuracy_zv: f64,
}

/// Probe accuracy on `z_v` per threshold, with the logits held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSweep {
    pub rows: Vec<TauRow>,
    /// Probe accuracy on the unmasked `z`, same seed.
    pub accuracy_z: f64,
}

impl TauSweep {
    /// One line per threshold; the `z` accuracy is repeated as a reference column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,variant_fraction,accuracy_zv,accuracy_z\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.tau, r.variant_fraction, r.accuracy_zv, self.accuracy_z).unwrap();
        }
        s
    }

    pub fn accuracy_at(&self, tau: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.tau == tau).map(|r| r.accuracy_zv)
    }
}

pub fn sweep_tau(
    model: &Model<f32>,
    images: &Tensor<f32>,
    labels: &[usize],
    num_classes: usize,
    taus: &[f64],
    pair_aligned: bool,
    seed: u64,
) -> Result<TauSweep> {
    let z = extract_latents(model, images, &MaskConfig::new(0.5, pair_aligned)?)?.z;
    let accuracy_z = train_probe(&z, labels, num_classes, seed)?.accuracy;
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mask = mask_values(&model.mask_logits, &MaskConfig::new(tau, pair_aligned)?)?;
        let z_v = z.mul_row(&mask)?;
        rows.push(TauRow {
            tau,
            variant_fraction: mask_stats(&mask).variant_fraction,
            accuracy_zv: train_probe(&z_v, labels, num_classes, seed)?.accuracy,
        });
    }
    Ok(TauSweep { rows, accuracy_z })
}

/// Decoded `[z_v1; z_i1]`, `[z_v2; z_i2]`, `[z_v1; z_i2]`, `[z_v2; z_i1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Swap {
    pub images: [Vec<f32>; 4],
}

pub fn swap_latents(model: &Model<f32>, x1: &[f32], x2: &[f32], mask_cfg: &MaskConfig) -> Result<Swap> {
    let p = model.arch.pixels();
    if x1.len() != p || x2.len() != p {
        return Err(Error::Shape(format!(
            "swap: images of {} and {} pixels for a {p}-pixel model",
            x1.len(),
            x2.len()
        )));
    }
    let x = Tensor::new([2, p], [x1, x2].concat())?;
    let lat = extract_latents(model, &x, mask_cfg)?;
    let d = model.latent_dim();
    let (v, i) = (lat.z_v.data(), lat.z_i.data());
    let combos = [(0, 0), (1, 1), (0, 1), (1, 0)];
    let mut zs = Vec::with_capacity(4 * d);
    for (a, b) in combos {
        let row = recombine(
            &Tensor::new([1, d], v[a * d..(a + 1) * d].to_vec())?,
            &Tensor::new([1, d], i[b * d..(b + 1) * d].to_vec())?,
        )?;
        zs.extend_from_slice(row.data());
    }
    let out = model.decode(&Tensor::new([4, d], zs)?)?;
    Ok(Swap {
        images: std::array::from_fn(|k| out.row(k).to_vec()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentMagnitude {
    pub dim: usize,
    pub mask: u8,
    pub mean_abs_zv: f64,
    pub mean_abs_zi: f64,
    pub rotation_variance: f64,
}

pub fn magnitudes_csv(rows: &[LatentMagnitude]) -> String {
    let mut s = String::from("dim,mask,mean_abs_zv,mean_abs_zi,rotation_variance\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.dim, r.mask, r.mean_abs_zv, r.mean_abs_zi, r.rotation_variance
        )
        .unwrap();
    }
    s
}

/// Per-dimension mean `|z_v|` and `|z_i|` over `images`, plus the variance of
/// each coordinate of `z` across `n_rotations` random rotations of a
/// reference image, averaged over the first `n_reference` images.
pub fn export_latent_magnitudes(
    model: &Model<f32>,
    images: &Tensor<f32>,
    mask_cfg: &MaskConfig,
    n_reference: usize,
    n_rotations: usize,
    seed: u64,
) -> Result<Vec<LatentMagnitude>> {
    let (n, p) = images.matrix_dims("export_latent_magnitudes")?;
    if n == 0 || n_rotations < 2 {
        return Err(Error::InvalidParameter(
            "latent magnitudes need at least one image and two rotations".into(),
        ));
    }
    let (h, w) = (model.arch.height, model.arch.width);
    if p != h * w {
        return Err(Error::Shape(format!("{p}-pixel images for a {h}×{w} model")));
    }
    let d = model.latent_dim();
    let lat = extract_latents(model, images, mask_cfg)?;
    let mut abs_v = vec![0.0f64; d];
    let mut abs_i = vec![0.0f64; d];
    for r in 0..n {
        for k in 0..d {
            abs_v[k] += lat.z_v.row(r)[k].abs() as f64;
            abs_i[k] += lat.z_i.row(r)[k].abs() as f64;
        }
    }

    let refs = n_reference.clamp(1, n);
    let mut rng = rng_for(seed, "rotation-variance");
    let mut variance = vec![0.0f64; d];
    for r in 0..refs {
        let mut stack = Vec::with_capacity(n_rotations * p);
        for _ in 0..n_rotations {
            let g = GroupElement::new(rng.random_range(0.0..std::f64::consts::TAU));
            stack.extend(rotate_image(images.row(r), h, w, g));
        }
        let z = model.encode(&Tensor::new([n_rotations, p], stack)?)?;
        for k in 0..d {
            let col: Vec<f64> = (0..n_rotations).map(|j| z.row(j)[k] as f64).collect();
            let mean = col.iter().sum::<f64>() / n_rotations as f64;
            variance[k] += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_rotations as f64;
        }
    }

    Ok((0..d)
        .map(|k| LatentMagnitude {
            dim: k,
            mask: (lat.mask.data()[k] > 0.0) as u8,
            mean_abs_zv: abs_v[k] / n as f64,
            mean_abs_zi: abs_i[k] / n as f64,
            rotation_variance: variance[k] / refs as f64,
        })
        .collect())
}
