//! Joint optimisation of encoder, decoder, mask logits and operator.
//!
//! Each step encodes the source `x` and the transformed target `T_g(x)`. The
//! target encoding is detached before it is used, so the invariance and
//! consistency terms only pull on the source branch. Both encodings share the
//! same hard mask `M`.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ald::{compute_mask, mask_stats, mask_values, partition_on_tape, MaskConfig};
use crate::config::TrainingConfig;
use crate::data::{make_pairs, ImageDataset, PairSet};
use crate::error::{Error, Result};
use crate::group::{apply_geometric, apply_learned, recombine_on_tape, GroupElement};
use crate::nn::{AdamState, Model, ModelVars};
use crate::rng::{derive_seed, rng_for_item};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon: f64,
    pub inv: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 1.0,
            inv: 1.0,
            consistency: 1.0,
        }
    }
}

/// Nodes of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossGraph {
    pub total: Var,
    pub recon: Var,
    pub inv: Var,
    pub consistency: Var,
    pub mask: Var,
    pub latent: Var,
    /// Encoder output on `T_g(x)` before detaching.
    pub target_latent: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub recon: f64,
    pub inv: f64,
    pub consistency: f64,
}

impl LossGraph {
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> LossValues {
        let v = |x: Var| tape.value(x).item().as_f64();
        LossValues {
            total: v(self.total),
            recon: v(self.recon),
            inv: v(self.inv),
            consistency: v(self.consistency),
        }
    }
}

/// Applies `Φ_g^v` for whichever operator `vars` carries.
pub fn apply_operator<T: Real>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    z_v: Var,
    g: &[GroupElement],
    mask: Var,
) -> Result<Var> {
    match &vars.operator {
        None => apply_geometric(tape, z_v, g, mask),
        Some(op) => apply_learned(tape, op, z_v, g, mask),
    }
}

/// Records `L_total = λ_r L_recon + λ_i L_inv + λ_v L_const` for one batch.
pub fn compute_losses<T: Real>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    x: &Tensor<T>,
    x_t: &Tensor<T>,
    g: &[GroupElement],
    mask_cfg: &MaskConfig,
    w: &LossWeights,
) -> Result<LossGraph> {
    let x = tape.constant(x.clone());
    let x_t = tape.constant(x_t.clone());

    let latent = vars.encode(tape, x)?;
    let target_latent = vars.encode(tape, x_t)?;
    let target = tape.stop_gradient(target_latent)?;

    let mask = compute_mask(tape, vars.mask_logits, mask_cfg)?;
    let (z_v, z_i) = partition_on_tape(tape, latent, mask)?;
    let (t_v, t_i) = partition_on_tape(tape, target, mask)?;
    let z_v_g = apply_operator(tape, vars, z_v, g, mask)?;

    let combined = recombine_on_tape(tape, z_v_g, z_i)?;
    let decoded = vars.decode(tape, combined)?;
    let recon = tape.mse(decoded, x_t)?;
    let inv = tape.mse(z_i, t_i)?;
    let consistency = tape.mse(z_v_g, t_v)?;

    for (name, v) in [("L_recon", recon), ("L_inv", inv), ("L_const", consistency)] {
        if !tape.value(v).item().is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
    }

    let r = tape.scale(recon, T::of(w.recon))?;
    let i = tape.scale(inv, T::of(w.inv))?;
    let c = tape.scale(consistency, T::of(w.consistency))?;
    let ri = tape.add(r, i)?;
    let total = tape.add(ri, c)?;
    if !tape.value(total).item().is_finite() {
        return Err(Error::NonFinite("L_total".into()));
    }

    Ok(LossGraph {
        total,
        recon,
        inv,
        consistency,
        mask,
        latent,
        target_latent,
    })
}

/// One gradient step over a batch; returns the batch losses.
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut AdamState<f32>,
    x: &Tensor<f32>,
    x_t: &Tensor<f32>,
    g: &[GroupElement],
    mask_cfg: &MaskConfig,
    w: &LossWeights,
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let graph = compute_losses(&mut tape, &vars, x, x_t, g, mask_cfg, w)?;
    let grads = tape.backward(graph.total)?;
    let grads: Vec<Tensor<f32>> = vars
        .params()
        .into_iter()
        .map(|v| grads.wrt(v))
        .collect::<Result<_>>()?;
    opt.step(&mut model.params_mut(), &grads)?;
    Ok(graph.values(&tape))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub inv: f64,
    pub consistency: f64,
    pub variant_fraction: f64,
    /// Not serialised: it would break byte-for-byte reproducibility.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,l_total,l_recon,l_inv,l_const,variant_fraction\n");
        for r in &self.epochs {
            writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{}",
                r.epoch, r.total, r.recon, r.inv, r.consistency, r.variant_fraction
            )
            .unwrap();
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn wall_time_s(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_time_s).sum()
    }
}

pub struct Trained {
    pub model: Model<f32>,
    pub optimizer: AdamState<f32>,
    pub report: TrainReport,
}

/// The training pair set for `cfg` over `ds`.
pub fn training_pairs(cfg: &TrainingConfig, ds: &ImageDataset) -> Result<PairSet> {
    make_pairs(ds, cfg.n_pairs, &cfg.pair_config(), derive_seed(cfg.seed, "train-pairs"))
}

/// Runs the full schedule; a pure function of `(cfg, ds)`.
pub fn train(cfg: &TrainingConfig, ds: &ImageDataset) -> Result<Trained> {
    train_with(cfg, ds, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    cfg: &TrainingConfig,
    ds: &ImageDataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Trained> {
    cfg.validate()?;
    let arch = cfg.architecture(ds.height, ds.width);
    let mut model = Model::<f32>::init(arch, derive_seed(cfg.seed, "init"))?;
    let mut opt = AdamState::new(cfg.lr);
    let mask_cfg = cfg.mask();
    let weights = cfg.weights();
    let pairs = training_pairs(cfg, ds)?;

    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng_for_item(cfg.seed, "epoch-order", epoch as u64));

        let mut sums = [0.0f64; 4];
        for batch in pairs.batches(&order, cfg.batch) {
            let l = train_step(&mut model, &mut opt, &batch.x, &batch.x_t, &batch.g, &mask_cfg, &weights)?;
            let n = batch.len() as f64;
            for (s, v) in sums.iter_mut().zip([l.total, l.recon, l.inv, l.consistency]) {
                *s += v * n;
            }
        }
        let n = pairs.len() as f64;
        let mask = mask_values(&model.mask_logits, &mask_cfg)?;
        let record = EpochRecord {
            epoch,
            total: sums[0] / n,
            recon: sums[1] / n,
            inv: sums[2] / n,
            consistency: sums[3] / n,
            variant_fraction: mask_stats(&mask).variant_fraction,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if !model.all_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        on_epoch(&record);
        report.epochs.push(record);
    }
    Ok(Trained {
        model,
        optimizer: opt,
        report,
    })
}
