//! Adaptive latent disentanglement: a learned binary mask over latent
//! coordinates and the split of `z` into variant and invariant parts.
//!
//! The mask is `M = 𝕀(σ(α) > τ)` with a strict inequality, so a logit sitting
//! exactly on the threshold yields an invariant coordinate. Gradients reach
//! `α` through the sigmoid straight-through rule `∂α = ∂M ⊙ σ'(α)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{hard_mask_values, Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub tau: f64,
    pub pair_aligned: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            tau: 0.5,
            pair_aligned: true,
        }
    }
}

impl MaskConfig {
    pub fn new(tau: f64, pair_aligned: bool) -> Result<Self> {
        let cfg = MaskConfig { tau, pair_aligned };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mask threshold tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Records the mask on `tape` with its straight-through backward rule.
pub fn compute_mask<T: Real>(tape: &mut Tape<T>, logits: Var, cfg: &MaskConfig) -> Result<Var> {
    cfg.validate()?;
    tape.hard_mask(logits, T::of(cfg.tau), cfg.pair_aligned)
}

/// Mask values without recording anything.
pub fn mask_values<T: Real>(logits: &Tensor<T>, cfg: &MaskConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    hard_mask_values(logits, T::of(cfg.tau), cfg.pair_aligned)
}

pub fn is_binary<T: Real>(mask: &Tensor<T>) -> bool {
    mask.data().iter().all(|&m| m == T::zero() || m == T::one())
}

pub fn is_pair_aligned<T: Real>(mask: &Tensor<T>) -> bool {
    mask.len().is_multiple_of(2) && mask.data().chunks_exact(2).all(|p| p[0] == p[1])
}

fn check_mask<T: Real>(z_width: usize, mask: &Tensor<T>) -> Result<()> {
    if mask.shape() != [z_width] {
        return Err(Error::Shape(format!(
            "mask shape {:?} does not match latent width {z_width}",
            mask.shape()
        )));
    }
    if !is_binary(mask) {
        return Err(Error::InvalidParameter("mask entries must be 0 or 1".into()));
    }
    Ok(())
}

/// `z`, its mask and the two disjoint parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPartition<T> {
    pub z: Tensor<T>,
    pub mask: Tensor<T>,
    pub variant: Tensor<T>,
    pub invariant: Tensor<T>,
}

/// `z_v = M ⊙ z`, `z_i = (1 − M) ⊙ z`, with `M` repeated over the batch.
pub fn partition_latent<T: Real>(z: &Tensor<T>, mask: &Tensor<T>) -> Result<LatentPartition<T>> {
    let (_, d) = z.matrix_dims("partition_latent")?;
    check_mask(d, mask)?;
    let complement = mask.map(|m| T::one() - m);
    Ok(LatentPartition {
        variant: z.mul_row(mask)?,
        invariant: z.mul_row(&complement)?,
        z: z.clone(),
        mask: mask.clone(),
    })
}

/// Tape version of [`partition_latent`]; returns `(z_v, z_i)`.
pub fn partition_on_tape<T: Real>(tape: &mut Tape<T>, z: Var, mask: Var) -> Result<(Var, Var)> {
    let (_, d) = tape.value(z).matrix_dims("partition_latent")?;
    check_mask(d, tape.value(mask))?;
    let variant = tape.mul_row(z, mask)?;
    let neg = tape.scale(mask, -T::one())?;
    let complement = tape.add_scalar(neg, T::one())?;
    let invariant = tape.mul_row(z, complement)?;
    Ok((variant, invariant))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub variant: usize,
    pub invariant: usize,
    pub variant_fraction: f64,
}

pub fn mask_stats<T: Real>(mask: &Tensor<T>) -> MaskStats {
    let variant = mask.data().iter().filter(|&&m| m > T::zero()).count();
    let d = mask.len();
    MaskStats {
        variant,
        invariant: d - variant,
        variant_fraction: if d == 0 { 0.0 } else { variant as f64 / d as f64 },
    }
}
