//! SO(2) group elements and the selective latent action
//! `Φ_g(z) = [Φ_g^v(z_v); z_i]`.
//!
//! The geometric operator rotates consecutive latent pairs `(2k, 2k+1)` by the
//! group angle. The learned operator is an MLP on `[z_v ; cos θ ; sin θ]`.
//! Both re-apply the mask to their output so invariant slots stay zero.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::ald::is_pair_aligned;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpVars};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Planar rotation by `angle ∈ [0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    angle: f64,
}

impl GroupElement {
    pub fn new(angle: f64) -> Self {
        let mut a = angle.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs.
        if a >= TAU {
            a = 0.0;
        }
        GroupElement { angle: a }
    }

    pub fn identity() -> Self {
        GroupElement { angle: 0.0 }
    }

    pub fn angle(self) -> f64 {
        self.angle
    }

    pub fn compose(self, other: Self) -> Self {
        Self::new(self.angle + other.angle)
    }

    pub fn invert(self) -> Self {
        Self::new(-self.angle)
    }

    /// Angular distance to `other` on the circle.
    pub fn distance(self, other: Self) -> f64 {
        let d = (self.angle - other.angle).rem_euclid(TAU);
        d.min(TAU - d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Geometric,
    Learned,
}

impl std::str::FromStr for OperatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "geometric" => Ok(OperatorKind::Geometric),
            "learned" => Ok(OperatorKind::Learned),
            other => Err(format!("expected `geometric` or `learned`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OperatorKind::Geometric => "geometric",
            OperatorKind::Learned => "learned",
        })
    }
}

/// `Φ_g^v`.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentOperator<T> {
    Geometric,
    Learned(Mlp<T>),
}

impl<T: Real> LatentOperator<T> {
    pub fn kind(&self) -> OperatorKind {
        match self {
            LatentOperator::Geometric => OperatorKind::Geometric,
            LatentOperator::Learned(_) => OperatorKind::Learned,
        }
    }

    /// Tape-free `Φ_g^v(z_v)`, one group element per row.
    pub fn apply(&self, z_v: &Tensor<T>, g: &[GroupElement], mask: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            LatentOperator::Geometric => rotate_variant(z_v, g, mask),
            LatentOperator::Learned(mlp) => {
                let (rows, d) = check_batch(z_v, g, mask)?;
                if mlp.output_width() != d || mlp.input_width() != d + 2 {
                    return Err(Error::Shape(format!(
                        "learned operator maps {} → {}, latent width is {d}",
                        mlp.input_width(),
                        mlp.output_width()
                    )));
                }
                let mut data = Vec::with_capacity(rows * (d + 2));
                for (r, e) in g.iter().enumerate() {
                    data.extend_from_slice(z_v.row(r));
                    data.push(T::of(e.angle.cos()));
                    data.push(T::of(e.angle.sin()));
                }
                let input = Tensor::new([rows, d + 2], data)?;
                mlp.forward(&input)?.mul_row(mask)
            }
        }
    }
}

fn check_batch<T: Real>(z_v: &Tensor<T>, g: &[GroupElement], mask: &Tensor<T>) -> Result<(usize, usize)> {
    let (rows, d) = z_v.matrix_dims("group action")?;
    if g.len() != rows {
        return Err(Error::Shape(format!(
            "group action: {} elements for {rows} rows",
            g.len()
        )));
    }
    if mask.shape() != [d] {
        return Err(Error::Shape(format!(
            "group action: mask shape {:?} for latent width {d}",
            mask.shape()
        )));
    }
    Ok((rows, d))
}

fn check_geometric<T: Real>(d: usize, mask: &Tensor<T>) -> Result<()> {
    if !d.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "geometric operator needs an even latent width, got {d}"
        )));
    }
    if !is_pair_aligned(mask) {
        return Err(Error::InvalidParameter(
            "geometric operator needs a pair-aligned mask".into(),
        ));
    }
    Ok(())
}

/// Geometric `Φ_g^v` without a tape.
pub fn rotate_variant<T: Real>(z_v: &Tensor<T>, g: &[GroupElement], mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, d) = check_batch(z_v, g, mask)?;
    check_geometric(d, mask)?;
    let mut data = z_v.data().to_vec();
    for (row, e) in data.chunks_exact_mut(d).zip(g) {
        let (c, s) = (T::of(e.angle.cos()), T::of(e.angle.sin()));
        for pair in row.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a * c - b * s;
            pair[1] = a * s + b * c;
        }
    }
    Tensor::new(z_v.shape().to_vec(), data)?.mul_row(mask)
}

/// Geometric `Φ_g^v` on a tape. A pair-aligned mask zeroes whole pairs and a
/// rotation maps a zero pair to a zero pair, so the re-mask would not change
/// any value; leaving it off the graph keeps the first-order path from `M`
/// through `M ⊙ z` to the rotated output, which a second factor of the hard
/// mask would cancel at `M = 0`.
pub fn apply_geometric<T: Real>(
    tape: &mut Tape<T>,
    z_v: Var,
    g: &[GroupElement],
    mask: Var,
) -> Result<Var> {
    check_batch(tape.value(z_v), g, tape.value(mask))?;
    let (_, d) = tape.value(z_v).matrix_dims("apply_geometric")?;
    check_geometric(d, tape.value(mask))?;
    let angles: Vec<f64> = g.iter().map(|e| e.angle).collect();
    tape.rotate_pairs(z_v, &angles)
}

/// Learned `Φ_g^v` on a tape: `MLP([z_v ; cos θ ; sin θ]) ⊙ M`.
pub fn apply_learned<T: Real>(
    tape: &mut Tape<T>,
    op: &MlpVars,
    z_v: Var,
    g: &[GroupElement],
    mask: Var,
) -> Result<Var> {
    let (rows, _) = check_batch(tape.value(z_v), g, tape.value(mask))?;
    let cos = Tensor::new([rows, 1], g.iter().map(|e| T::of(e.angle.cos())).collect())?;
    let sin = Tensor::new([rows, 1], g.iter().map(|e| T::of(e.angle.sin())).collect())?;
    let cos = tape.constant(cos);
    let sin = tape.constant(sin);
    let input = tape.concat_cols(&[z_v, cos, sin])?;
    let out = op.forward(tape, input)?;
    tape.mul_row(out, mask)
}

const OVERLAP_TOL: f64 = 1e-7;

fn check_disjoint<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "recombine",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if let Some(i) = a
        .data()
        .iter()
        .zip(b.data())
        .position(|(&x, &y)| x.as_f64().abs() > OVERLAP_TOL && y.as_f64().abs() > OVERLAP_TOL)
    {
        return Err(Error::Contract(format!(
            "variant and invariant parts overlap at element {i}"
        )));
    }
    Ok(())
}

/// `[z_v^g ; z_i]` as a sum over disjoint supports.
pub fn recombine<T: Real>(z_v_g: &Tensor<T>, z_i: &Tensor<T>) -> Result<Tensor<T>> {
    check_disjoint(z_v_g, z_i)?;
    z_v_g.add(z_i)
}

pub fn recombine_on_tape<T: Real>(tape: &mut Tape<T>, z_v_g: Var, z_i: Var) -> Result<Var> {
    check_disjoint(tape.value(z_v_g), tape.value(z_i))?;
    tape.add(z_v_g, z_i)
}

/// RMS of `Φ_{g1∘g2}(z_v) − Φ_{g1}(Φ_{g2}(z_v))` over a batch; zero up to
/// rounding for the geometric operator.
pub fn composition_residual<T: Real>(
    op: &LatentOperator<T>,
    z_v: &Tensor<T>,
    g1: GroupElement,
    g2: GroupElement,
    mask: &Tensor<T>,
) -> Result<f64> {
    let rows = z_v.matrix_dims("composition_residual")?.0;
    let direct = op.apply(z_v, &vec![g1.compose(g2); rows], mask)?;
    let inner = op.apply(z_v, &vec![g2; rows], mask)?;
    let chained = op.apply(&inner, &vec![g1; rows], mask)?;
    let diff = direct.sub(&chained)?;
    Ok((diff.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / diff.len() as f64).sqrt())
}
