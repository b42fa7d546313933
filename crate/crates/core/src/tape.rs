//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it executes. Nodes are appended in
//! execution order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep. Build a fresh tape per
//! training step; tapes are single-threaded and never shared.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ConcatCols(Vec<Var>),
    RotatePairs { x: Var, cos: Vec<T>, sin: Vec<T> },
    HardMask { logits: Var, pair_aligned: bool },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`, or `None` when no gradient reached it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Gradient w.r.t. `var`, with zeros for nodes the loss does not depend on.
    pub fn wrt(&self, var: Var) -> Result<Tensor<T>> {
        if var.tape != self.tape || var.index >= self.shapes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(self
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.index].clone())))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.index].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Same value as `x`, detached from everything upstream.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.nodes[x.index].value.clone();
        Ok(self.constant(value))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        self.check(x)?;
        let value = self.nodes[x.index].value.map(f);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, op, rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = f(&self.nodes[a.index].value, &self.nodes[b.index].value)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::MatMul(a, b), |x, y| x.matmul(y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x.add(y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x.sub(y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x.mul(y))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| if v < T::zero() { T::zero() } else { v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = Tensor::scalar(self.nodes[x.index].value.sum());
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = Tensor::scalar(self.nodes[x.index].value.mean());
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Mean(x), rg))
    }

    /// `x[m×n] + b[n]` with `b` repeated over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.binary(x, b, Op::AddRow(x, b), |x, b| x.add_row(b))
    }

    /// `x[m×n] ⊙ w[n]` with `w` repeated over rows.
    pub fn mul_row(&mut self, x: Var, w: Var) -> Result<Var> {
        self.binary(x, w, Op::MulRow(x, w), |x, w| x.mul_row(w))
    }

    /// Mean squared difference over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols: no inputs".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let (rows, _) = self.nodes[parts[0].index].value.matrix_dims("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = &self.nodes[p.index].value;
            let (r, c) = v.matrix_dims("concat_cols")?;
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].index].value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.index].value.row(r));
            }
        }
        let value = Tensor::new([rows, total], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Rotates each consecutive coordinate pair `(2k, 2k+1)` of row `r` by
    /// `angles[r]`.
    pub fn rotate_pairs(&mut self, x: Var, angles: &[f64]) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.index].value;
        let (rows, cols) = xv.matrix_dims("rotate_pairs")?;
        if cols % 2 != 0 {
            return Err(Error::Shape(format!(
                "rotate_pairs: width {cols} is odd"
            )));
        }
        if angles.len() != rows {
            return Err(Error::Shape(format!(
                "rotate_pairs: {} angles for {rows} rows",
                angles.len()
            )));
        }
        let cos: Vec<T> = angles.iter().map(|a| T::of(a.cos())).collect();
        let sin: Vec<T> = angles.iter().map(|a| T::of(a.sin())).collect();
        let mut data = xv.data().to_vec();
        for (r, row) in data.chunks_exact_mut(cols).enumerate() {
            rotate_row(row, cos[r], sin[r]);
        }
        let value = Tensor::new([rows, cols], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::RotatePairs { x, cos, sin }, rg))
    }

    /// Hard threshold mask `𝕀(σ(a) > τ)` whose backward pass is the
    /// sigmoid straight-through rule `∂a = g ⊙ σ'(a)`.
    ///
    /// With `pair_aligned`, the effective logit of pair `k` is the mean of
    /// `logits[2k]` and `logits[2k+1]`, and both coordinates share its bit.
    pub fn hard_mask(&mut self, logits: Var, tau: T, pair_aligned: bool) -> Result<Var> {
        self.check(logits)?;
        let value = hard_mask_values(&self.nodes[logits.index].value, tau, pair_aligned)?;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            Op::HardMask {
                logits,
                pair_aligned,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lv = &self.nodes[loss.index].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.index].value;
        let mut send = |v: Var, contrib: Tensor<T>| -> Result<()> {
            if !self.nodes[v.index].requires_grad {
                return Ok(());
            }
            match &mut grads[v.index] {
                Some(acc) => acc.accumulate(&contrib),
                slot @ None => {
                    *slot = Some(contrib);
                    Ok(())
                }
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.index].requires_grad {
                    send(*a, g.matmul_nt(val(*b))?)?;
                }
                if self.nodes[b.index].requires_grad {
                    send(*b, val(*a).matmul_tn(g)?)?;
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                send(*a, g.mul(val(*b))?)?;
                send(*b, g.mul(val(*a))?)?;
            }
            Op::Scale(x, s) => send(*x, g.scale(*s))?,
            Op::AddScalar(x) => send(*x, g.clone())?,
            Op::Relu(x) => send(
                *x,
                g.zip_map(val(*x), "relu", |g, x| if x > T::zero() { g } else { T::zero() })?,
            )?,
            Op::Sigmoid(x) => send(
                *x,
                g.zip_map(&node.value, "sigmoid", |g, y| g * y * (T::one() - y))?,
            )?,
            Op::Tanh(x) => send(
                *x,
                g.zip_map(&node.value, "tanh", |g, y| g * (T::one() - y * y))?,
            )?,
            Op::Square(x) => send(
                *x,
                g.zip_map(val(*x), "square", |g, x| g * (x + x))?,
            )?,
            Op::Sum(x) => send(*x, Tensor::full(val(*x).shape().to_vec(), g.item()))?,
            Op::Mean(x) => {
                let n = T::of(val(*x).len() as f64);
                send(*x, Tensor::full(val(*x).shape().to_vec(), g.item() / n))?
            }
            Op::AddRow(x, b) => {
                send(*x, g.clone())?;
                if self.nodes[b.index].requires_grad {
                    send(*b, g.sum_rows()?)?;
                }
            }
            Op::MulRow(x, w) => {
                if self.nodes[x.index].requires_grad {
                    send(*x, g.mul_row(val(*w))?)?;
                }
                if self.nodes[w.index].requires_grad {
                    send(*w, g.mul(val(*x))?.sum_rows()?)?;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.matrix_dims("concat_cols")?;
                let mut offset = 0;
                for &p in parts {
                    let (_, c) = val(p).matrix_dims("concat_cols")?;
                    if self.nodes[p.index].requires_grad {
                        let mut data = Vec::with_capacity(rows * c);
                        for r in g.data().chunks_exact(total) {
                            data.extend_from_slice(&r[offset..offset + c]);
                        }
                        send(p, Tensor::new([rows, c], data)?)?;
                    }
                    offset += c;
                }
            }
            Op::RotatePairs { x, cos, sin } => {
                let (_, cols) = g.matrix_dims("rotate_pairs")?;
                let mut data = g.data().to_vec();
                // Transpose of a rotation is the rotation by the negated angle.
                for (r, row) in data.chunks_exact_mut(cols).enumerate() {
                    rotate_row(row, cos[r], -sin[r]);
                }
                send(*x, Tensor::new(g.shape().to_vec(), data)?)?;
            }
            Op::HardMask {
                logits,
                pair_aligned,
            } => send(*logits, hard_mask_backward(val(*logits), g, *pair_aligned)?)?,
        }
        Ok(())
    }
}

#[inline]
fn rotate_row<T: Real>(row: &mut [T], c: T, s: T) {
    for pair in row.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = a * c - b * s;
        pair[1] = a * s + b * c;
    }
}

fn check_pairable<T: Real>(logits: &Tensor<T>) -> Result<()> {
    if !logits.len().is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "pair-aligned mask needs an even number of logits, got {}",
            logits.len()
        )));
    }
    Ok(())
}

/// Forward value of the hard mask.
pub(crate) fn hard_mask_values<T: Real>(
    logits: &Tensor<T>,
    tau: T,
    pair_aligned: bool,
) -> Result<Tensor<T>> {
    let bit = |a: T| if sigmoid(a) > tau { T::one() } else { T::zero() };
    let data: Vec<T> = if pair_aligned {
        check_pairable(logits)?;
        logits
            .data()
            .chunks_exact(2)
            .flat_map(|p| {
                let m = bit((p[0] + p[1]) * T::of(0.5));
                [m, m]
            })
            .collect()
    } else {
        logits.data().iter().map(|&a| bit(a)).collect()
    };
    Tensor::new(logits.shape().to_vec(), data)
}

fn hard_mask_backward<T: Real>(
    logits: &Tensor<T>,
    g: &Tensor<T>,
    pair_aligned: bool,
) -> Result<Tensor<T>> {
    let dsig = |a: T| {
        let s = sigmoid(a);
        s * (T::one() - s)
    };
    let data: Vec<T> = if pair_aligned {
        check_pairable(logits)?;
        let half = T::of(0.5);
        logits
            .data()
            .chunks_exact(2)
            .zip(g.data().chunks_exact(2))
            .flat_map(|(a, g)| {
                let d = (g[0] + g[1]) * dsig((a[0] + a[1]) * half) * half;
                [d, d]
            })
            .collect()
    } else {
        logits
            .data()
            .iter()
            .zip(g.data())
            .map(|(&a, &g)| g * dsig(a))
            .collect()
    };
    Tensor::new(logits.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_vec(vec![1., 2., 3.]));
        let l = t.sum(x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1., 1., 1.]);
    }

    #[test]
    fn mse_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_vec(vec![1., 3.]));
        let target = t.constant(Tensor::from_vec(vec![1., 1.]));
        let l = t.mse(x, target).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0., 2.]);
    }

    #[test]
    fn sigmoid_value_and_slope_at_zero() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_vec(vec![0.0]));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.5]);
        let l = t.sum(y).unwrap();
        assert_eq!(t.backward(l).unwrap().wrt(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn relu_clamps_negative() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::from_vec(vec![-3.0, 3.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 3.0]);
    }

    #[test]
    fn stop_gradient_blocks_only_its_input() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_vec(vec![1., 2., 3.]));
        let y = t.param(Tensor::from_vec(vec![4., 5., 6.]));
        let sx = t.stop_gradient(x).unwrap();
        assert_eq!(t.value(sx), t.value(x));
        let p = t.mul(sx, y).unwrap();
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.wrt(x).unwrap().data(), &[0., 0., 0.]);
        assert_eq!(g.wrt(y).unwrap().data(), &[1., 2., 3.]);
    }

    #[test]
    fn matmul_gradient_against_hand_value() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Tensor::new([1, 2], vec![1., 1.]).unwrap());
        let b = t.constant(Tensor::new([2, 1], vec![2., 3.]).unwrap());
        let c = t.matmul(a, b).unwrap();
        let l = t.sum(c).unwrap();
        assert_eq!(t.backward(l).unwrap().wrt(a).unwrap().data(), &[2., 3.]);
    }

    #[test]
    fn backward_rejects_vector_loss() {
        let mut t = Tape::<f32>::new();
        let x = t.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let mut t1 = Tape::<f32>::new();
        let mut t2 = Tape::<f32>::new();
        let x = t1.param(Tensor::scalar(1.0));
        assert!(matches!(t2.backward(x), Err(Error::ForeignVar)));
        assert!(matches!(t2.relu(x), Err(Error::ForeignVar)));
    }

    #[test]
    fn binary_ops_reject_broadcasting() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(Tensor::zeros([2, 2]));
        let b = t.constant(Tensor::zeros([2]));
        assert!(t.add(a, b).is_err());
        assert!(t.mul(a, b).is_err());
    }

    #[test]
    fn unreachable_parameter_gets_zero() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_vec(vec![1.0]));
        let unused = t.param(Tensor::from_vec(vec![5.0, 6.0]));
        let l = t.sum(x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let run = || {
            let mut t = Tape::<f32>::new();
            let a = t.param(Tensor::new([2, 3], vec![0.1, -0.7, 0.3, 1.1, 0.5, -0.2]).unwrap());
            let b = t.param(Tensor::new([3, 2], vec![0.9, 0.4, -0.3, 0.2, 0.8, -1.0]).unwrap());
            let c = t.matmul(a, b).unwrap();
            let s = t.sigmoid(c).unwrap();
            let l = t.mean(s).unwrap();
            let g = t.backward(l).unwrap();
            (t.value(l).clone(), g.wrt(a).unwrap(), g.wrt(b).unwrap())
        };
        let (l1, a1, b1) = run();
        let (l2, a2, b2) = run();
        assert_eq!(l1.data()[0].to_bits(), l2.data()[0].to_bits());
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }
}
