//! Dense layers, the encoder/decoder model and its trainable state.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{LatentOperator, OperatorKind};
use crate::rng::{rng_for, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{sigmoid, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

/// `y = x·W + b` with `W` stored `[in × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| T::of(rng.random_range(-limit..limit)))
            .collect();
        Dense {
            weight: Tensor::new([inputs, outputs], data).expect("glorot shape"),
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Multi-layer perceptron: ReLU between layers, `output` after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
    pub output: Activation,
}

/// An [`Mlp`] whose parameters are registered on a tape.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
    pub output: Activation,
}

impl<T: Real> Mlp<T> {
    /// Layers mapping `widths[0] → widths[1] → … → widths[n]`.
    pub fn new(widths: &[usize], output: Activation, rng: &mut Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Mlp { layers, output }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
            output: self.output,
        }
    }

    /// Tape-free forward pass.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, w) = x.matrix_dims("mlp")?;
        if w != self.input_width() {
            return Err(Error::ShapeMismatch {
                op: "mlp input",
                lhs: x.shape().to_vec(),
                rhs: self.layers[0].weight.shape().to_vec(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.weight)?.add_row(&l.bias)?;
            let act = if i == last { self.output } else { Activation::Relu };
            h = match act {
                Activation::Linear => h,
                Activation::Relu => h.map(|v| if v < T::zero() { T::zero() } else { v }),
                Activation::Sigmoid => h.map(sigmoid),
            };
        }
        Ok(h)
    }

    fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

impl MlpVars {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            let act = if i == last { self.output } else { Activation::Relu };
            h = match act {
                Activation::Linear => h,
                Activation::Relu => tape.relu(h)?,
                Activation::Sigmoid => tape.sigmoid(h)?,
            };
        }
        Ok(h)
    }

    fn params(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Shape of a model; everything needed to rebuild it from a parameter list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub operator: OperatorKind,
    pub operator_hidden: Vec<usize>,
    pub pair_aligned: bool,
}

impl Architecture {
    pub fn new(height: usize, width: usize, latent_dim: usize, hidden: Vec<usize>) -> Self {
        Architecture {
            height,
            width,
            latent_dim,
            hidden,
            operator: OperatorKind::Geometric,
            operator_hidden: vec![64],
            pair_aligned: true,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.pixels()];
        w.extend(&self.hidden);
        w.push(self.latent_dim);
        w
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        let mut w = self.encoder_widths();
        w.reverse();
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.pixels() == 0 {
            return Err(Error::InvalidParameter(
                "latent and image dimensions must be positive".into(),
            ));
        }
        if self.hidden.contains(&0) || self.operator_hidden.contains(&0) {
            return Err(Error::InvalidParameter("hidden widths must be positive".into()));
        }
        if self.pair_aligned && !self.latent_dim.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "pair-aligned masking needs an even latent dimension, got {}",
                self.latent_dim
            )));
        }
        if self.operator == OperatorKind::Geometric && !self.latent_dim.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "the geometric operator rotates coordinate pairs; latent dimension {} is odd",
                self.latent_dim
            )));
        }
        if self.operator == OperatorKind::Geometric && !self.pair_aligned {
            return Err(Error::InvalidParameter(
                "the geometric operator requires a pair-aligned mask".into(),
            ));
        }
        Ok(())
    }
}

/// Encoder φ, decoder θ, mask logits α and the latent operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub arch: Architecture,
    pub encoder: Mlp<T>,
    pub decoder: Mlp<T>,
    pub mask_logits: Tensor<T>,
    pub operator: LatentOperator<T>,
}

/// A [`Model`] bound to a tape for one training step.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: MlpVars,
    pub decoder: MlpVars,
    pub mask_logits: Var,
    pub operator: Option<MlpVars>,
}

impl ModelVars {
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.encoder.forward(tape, x)
    }

    pub fn decode<T: Real>(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        self.decoder.forward(tape, z)
    }

    /// Parameter nodes in [`Model::named_params`] order.
    pub fn params(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.encoder.params().chain(self.decoder.params()).collect();
        out.push(self.mask_logits);
        if let Some(op) = &self.operator {
            out.extend(op.params());
        }
        out
    }
}

impl<T: Real> Model<T> {
    /// Fresh model: Glorot weights, zero biases, zero mask logits.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_for(seed, "model-init");
        let encoder = Mlp::new(&arch.encoder_widths(), Activation::Linear, &mut rng);
        let decoder = Mlp::new(&arch.decoder_widths(), Activation::Sigmoid, &mut rng);
        let operator = match arch.operator {
            OperatorKind::Geometric => LatentOperator::Geometric,
            OperatorKind::Learned => {
                let mut w = vec![arch.latent_dim + 2];
                w.extend(&arch.operator_hidden);
                w.push(arch.latent_dim);
                LatentOperator::Learned(Mlp::new(&w, Activation::Linear, &mut rng))
            }
        };
        Ok(Model {
            mask_logits: Tensor::zeros([arch.latent_dim]),
            arch,
            encoder,
            decoder,
            operator,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ModelVars {
        ModelVars {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
            mask_logits: tape.param(self.mask_logits.clone()),
            operator: match &self.operator {
                LatentOperator::Geometric => None,
                LatentOperator::Learned(mlp) => Some(mlp.bind(tape)),
            },
        }
    }

    /// `z = E_φ(x)` for a `[batch × pixels]` input.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, w) = x.matrix_dims("encode")?;
        if w != self.arch.pixels() {
            return Err(Error::Shape(format!(
                "encode: model expects {} pixels per row, got {w}",
                self.arch.pixels()
            )));
        }
        self.encoder.forward(x)
    }

    /// `x̂ = D_θ(z)` for a `[batch × d]` latent.
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, w) = z.matrix_dims("decode")?;
        if w != self.arch.latent_dim {
            return Err(Error::Shape(format!(
                "decode: model expects latent width {}, got {w}",
                self.arch.latent_dim
            )));
        }
        self.decoder.forward(z)
    }

    /// All trainable tensors with stable names.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, mlp) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            out.extend(mlp_names(prefix, mlp.layers.len()).into_iter().zip(mlp.params()));
        }
        out.push(("mask.logits".to_string(), &self.mask_logits));
        if let LatentOperator::Learned(mlp) = &self.operator {
            out.extend(mlp_names("operator", mlp.layers.len()).into_iter().zip(mlp.params()));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self
            .encoder
            .params_mut()
            .chain(self.decoder.params_mut())
            .collect();
        out.push(&mut self.mask_logits);
        if let LatentOperator::Learned(mlp) = &mut self.operator {
            out.extend(mlp.params_mut());
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.all_finite())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let cast_mlp = |m: &Mlp<T>| Mlp {
            layers: m
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            output: m.output,
        };
        Model {
            arch: self.arch.clone(),
            encoder: cast_mlp(&self.encoder),
            decoder: cast_mlp(&self.decoder),
            mask_logits: self.mask_logits.cast(),
            operator: match &self.operator {
                LatentOperator::Geometric => LatentOperator::Geometric,
                LatentOperator::Learned(m) => LatentOperator::Learned(cast_mlp(m)),
            },
        }
    }
}

fn mlp_names(prefix: &str, layers: usize) -> Vec<String> {
    (0..layers)
        .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
        .collect()
}

/// Adam with bias correction. Moments are allocated on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Real> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update. Nothing is modified if any gradient is misshapen or
    /// non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::Shape("adam: moment shapes do not match parameters".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let c1 = T::of(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = T::of(1.0 / (1.0 - self.beta2.powi(t)));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));

        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let mh = *m * c1;
                let vh = *v * c2;
                *w = *w - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
