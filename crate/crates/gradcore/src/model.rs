//! Small convolutional classifier with an EMA shadow of its parameters.

use crate::error::{GradError, Result};
use crate::graph::{BatchStats, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One entry of an [`Architecture`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv3x3 { in_channels: usize, out_channels: usize },
    BatchNorm { channels: usize },
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Linear { in_features: usize, out_features: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// `[channels, height, width]` of one input image.
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
}

impl Architecture {
    /// Three conv→norm→ReLU blocks (32/64/128 channels), 2×2 max pooling after
    /// the first two, global average pooling and an affine head.
    pub fn desk_cnn(input_shape: [usize; 3], classes: usize) -> Self {
        Self::conv_stack(input_shape, &[32, 64, 128], classes)
    }

    /// Same topology as [`Architecture::desk_cnn`] with custom block widths.
    pub fn conv_stack(input_shape: [usize; 3], widths: &[usize], classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut ch = input_shape[0];
        let (mut h, mut w) = (input_shape[1], input_shape[2]);
        for (i, &width) in widths.iter().enumerate() {
            layers.push(Layer::Conv3x3 {
                in_channels: ch,
                out_channels: width,
            });
            layers.push(Layer::BatchNorm { channels: width });
            layers.push(Layer::Relu);
            if i + 1 < widths.len() && h >= 4 && w >= 4 {
                layers.push(Layer::MaxPool2);
                h /= 2;
                w /= 2;
            }
            ch = width;
        }
        layers.push(Layer::GlobalAvgPool);
        layers.push(Layer::Linear {
            in_features: ch,
            out_features: classes,
        });
        Self { input_shape, layers }
    }

    pub fn classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Linear { out_features, .. } => Some(*out_features),
                _ => None,
            })
            .unwrap_or(0)
    }
}

/// Forward mode of normalization layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Frozen running statistics.
    Eval,
}

/// Which weight set drives a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weights {
    Live,
    Ema,
}

/// Output of [`Model::forward`].
pub struct Forward<T> {
    pub logits: Var,
    /// Statistics of each normalization layer in train mode, in layer order.
    pub batch_stats: Vec<BatchStats<T>>,
}

/// Named parameters, their EMA shadow, and normalization running statistics.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    arch: Architecture,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    ema: Vec<Tensor<T>>,
    buffer_names: Vec<String>,
    buffers: Vec<Tensor<T>>,
    bn_momentum: T,
    bn_eps: T,
}

// Parameter slots consumed by each layer, in order.
fn layer_param_count(layer: &Layer) -> usize {
    match layer {
        Layer::Conv3x3 { .. } => 1,
        Layer::BatchNorm { .. } | Layer::Linear { .. } => 2,
        _ => 0,
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl<T: Scalar> Model<T> {
    /// Kaiming-normal conv kernels, unit/zero normalization affine, Xavier-uniform head.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut buffer_names = Vec::new();
        let mut buffers = Vec::new();
        let (mut conv_i, mut bn_i, mut fc_i) = (0, 0, 0);
        for layer in &arch.layers {
            match *layer {
                Layer::Conv3x3 {
                    in_channels,
                    out_channels,
                } => {
                    conv_i += 1;
                    let fan_in = (in_channels * 9) as f64;
                    let std = (2.0 / fan_in).sqrt();
                    let data = (0..out_channels * in_channels * 9)
                        .map(|_| T::from_f64(normal(&mut rng) * std))
                        .collect();
                    names.push(format!("conv{conv_i}.weight"));
                    params.push(Tensor::from_vec(&[out_channels, in_channels, 3, 3], data).unwrap());
                }
                Layer::BatchNorm { channels } => {
                    bn_i += 1;
                    names.push(format!("bn{bn_i}.gamma"));
                    params.push(Tensor::full(&[channels], T::one()));
                    names.push(format!("bn{bn_i}.beta"));
                    params.push(Tensor::zeros(&[channels]));
                    buffer_names.push(format!("bn{bn_i}.running_mean"));
                    buffers.push(Tensor::zeros(&[channels]));
                    buffer_names.push(format!("bn{bn_i}.running_var"));
                    buffers.push(Tensor::full(&[channels], T::one()));
                }
                Layer::Linear {
                    in_features,
                    out_features,
                } => {
                    fc_i += 1;
                    let bound = (6.0 / (in_features + out_features) as f64).sqrt();
                    let data = (0..out_features * in_features)
                        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                        .collect();
                    let prefix = if fc_i == 1 { "fc".to_string() } else { format!("fc{fc_i}") };
                    names.push(format!("{prefix}.weight"));
                    params.push(Tensor::from_vec(&[out_features, in_features], data).unwrap());
                    names.push(format!("{prefix}.bias"));
                    params.push(Tensor::zeros(&[out_features]));
                }
                Layer::Relu | Layer::MaxPool2 | Layer::GlobalAvgPool => {}
            }
        }
        let ema = params.clone();
        Self {
            arch,
            names,
            params,
            ema,
            buffer_names,
            buffers,
            bn_momentum: T::from_f64(0.9),
            bn_eps: T::from_f64(1e-5),
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn ema_params(&self) -> &[Tensor<T>] {
        &self.ema
    }

    pub fn ema_params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.ema
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn buffers(&self) -> &[Tensor<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.buffers
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.param_index(name)?;
        Some(&mut self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Copy of the model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            ema: self.ema.iter().map(|p| p.cast()).collect(),
            buffer_names: self.buffer_names.clone(),
            buffers: self.buffers.iter().map(|p| p.cast()).collect(),
            bn_momentum: U::from_f64(self.bn_momentum.as_f64()),
            bn_eps: U::from_f64(self.bn_eps.as_f64()),
        }
    }

    /// Runs the architecture on `input` (`[N, C, H, W]`), recording into `graph`.
    pub fn forward(&self, graph: &mut Graph<T>, input: Var, mode: Mode, weights: Weights) -> Result<Forward<T>> {
        let [c, h, w] = self.arch.input_shape;
        let shape = graph.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(GradError::ShapeMismatch {
                layer: "input".into(),
                expected: vec![shape.first().copied().unwrap_or(0), c, h, w],
                actual: shape,
            });
        }
        let set = match weights {
            Weights::Live => &self.params,
            Weights::Ema => &self.ema,
        };
        let mut slot = 0;
        let mut bn_i = 0;
        let mut x = input;
        let mut batch_stats = Vec::new();
        for (li, layer) in self.arch.layers.iter().enumerate() {
            let channels = graph.value(x).shape().get(1).copied().unwrap_or(0);
            let name = || {
                self.names
                    .get(slot)
                    .map(|n| n.split('.').next().unwrap_or("").to_string())
                    .unwrap_or_else(|| format!("layer{li}"))
            };
            let check = |expected: usize| -> Result<()> {
                if channels != expected {
                    Err(GradError::ShapeMismatch {
                        layer: name(),
                        expected: vec![expected],
                        actual: vec![channels],
                    })
                } else {
                    Ok(())
                }
            };
            x = match *layer {
                Layer::Conv3x3 { in_channels, .. } => {
                    check(in_channels)?;
                    let wv = graph.param(slot, &set[slot]);
                    graph.conv3x3(x, wv)?
                }
                Layer::BatchNorm { channels: ch } => {
                    check(ch)?;
                    let gv = graph.param(slot, &set[slot]);
                    let bv = graph.param(slot + 1, &set[slot + 1]);
                    let out = match mode {
                        Mode::Train => {
                            let (out, stats) = graph.batch_norm_train(x, gv, bv, self.bn_eps)?;
                            batch_stats.push(stats);
                            out
                        }
                        Mode::Eval => graph.batch_norm_eval(
                            x,
                            gv,
                            bv,
                            self.buffers[2 * bn_i].data(),
                            self.buffers[2 * bn_i + 1].data(),
                            self.bn_eps,
                        )?,
                    };
                    bn_i += 1;
                    out
                }
                Layer::Relu => graph.relu(x),
                Layer::MaxPool2 => graph.max_pool2(x)?,
                Layer::GlobalAvgPool => graph.global_avg_pool(x)?,
                Layer::Linear { in_features, .. } => {
                    check(in_features)?;
                    let wv = graph.param(slot, &set[slot]);
                    let bv = graph.param(slot + 1, &set[slot + 1]);
                    graph.linear(x, wv, bv)?
                }
            };
            slot += layer_param_count(layer);
        }
        Ok(Forward { logits: x, batch_stats })
    }

    /// Eval-mode logits without recording a graph.
    pub fn predict(&self, batch: &Tensor<T>, weights: Weights) -> Result<Tensor<T>> {
        let mut graph = Graph::no_grad();
        let x = graph.input(batch.clone());
        let out = self.forward(&mut graph, x, Mode::Eval, weights)?;
        Ok(graph.value(out.logits).clone())
    }

    /// Folds train-mode batch statistics into the running estimates
    /// (`running ← m·running + (1−m)·batch`, m = 0.9, unbiased variance).
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        if stats.len() * 2 != self.buffers.len() {
            return Err(GradError::Incongruent(format!(
                "{} batch statistics for {} normalization layers",
                stats.len(),
                self.buffers.len() / 2
            )));
        }
        let m = self.bn_momentum;
        for (i, s) in stats.iter().enumerate() {
            let unbias = if s.count > 1 {
                T::from_usize(s.count) / T::from_usize(s.count - 1)
            } else {
                T::one()
            };
            for (r, &b) in self.buffers[2 * i].data_mut().iter_mut().zip(&s.mean) {
                *r = m * *r + (T::one() - m) * b;
            }
            for (r, &b) in self.buffers[2 * i + 1].data_mut().iter_mut().zip(&s.var) {
                *r = m * *r + (T::one() - m) * b * unbias;
            }
        }
        Ok(())
    }

    /// Backpropagates `loss` and stores a gradient on every parameter; those
    /// unreachable from the loss receive zeros.
    pub fn backward(&mut self, graph: &Graph<T>, loss: Var) -> Result<()> {
        let grads = graph.backward(loss)?;
        let mut fresh: Vec<Option<Vec<T>>> = vec![None; self.params.len()];
        for (slot, g) in grads.param_grads() {
            match &mut fresh[slot] {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &d)| *a = *a + d),
                None => fresh[slot] = Some(g.to_vec()),
            }
        }
        for (p, g) in self.params.iter_mut().zip(fresh) {
            let g = g.unwrap_or_else(|| vec![T::zero(); p.numel()]);
            p.set_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::clear_grad);
    }

    /// `ema ← decay·ema + (1−decay)·w`, elementwise.
    pub fn ema_update(&mut self, decay: T) -> Result<()> {
        if !(decay >= T::zero() && decay < T::one()) {
            return Err(GradError::InvalidHyperparameter(format!("ema decay {decay} outside [0, 1)")));
        }
        for (e, p) in self.ema.iter_mut().zip(&self.params) {
            if e.shape() != p.shape() {
                return Err(GradError::Incongruent("ema shadow shape".into()));
            }
            let keep = T::one() - decay;
            for (ev, &pv) in e.data_mut().iter_mut().zip(p.data()) {
                *ev = decay * *ev + keep * pv;
            }
        }
        Ok(())
    }

    /// Copies the live weights into the EMA shadow.
    pub fn reset_ema(&mut self) {
        self.ema = self.params.iter().map(|p| {
            let mut c = p.clone();
            c.clear_grad();
            c
        }).collect();
    }

    /// Errors unless both models share architecture and tensor shapes.
    pub fn check_congruent(&self, other: &Model<T>) -> Result<()> {
        if self.arch != other.arch || self.names != other.names {
            return Err(GradError::Incongruent("architectures differ".into()));
        }
        let pairs = self
            .params
            .iter()
            .zip(&other.params)
            .chain(self.ema.iter().zip(&other.ema))
            .chain(self.buffers.iter().zip(&other.buffers));
        for (a, b) in pairs {
            if a.shape() != b.shape() {
                return Err(GradError::Incongruent(format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        Ok(())
    }

    /// All named tensors: parameters, normalization buffers, then EMA shadows
    /// under `<name>.ema`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        out.extend(self.names.iter().cloned().zip(self.params.iter()));
        out.extend(self.buffer_names.iter().cloned().zip(self.buffers.iter()));
        out.extend(self.names.iter().map(|n| format!("{n}.ema")).zip(self.ema.iter()));
        out
    }

    /// Mutable counterpart of [`Model::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        out.extend(self.names.iter().cloned().zip(self.params.iter_mut()));
        out.extend(self.buffer_names.iter().cloned().zip(self.buffers.iter_mut()));
        out.extend(self.names.iter().map(|n| format!("{n}.ema")).zip(self.ema.iter_mut()));
        out
    }
}
