use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernels::{col2im, im2col, matmul, matmul_a_bt, matmul_at_b, ConvGeometry};
use super::spec::{infer_shapes, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Weight and bias of one parameterized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Per-layer parameter gradients, aligned with the network's layer list.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Scalar = f32> {
    pub layers: Vec<Option<Param<T>>>,
}

#[derive(Clone, Debug)]
enum Cache<T: Scalar> {
    Conv { cols: Vec<T>, geometry: ConvGeometry },
    Dense { input: Tensor<T> },
    Relu { output: Tensor<T> },
    MaxPool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Reshape { input_shape: Vec<usize> },
    Dropout { mask: Option<Vec<T>> },
    Identity,
}

/// What backward needs from one layer's forward call.
#[derive(Clone, Debug)]
pub struct TapeEntry<T: Scalar = f32> {
    pub layer: String,
    param_shape: Option<Vec<usize>>,
    cache: Cache<T>,
}

/// Result of [`Network::forward`].
#[derive(Clone, Debug)]
pub struct ForwardPass<T: Scalar = f32> {
    pub logits: Tensor<T>,
    pub tape: Vec<TapeEntry<T>>,
    /// Post-nonlinearity output of every prunable layer, in layer order.
    pub activations: Vec<(String, Tensor<T>)>,
}

/// Sequential layer stack with materialized parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<Param<T>>>,
    mode: Mode,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-scaled Gaussian weights (stddev √(2/fan_in))
    /// and zero biases, sampled layer by layer in order.
    pub fn new(specs: Vec<LayerSpec>, input_shape: &[usize], rng: &mut Rng) -> Result<Self> {
        let shapes = infer_shapes(&specs, input_shape)?;
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            params.push(match spec.weight_shape() {
                Some(ws) => {
                    let std = (2.0 / spec.fan_in().unwrap() as f64).sqrt();
                    Some(Param {
                        weight: Tensor::rand_normal(&ws, 0.0, std, rng)?,
                        bias: Tensor::zeros(&[ws[0]])?,
                    })
                }
                None => None,
            });
        }
        Ok(Self {
            specs,
            input_shape: input_shape.to_vec(),
            shapes,
            params,
            mode: Mode::Eval,
        })
    }

    /// Assembles a network from explicit parameters, validating every shape.
    pub fn from_params(specs: Vec<LayerSpec>, input_shape: &[usize], params: Vec<Option<Param<T>>>) -> Result<Self> {
        let shapes = infer_shapes(&specs, input_shape)?;
        let mut net = Self {
            specs,
            input_shape: input_shape.to_vec(),
            shapes,
            params: Vec::new(),
            mode: Mode::Eval,
        };
        net.set_params(params)?;
        Ok(net)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape of every layer.
    pub fn output_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Option<Param<T>>] {
        &self.params
    }

    pub fn param(&self, index: usize) -> Option<&Param<T>> {
        self.params.get(index).and_then(Option::as_ref)
    }

    pub fn param_mut(&mut self, index: usize) -> Option<&mut Param<T>> {
        self.params.get_mut(index).and_then(Option::as_mut)
    }

    /// Replaces all parameters; shapes must match the layer specs.
    pub fn set_params(&mut self, params: Vec<Option<Param<T>>>) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter slots for {} layers",
                params.len(),
                self.specs.len()
            )));
        }
        for (spec, p) in self.specs.iter().zip(&params) {
            match (spec.weight_shape(), p) {
                (None, None) => {}
                (Some(ws), Some(p)) if p.weight.shape() == ws.as_slice() && p.bias.shape() == [ws[0]] => {}
                (expected, got) => {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {}: expected weight {:?}, got {:?}",
                        spec.name,
                        expected,
                        got.as_ref().map(|p| p.weight.shape().to_vec())
                    )))
                }
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Indices of conv and dense layers.
    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.specs.len()).filter(|&i| self.specs[i].is_parameterized()).collect()
    }

    /// The last parameterized layer, whose output width is the class count.
    pub fn classifier_index(&self) -> Option<usize> {
        self.param_layers().last().copied()
    }

    /// Parameterized layers whose filters may be removed: all but the classifier.
    pub fn prunable_layers(&self) -> Vec<usize> {
        let mut layers = self.param_layers();
        layers.pop();
        layers
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(LayerSpec::param_count).sum()
    }

    /// Sets the rate of every dropout layer.
    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0,1)")));
        }
        for spec in &mut self.specs {
            if let LayerKind::Dropout { rate: r } = &mut spec.kind {
                *r = rate;
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            specs: self.specs.clone(),
            input_shape: self.input_shape.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Param {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
            mode: self.mode,
        }
    }

    /// Index whose output is the post-nonlinearity activation of layer `i`.
    fn activation_point(&self, i: usize) -> usize {
        match self.specs.get(i + 1) {
            Some(LayerSpec {
                kind: LayerKind::Relu, ..
            }) => i + 1,
            _ => i,
        }
    }

    /// Full forward pass recording the tape and prunable-layer activations.
    /// In train mode, dropout masks are drawn from `rng`.
    pub fn forward(&self, x: &Tensor<T>, rng: Option<&mut Rng>) -> Result<ForwardPass<T>> {
        self.run(x, self.mode, rng, true, true)
    }

    /// Forward pass for training: tape, no activation capture.
    pub fn forward_train(&self, x: &Tensor<T>, rng: Option<&mut Rng>) -> Result<(Tensor<T>, Vec<TapeEntry<T>>)> {
        let pass = self.run(x, self.mode, rng, true, false)?;
        Ok((pass.logits, pass.tape))
    }

    /// Eval-mode logits and prunable-layer activations, no tape.
    pub fn forward_activations(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<(String, Tensor<T>)>)> {
        let pass = self.run(x, Mode::Eval, None, false, true)?;
        Ok((pass.logits, pass.activations))
    }

    /// Eval-mode logits regardless of the network's mode.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for i in 0..self.specs.len() {
            h = self.layer_forward(i, &h, Mode::Eval, None, false)?.0;
        }
        Ok(h)
    }

    /// Applies layer `index` alone to a batch, with eval semantics.
    pub fn forward_layer(&self, index: usize, input: &Tensor<T>) -> Result<Tensor<T>> {
        if index >= self.specs.len() {
            return Err(Error::InvalidArgument(format!("no layer {index}")));
        }
        let expected = if index == 0 { &self.input_shape } else { &self.shapes[index - 1] };
        if input.rank() == 0 || &input.shape()[1..] != expected.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "layer {} expects [N, {:?}], got {:?}",
                self.specs[index].name,
                expected,
                input.shape()
            )));
        }
        Ok(self.layer_forward(index, input, Mode::Eval, None, false)?.0)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch(format!(
                "network expects [N, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, mode: Mode, mut rng: Option<&mut Rng>, record: bool, capture: bool) -> Result<ForwardPass<T>> {
        self.check_input(x)?;
        let capture_at: Vec<(usize, &str)> = if capture {
            self.prunable_layers()
                .into_iter()
                .map(|i| (self.activation_point(i), self.specs[i].name.as_str()))
                .collect()
        } else {
            Vec::new()
        };
        let mut tape = Vec::new();
        let mut activations = Vec::new();
        let mut h = x.clone();
        for i in 0..self.specs.len() {
            let (out, cache) = self.layer_forward(i, &h, mode, rng.as_deref_mut(), record)?;
            if record {
                tape.push(TapeEntry {
                    layer: self.specs[i].name.clone(),
                    param_shape: self.param(i).map(|p| p.weight.shape().to_vec()),
                    cache: cache.expect("recorded"),
                });
            }
            for &(point, name) in &capture_at {
                if point == i {
                    activations.push((name.to_string(), out.clone()));
                }
            }
            h = out;
        }
        Ok(ForwardPass {
            logits: h,
            tape,
            activations,
        })
    }

    fn layer_forward(
        &self,
        i: usize,
        x: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut Rng>,
        record: bool,
    ) -> Result<(Tensor<T>, Option<Cache<T>>)> {
        let n = x.shape()[0];
        let spec = &self.specs[i];
        let out_shape: Vec<usize> = std::iter::once(n).chain(self.shapes[i].iter().copied()).collect();
        match &spec.kind {
            LayerKind::Conv2d {
                out_channels,
                in_channels,
                kernel,
                stride,
                padding,
            } => {
                let p = self.param(i).expect("conv params");
                let geometry = ConvGeometry {
                    channels: *in_channels,
                    height: x.shape()[2],
                    width: x.shape()[3],
                    kernel_h: kernel[0],
                    kernel_w: kernel[1],
                    stride: *stride,
                    padding: *padding,
                };
                let (l, pos, k) = (geometry.patch_len(), geometry.positions(), *out_channels);
                let sample_in = x.len() / n;
                let mut cols = vec![T::ZERO; n * l * pos];
                let mut out = vec![T::ZERO; n * k * pos];
                let w = p.weight.data();
                let b = p.bias.data();
                cols.par_chunks_mut(l * pos)
                    .zip(out.par_chunks_mut(k * pos))
                    .enumerate()
                    .for_each(|(s, (c, o))| {
                        im2col(&x.data()[s * sample_in..(s + 1) * sample_in], &geometry, c);
                        matmul(w, c, k, l, pos, o);
                        for (row, &bias) in o.chunks_mut(pos).zip(b) {
                            row.iter_mut().for_each(|v| *v += bias);
                        }
                    });
                let cache = record.then_some(Cache::Conv { cols, geometry });
                Ok((Tensor::from_vec(&out_shape, out)?, cache))
            }
            LayerKind::Dense {
                out_features,
                in_features,
            } => {
                let p = self.param(i).expect("dense params");
                let mut out = vec![T::ZERO; n * out_features];
                matmul_a_bt(x.data(), p.weight.data(), n, *in_features, *out_features, &mut out);
                for row in out.chunks_mut(*out_features) {
                    row.iter_mut().zip(p.bias.data()).for_each(|(v, &b)| *v += b);
                }
                let cache = record.then(|| Cache::Dense { input: x.clone() });
                Ok((Tensor::from_vec(&out_shape, out)?, cache))
            }
            LayerKind::Relu => {
                let out = x.relu();
                let cache = record.then(|| Cache::Relu { output: out.clone() });
                Ok((out, cache))
            }
            LayerKind::MaxPool2d { window, stride } => {
                let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                let (oh, ow) = (self.shapes[i][1], self.shapes[i][2]);
                let mut out = vec![T::ZERO; n * c * oh * ow];
                let mut argmax = vec![0usize; out.len()];
                let data = x.data();
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for y in 0..oh {
                        for xo in 0..ow {
                            let mut best = base + y * stride * w + xo * stride;
                            for dy in 0..*window {
                                for dx in 0..*window {
                                    let idx = base + (y * stride + dy) * w + xo * stride + dx;
                                    if data[idx] > data[best] {
                                        best = idx;
                                    }
                                }
                            }
                            let o = (plane * oh + y) * ow + xo;
                            out[o] = data[best];
                            argmax[o] = best;
                        }
                    }
                }
                let cache = record.then(|| Cache::MaxPool {
                    argmax,
                    input_shape: x.shape().to_vec(),
                });
                Ok((Tensor::from_vec(&out_shape, out)?, cache))
            }
            LayerKind::Flatten => {
                let cache = record.then(|| Cache::Reshape {
                    input_shape: x.shape().to_vec(),
                });
                Ok((x.clone().reshape(&out_shape)?, cache))
            }
            LayerKind::Dropout { rate } => {
                if mode == Mode::Eval || *rate == 0.0 {
                    return Ok((x.clone(), record.then_some(Cache::Dropout { mask: None })));
                }
                let rng = rng.ok_or_else(|| {
                    Error::InvalidArgument(format!("train-mode dropout layer {} needs an rng", spec.name))
                })?;
                let keep = T::from_f64(1.0 / (1.0 - rate));
                let mask: Vec<T> = (0..x.len())
                    .map(|_| if rng.bernoulli(*rate) { T::ZERO } else { keep })
                    .collect();
                let out = Tensor::from_vec(x.shape(), x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect())?;
                Ok((out, record.then_some(Cache::Dropout { mask: Some(mask) })))
            }
            LayerKind::SoftmaxOutput => Ok((x.clone(), record.then_some(Cache::Identity))),
        }
    }

    /// Backpropagates `dlogits` through a tape recorded on these parameters.
    pub fn backward(&self, tape: &[TapeEntry<T>], dlogits: &Tensor<T>) -> Result<Gradients<T>> {
        if tape.len() != self.specs.len() {
            return Err(Error::TapeMismatch(format!(
                "tape has {} entries for {} layers",
                tape.len(),
                self.specs.len()
            )));
        }
        for (i, entry) in tape.iter().enumerate() {
            let current = self.param(i).map(|p| p.weight.shape().to_vec());
            if entry.layer != self.specs[i].name || entry.param_shape != current {
                return Err(Error::TapeMismatch(format!(
                    "layer {} changed since the forward pass",
                    self.specs[i].name
                )));
            }
        }
        let n = dlogits.shape()[0];
        let expected: Vec<usize> = std::iter::once(n).chain(self.shapes.last().unwrap().iter().copied()).collect();
        if dlogits.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "dlogits {:?}, expected {:?}",
                dlogits.shape(),
                expected
            )));
        }
        let mut grads: Vec<Option<Param<T>>> = vec![None; self.specs.len()];
        let mut dy = dlogits.clone();
        for i in (0..self.specs.len()).rev() {
            let need_input_grad = i > 0;
            let (dx, g) = self.layer_backward(i, &tape[i].cache, &dy, need_input_grad)?;
            grads[i] = g;
            match dx {
                Some(dx) => dy = dx,
                None => break,
            }
        }
        Ok(Gradients { layers: grads })
    }

    fn layer_backward(
        &self,
        i: usize,
        cache: &Cache<T>,
        dy: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Option<Param<T>>)> {
        let n = dy.shape()[0];
        let mismatch = || Error::TapeMismatch(format!("cache kind does not match layer {}", self.specs[i].name));
        match (&self.specs[i].kind, cache) {
            (
                LayerKind::Conv2d {
                    out_channels,
                    in_channels,
                    ..
                },
                Cache::Conv { cols, geometry },
            ) => {
                let p = self.param(i).expect("conv params");
                let (l, pos, k) = (geometry.patch_len(), geometry.positions(), *out_channels);
                let sample_in = in_channels * geometry.height * geometry.width;
                let w = p.weight.data();
                let per_sample: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = (0..n)
                    .into_par_iter()
                    .map(|s| {
                        let dys = &dy.data()[s * k * pos..(s + 1) * k * pos];
                        let c = &cols[s * l * pos..(s + 1) * l * pos];
                        let mut dw = vec![T::ZERO; k * l];
                        matmul_a_bt(dys, c, k, pos, l, &mut dw);
                        let db: Vec<T> = dys.chunks(pos).map(|row| row.iter().copied().sum()).collect();
                        let dx = need_input_grad.then(|| {
                            let mut dcols = vec![T::ZERO; l * pos];
                            matmul_at_b(w, dys, k, l, pos, &mut dcols);
                            let mut img = vec![T::ZERO; sample_in];
                            col2im(&dcols, geometry, &mut img);
                            img
                        });
                        (dw, db, dx)
                    })
                    .collect();
                let mut dw = vec![T::ZERO; k * l];
                let mut db = vec![T::ZERO; k];
                let mut dx = need_input_grad.then(|| Vec::with_capacity(n * sample_in));
                for (sdw, sdb, sdx) in per_sample {
                    dw.iter_mut().zip(&sdw).for_each(|(a, &b)| *a += b);
                    db.iter_mut().zip(&sdb).for_each(|(a, &b)| *a += b);
                    if let (Some(dx), Some(sdx)) = (dx.as_mut(), sdx) {
                        dx.extend(sdx);
                    }
                }
                let grad = Param {
                    weight: Tensor::from_vec(p.weight.shape(), dw)?,
                    bias: Tensor::from_vec(&[k], db)?,
                };
                let dx = match dx {
                    Some(v) => Some(Tensor::from_vec(
                        &[n, *in_channels, geometry.height, geometry.width],
                        v,
                    )?),
                    None => None,
                };
                Ok((dx, Some(grad)))
            }
            (
                LayerKind::Dense {
                    out_features,
                    in_features,
                },
                Cache::Dense { input },
            ) => {
                let p = self.param(i).expect("dense params");
                let mut dw = vec![T::ZERO; out_features * in_features];
                matmul_at_b(dy.data(), input.data(), n, *out_features, *in_features, &mut dw);
                let mut db = vec![T::ZERO; *out_features];
                for row in dy.data().chunks(*out_features) {
                    db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                let dx = if need_input_grad {
                    let mut dx = vec![T::ZERO; n * in_features];
                    matmul(dy.data(), p.weight.data(), n, *out_features, *in_features, &mut dx);
                    Some(Tensor::from_vec(input.shape(), dx)?)
                } else {
                    None
                };
                Ok((
                    dx,
                    Some(Param {
                        weight: Tensor::from_vec(p.weight.shape(), dw)?,
                        bias: Tensor::from_vec(&[*out_features], db)?,
                    }),
                ))
            }
            (LayerKind::Relu, Cache::Relu { output }) => {
                let dx = dy
                    .data()
                    .iter()
                    .zip(output.data())
                    .map(|(&g, &o)| if o > T::ZERO { g } else { T::ZERO })
                    .collect();
                Ok((Some(Tensor::from_vec(dy.shape(), dx)?), None))
            }
            (LayerKind::MaxPool2d { .. }, Cache::MaxPool { argmax, input_shape }) => {
                let mut dx = vec![T::ZERO; input_shape.iter().product()];
                for (&g, &src) in dy.data().iter().zip(argmax) {
                    dx[src] += g;
                }
                Ok((Some(Tensor::from_vec(input_shape, dx)?), None))
            }
            (LayerKind::Flatten, Cache::Reshape { input_shape }) => Ok((Some(dy.clone().reshape(input_shape)?), None)),
            (LayerKind::Dropout { .. }, Cache::Dropout { mask }) => match mask {
                None => Ok((Some(dy.clone()), None)),
                Some(mask) => {
                    let dx = dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    Ok((Some(Tensor::from_vec(dy.shape(), dx)?), None))
                }
            },
            (LayerKind::SoftmaxOutput, Cache::Identity) => Ok((Some(dy.clone()), None)),
            _ => Err(mismatch()),
        }
    }
}
