//! Model families: logistic regression, the one-hidden-layer MLP, and the
//! VGG-style binary CNN, all ending in a single logit.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::{NodeId, Padding, Tape, Tensor};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense { inputs: usize, outputs: usize },
    Conv3x3 { in_channels: usize, out_channels: usize },
    MaxPool2,
    Relu,
    Dropout { rate: f64 },
    Flatten,
}

impl Layer {
    fn describe(&self) -> String {
        match self {
            Layer::Dense { inputs, outputs } => format!("dense({inputs} -> {outputs})"),
            Layer::Conv3x3 {
                in_channels,
                out_channels,
            } => format!("conv3x3({in_channels} -> {out_channels})"),
            Layer::MaxPool2 => "maxpool2".into(),
            Layer::Relu => "relu".into(),
            Layer::Dropout { rate } => format!("dropout({rate})"),
            Layer::Flatten => "flatten".into(),
        }
    }

    fn parameter_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Layer::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            Layer::Conv3x3 {
                in_channels,
                out_channels,
            } => vec![vec![out_channels, in_channels, 3, 3], vec![out_channels]],
            _ => vec![],
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv3x3 { in_channels, .. } => in_channels * 9,
            _ => 0,
        }
    }
}

/// Filter and unit counts of the CNN family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CnnShape {
    pub input_side: usize,
    pub first_filters: usize,
    pub second_filters: usize,
    pub dense_wide: usize,
    pub dense_narrow: usize,
}

impl CnnShape {
    /// 64/128 filters, 512/128 dense units on 32×32 inputs.
    pub const PAPER: CnnShape = CnnShape {
        input_side: 32,
        first_filters: 64,
        second_filters: 128,
        dense_wide: 512,
        dense_narrow: 128,
    };

    /// Half-width variant on 16×16 inputs for workstation runs.
    pub const DESK: CnnShape = CnnShape {
        input_side: 16,
        first_filters: 32,
        second_filters: 64,
        dense_wide: 128,
        dense_narrow: 64,
    };
}

/// Layer-by-layer architecture of a single-logit binary classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    /// Shape of one example, without the batch axis.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub padding: Padding,
}

impl ModelSpec {
    pub fn logistic_regression(input_dim: usize) -> Self {
        ModelSpec {
            name: "lr".into(),
            input_shape: vec![input_dim],
            layers: vec![Layer::Dense {
                inputs: input_dim,
                outputs: 1,
            }],
            padding: Padding::Same,
        }
    }

    /// 64 hidden ReLU units; optional dropout after the activation.
    pub fn mlp64(input_dim: usize, dropout: Option<f64>) -> Self {
        let mut layers = vec![
            Layer::Dense {
                inputs: input_dim,
                outputs: 64,
            },
            Layer::Relu,
        ];
        if let Some(rate) = dropout {
            layers.push(Layer::Dropout { rate });
        }
        layers.push(Layer::Dense {
            inputs: 64,
            outputs: 1,
        });
        ModelSpec {
            name: "mlp64".into(),
            input_shape: vec![input_dim],
            layers,
            padding: Padding::Same,
        }
    }

    /// Two convolutions, pool, three convolutions, pool, then two ReLU dense
    /// layers and the logit head, with dropout in front of the two hidden dense
    /// layers when `dropout` is given.
    pub fn cnn(shape: CnnShape, dropout: Option<f64>) -> Self {
        let CnnShape {
            input_side,
            first_filters: f1,
            second_filters: f2,
            dense_wide,
            dense_narrow,
        } = shape;
        let flat = f2 * (input_side / 4) * (input_side / 4);
        let mut layers = vec![
            Layer::Conv3x3 {
                in_channels: 3,
                out_channels: f1,
            },
            Layer::Relu,
            Layer::Conv3x3 {
                in_channels: f1,
                out_channels: f1,
            },
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Conv3x3 {
                in_channels: f1,
                out_channels: f2,
            },
            Layer::Relu,
            Layer::Conv3x3 {
                in_channels: f2,
                out_channels: f2,
            },
            Layer::Relu,
            Layer::Conv3x3 {
                in_channels: f2,
                out_channels: f2,
            },
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Flatten,
        ];
        let dense = |inputs, outputs| Layer::Dense { inputs, outputs };
        if let Some(rate) = dropout {
            layers.push(Layer::Dropout { rate });
        }
        layers.extend([dense(flat, dense_wide), Layer::Relu]);
        if let Some(rate) = dropout {
            layers.push(Layer::Dropout { rate });
        }
        layers.extend([dense(dense_wide, dense_narrow), Layer::Relu, dense(dense_narrow, 1)]);
        let name = if shape == CnnShape::PAPER {
            "paper-cnn"
        } else {
            "desk-cnn"
        };
        ModelSpec {
            name: name.into(),
            input_shape: vec![3, input_side, input_side],
            layers,
            padding: Padding::Same,
        }
    }

    pub fn paper_cnn(dropout: bool) -> Self {
        Self::cnn(CnnShape::PAPER, dropout.then_some(0.5))
    }

    /// Per-example output shape after every layer; fails on any extent that
    /// does not chain or on a head that is not a single logit.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mismatch = |expect: Vec<usize>| Error::Dimension {
                op: "model spec",
                lhs: shape.clone(),
                rhs: expect,
            };
            shape = match *layer {
                Layer::Dense { inputs, outputs } => {
                    if shape != [inputs] {
                        return Err(mismatch(vec![inputs]));
                    }
                    vec![outputs]
                }
                Layer::Conv3x3 {
                    in_channels,
                    out_channels,
                } => match shape.as_slice() {
                    [c, h, w] if *c == in_channels => match self.padding {
                        Padding::Same => vec![out_channels, *h, *w],
                        Padding::Valid if *h >= 3 && *w >= 3 => vec![out_channels, h - 2, w - 2],
                        Padding::Valid => return Err(mismatch(vec![in_channels, 3, 3])),
                    },
                    _ => return Err(mismatch(vec![in_channels])),
                },
                Layer::MaxPool2 => match shape.as_slice() {
                    [c, h, w] if h % 2 == 0 && w % 2 == 0 => vec![*c, h / 2, w / 2],
                    _ => return Err(mismatch(vec![2, 2])),
                },
                Layer::Relu => shape.clone(),
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    shape.clone()
                }
                Layer::Flatten => vec![shape.iter().product()],
            };
            out.push(shape.clone());
        }
        if shape != [1] {
            return Err(Error::Dimension {
                op: "model head",
                lhs: shape,
                rhs: vec![1],
            });
        }
        Ok(out)
    }

    /// Closed-form parameter count from the layer extents.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                Layer::Dense { inputs, outputs } => inputs * outputs + outputs,
                Layer::Conv3x3 {
                    in_channels,
                    out_channels,
                } => in_channels * out_channels * 9 + out_channels,
                _ => 0,
            })
            .sum()
    }

    /// Width of the first flatten layer's output, if the model has one.
    pub fn flatten_size(&self) -> Result<Option<usize>> {
        let shapes = self.layer_shapes()?;
        Ok(self
            .layers
            .iter()
            .position(|l| *l == Layer::Flatten)
            .map(|i| shapes[i][0]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks are sampled.
    Train,
    /// Dropout is the identity.
    Eval,
}

/// Instantiated parameters for a [`ModelSpec`], in layer order (weight, bias).
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Tensor>,
    init_seed: u64,
}

/// Node ids produced by recording a forward pass on a tape.
pub struct Recorded {
    pub logits: NodeId,
    pub params: Vec<NodeId>,
}

impl Model {
    /// Fan-in uniform initialization with zero biases: hidden layers draw from
    /// `U(±sqrt(6/fan_in))`, the logit head from `U(±sqrt(3/fan_in))`.
    pub fn build(spec: ModelSpec, init_seed: u64) -> Result<Self> {
        spec.layer_shapes()?;
        let mut init = rng::stream(init_seed, "init");
        let head = spec
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense { .. } | Layer::Conv3x3 { .. }));
        let mut params = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let shapes = layer.parameter_shapes();
            if shapes.is_empty() {
                continue;
            }
            let gain = if Some(i) == head { 3.0 } else { 6.0 };
            let bound = (gain / layer.fan_in() as f64).sqrt();
            let n: usize = shapes[0].iter().product();
            let w: Vec<f64> = (0..n).map(|_| init.random_range(-bound..bound)).collect();
            params.push(Tensor::new(shapes[0].clone(), w)?);
            params.push(Tensor::zeros(shapes[1].clone()));
        }
        Ok(Model {
            spec,
            params,
            init_seed,
        })
    }

    /// All parameters zero; the decision function is identically 0.
    pub fn zeroed(spec: ModelSpec) -> Result<Self> {
        let mut m = Self::build(spec, 0)?;
        m.params.iter_mut().for_each(|p| p.data_mut().fill(0.0));
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Records a forward pass of `input` (`[N, ..input_shape]`) onto `tape`.
    /// In train mode each dropout layer draws its mask from a stream seeded
    /// by `mask_seed`.
    pub fn record(
        &self,
        tape: &mut Tape,
        input: NodeId,
        mode: Mode,
        mask_seed: u64,
    ) -> Result<Recorded> {
        let in_shape = tape.value(input).shape().to_vec();
        if in_shape.len() != self.spec.input_shape.len() + 1
            || in_shape[1..] != self.spec.input_shape[..]
        {
            return Err(Error::Dimension {
                op: "forward",
                lhs: in_shape,
                rhs: self.spec.input_shape.clone(),
            });
        }
        let batch = in_shape[0];
        let param_ids: Vec<NodeId> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut masks = rng::stream(mask_seed, "dropout");
        let mut next_param = 0;
        let mut x = input;
        for layer in &self.spec.layers {
            x = match *layer {
                Layer::Dense { .. } => {
                    let (w, b) = (param_ids[next_param], param_ids[next_param + 1]);
                    next_param += 2;
                    let m = tape.matmul(x, w)?;
                    tape.add_row(m, b)?
                }
                Layer::Conv3x3 { .. } => {
                    let (k, b) = (param_ids[next_param], param_ids[next_param + 1]);
                    next_param += 2;
                    tape.conv2d(x, k, b, self.spec.padding)?
                }
                Layer::MaxPool2 => tape.maxpool2(x)?,
                Layer::Relu => tape.relu(x)?,
                Layer::Dropout { rate } if mode == Mode::Train && rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask = (0..tape.value(x).numel())
                        .map(|_| if masks.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    tape.mask(x, mask)?
                }
                Layer::Dropout { .. } => x,
                Layer::Flatten => {
                    let width = tape.value(x).numel() / batch.max(1);
                    tape.reshape(x, vec![batch, width])?
                }
            };
        }
        let logits = tape.reshape(x, vec![batch])?;
        Ok(Recorded {
            logits,
            params: param_ids,
        })
    }

    /// Logits for a batch `[N, ..input_shape]`, or for a single example
    /// given without the batch axis.
    pub fn forward(&self, batch: &Tensor, mode: Mode, mask_seed: u64) -> Result<Vec<f64>> {
        let batch = if batch.shape() == self.spec.input_shape.as_slice() {
            let mut shape = vec![1];
            shape.extend_from_slice(batch.shape());
            batch.clone().reshape(shape)?
        } else {
            batch.clone()
        };
        let mut tape = Tape::new();
        let input = tape.constant(batch);
        let rec = self.record(&mut tape, input, mode, mask_seed)?;
        Ok(tape.value(rec.logits).data().to_vec())
    }

    /// Eval-mode logits for every row of `features`, in chunks.
    pub fn logits(&self, features: &Tensor) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let n = features.shape().first().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            out.extend(self.forward(&features.slice_rows(start, end)?, Mode::Eval, 0)?);
            start = end;
        }
        Ok(out)
    }

    /// Text manifest: layers, output shapes, parameter counts, init seed.
    pub fn manifest(&self) -> Result<String> {
        let shapes = self.spec.layer_shapes()?;
        let mut s = String::new();
        writeln!(s, "model = {}", self.spec.name).unwrap();
        writeln!(s, "input_shape = {:?}", self.spec.input_shape).unwrap();
        let padding = match self.spec.padding {
            Padding::Same => "same (pad 1)",
            Padding::Valid => "valid",
        };
        writeln!(s, "conv_padding = {padding}").unwrap();
        writeln!(
            s,
            "init = uniform fan-in: hidden sqrt(6/fan_in), head sqrt(3/fan_in), zero biases"
        )
        .unwrap();
        writeln!(s, "init_seed = {}", self.init_seed).unwrap();
        for (i, (layer, shape)) in self.spec.layers.iter().zip(&shapes).enumerate() {
            let count: usize = layer
                .parameter_shapes()
                .iter()
                .map(|s| s.iter().product::<usize>())
                .sum();
            writeln!(s, "layer.{i} = {} -> {:?}, params {count}", layer.describe(), shape).unwrap();
        }
        if let Some(flat) = self.spec.flatten_size()? {
            writeln!(s, "flatten_size = {flat}").unwrap();
        }
        writeln!(s, "parameters = {}", self.parameter_count()).unwrap();
        Ok(s)
    }
}
