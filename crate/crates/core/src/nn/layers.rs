use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Valid (unpadded) 1-D cross-correlation over `[batch, channels, length]` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out_channels, in_channels, kernel]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
}

/// Fully connected layer over the flattened trailing dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`
    pub weight: Tensor,
    /// `[outputs]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv1d(Conv1d),
    Relu,
    /// Max over disjoint windows; a trailing remainder shorter than the window is dropped.
    MaxPool { window: usize },
    Dense(Dense),
}

/// Per-layer state retained by the forward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Input(Tensor),
    ReluOutput(Tensor),
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    None,
}

/// Uniform initialization with variance `2 / fan_in`.
fn he_uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("initializer shape is consistent")
}

impl Conv1d {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(in_channels > 0 && out_channels > 0 && kernel > 0);
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: he_uniform(rng, vec![out_channels, in_channels, kernel], in_channels * kernel),
            bias: Tensor::zeros(vec![out_channels]),
        }
    }

    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        (self.kernel <= input_len).then(|| input_len - self.kernel + 1)
    }

    fn forward(&self, input: &Tensor, index: usize) -> Result<Tensor> {
        let shape = input.shape();
        if shape.len() != 3 || shape[1] != self.in_channels {
            return Err(Error::Config {
                layer: index,
                message: format!(
                    "conv1d expects [batch, {}, length], got {shape:?}",
                    self.in_channels
                ),
            });
        }
        let (batch, len) = (shape[0], shape[2]);
        let out_len = self.output_len(len).ok_or_else(|| Error::Config {
            layer: index,
            message: format!("kernel length {} exceeds input length {len}", self.kernel),
        })?;
        let k = self.kernel;
        let w = self.weight.data();
        let x = input.data();
        let mut out = vec![0.0; batch * self.out_channels * out_len];
        for b in 0..batch {
            for co in 0..self.out_channels {
                let o = &mut out[(b * self.out_channels + co) * out_len..][..out_len];
                o.fill(self.bias.data()[co]);
                for ci in 0..self.in_channels {
                    let xrow = &x[(b * self.in_channels + ci) * len..][..len];
                    let wrow = &w[(co * self.in_channels + ci) * k..][..k];
                    for (j, &wk) in wrow.iter().enumerate() {
                        for (ov, &xv) in o.iter_mut().zip(&xrow[j..j + out_len]) {
                            *ov += wk * xv;
                        }
                    }
                }
            }
        }
        debug_assert_eq!(out_len, len - k + 1);
        Tensor::new(vec![batch, self.out_channels, out_len], out)
    }

    fn backward(&self, input: &Tensor, dout: &Tensor, want_dx: bool) -> (Tensor, Tensor, Tensor) {
        let (batch, len) = (input.shape()[0], input.shape()[2]);
        let out_len = dout.shape()[2];
        let k = self.kernel;
        let w = self.weight.data();
        let x = input.data();
        let g = dout.data();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; self.out_channels];
        let mut dx = vec![0.0; x.len()];
        for b in 0..batch {
            for co in 0..self.out_channels {
                let grow = &g[(b * self.out_channels + co) * out_len..][..out_len];
                db[co] += grow.iter().sum::<f64>();
                for ci in 0..self.in_channels {
                    let xrow = &x[(b * self.in_channels + ci) * len..][..len];
                    let dxrow = &mut dx[(b * self.in_channels + ci) * len..][..len];
                    let base = (co * self.in_channels + ci) * k;
                    for j in 0..k {
                        let mut acc = 0.0;
                        for (gv, xv) in grow.iter().zip(&xrow[j..j + out_len]) {
                            acc += gv * xv;
                        }
                        dw[base + j] += acc;
                        if !want_dx {
                            continue;
                        }
                        let wk = w[base + j];
                        for (dv, gv) in dxrow[j..j + out_len].iter_mut().zip(grow) {
                            *dv += wk * gv;
                        }
                    }
                }
            }
        }
        (
            Tensor::new(input.shape().to_vec(), dx).expect("same shape"),
            Tensor::new(self.weight.shape().to_vec(), dw).expect("same shape"),
            Tensor::new(vec![self.out_channels], db).expect("same shape"),
        )
    }
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        assert!(inputs > 0 && outputs > 0);
        Self {
            inputs,
            outputs,
            weight: he_uniform(rng, vec![outputs, inputs], inputs),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    fn forward(&self, input: &Tensor, index: usize) -> Result<Tensor> {
        if input.row_len() != self.inputs {
            return Err(Error::Config {
                layer: index,
                message: format!(
                    "dense expects {} inputs per sample, got shape {:?}",
                    self.inputs,
                    input.shape()
                ),
            });
        }
        let batch = input.rows();
        let w = self.weight.data();
        let mut out = Vec::with_capacity(batch * self.outputs);
        for b in 0..batch {
            let x = input.row(b);
            for o in 0..self.outputs {
                let wrow = &w[o * self.inputs..][..self.inputs];
                let dot: f64 = wrow.iter().zip(x).map(|(a, b)| a * b).sum();
                out.push(dot + self.bias.data()[o]);
            }
        }
        Tensor::new(vec![batch, self.outputs], out)
    }

    fn backward(&self, input: &Tensor, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
        let batch = input.rows();
        let w = self.weight.data();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; self.outputs];
        let mut dx = vec![0.0; input.len()];
        for b in 0..batch {
            let x = input.row(b);
            let g = dout.row(b);
            let dxrow = &mut dx[b * self.inputs..][..self.inputs];
            for (o, &go) in g.iter().enumerate() {
                db[o] += go;
                let dwrow = &mut dw[o * self.inputs..][..self.inputs];
                for (d, xv) in dwrow.iter_mut().zip(x) {
                    *d += go * xv;
                }
                let wrow = &w[o * self.inputs..][..self.inputs];
                for (d, wv) in dxrow.iter_mut().zip(wrow) {
                    *d += go * wv;
                }
            }
        }
        (
            Tensor::new(input.shape().to_vec(), dx).expect("same shape"),
            Tensor::new(self.weight.shape().to_vec(), dw).expect("same shape"),
            Tensor::new(vec![self.outputs], db).expect("same shape"),
        )
    }
}

fn max_pool(input: &Tensor, window: usize, index: usize) -> Result<(Tensor, Vec<usize>)> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::Config {
            layer: index,
            message: format!("max pool expects [batch, channels, length], got {shape:?}"),
        });
    }
    let (rows, len) = (shape[0] * shape[1], shape[2]);
    let out_len = len / window;
    if out_len == 0 {
        return Err(Error::Config {
            layer: index,
            message: format!("pool window {window} exceeds input length {len}"),
        });
    }
    let x = input.data();
    let mut out = Vec::with_capacity(rows * out_len);
    let mut argmax = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        for p in 0..out_len {
            let start = r * len + p * window;
            let mut best = start;
            for i in start + 1..start + window {
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new(vec![shape[0], shape[1], out_len], out)?, argmax))
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Output shape (excluding batch) for a given per-sample input shape.
    pub(crate) fn output_shape(&self, input: &[usize], index: usize) -> Result<Vec<usize>> {
        let err = |message: String| Error::Config { layer: index, message };
        match self {
            Layer::Conv1d(c) => {
                if input.len() != 2 || input[0] != c.in_channels {
                    return Err(err(format!(
                        "conv1d expects [{}, length], got {input:?}",
                        c.in_channels
                    )));
                }
                let len = c.output_len(input[1]).ok_or_else(|| {
                    err(format!("kernel length {} exceeds input length {}", c.kernel, input[1]))
                })?;
                Ok(vec![c.out_channels, len])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { window } => {
                if input.len() != 2 || *window == 0 || input[1] / window == 0 {
                    return Err(err(format!("pool window {window} invalid for {input:?}")));
                }
                Ok(vec![input[0], input[1] / window])
            }
            Layer::Dense(d) => {
                let n: usize = input.iter().product();
                if n != d.inputs {
                    return Err(err(format!("dense expects {} inputs, got {input:?}", d.inputs)));
                }
                Ok(vec![d.outputs])
            }
        }
    }

    pub(crate) fn forward(&self, input: Tensor, index: usize, keep: bool) -> Result<(Tensor, LayerCache)> {
        let keep_input = |t: Tensor| if keep { LayerCache::Input(t) } else { LayerCache::None };
        match self {
            Layer::Conv1d(c) => Ok((c.forward(&input, index)?, keep_input(input))),
            Layer::Dense(d) => Ok((d.forward(&input, index)?, keep_input(input))),
            Layer::Relu => {
                let mut out = input;
                out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                let cache = if keep { LayerCache::ReluOutput(out.clone()) } else { LayerCache::None };
                Ok((out, cache))
            }
            Layer::MaxPool { window } => {
                let (out, argmax) = max_pool(&input, *window, index)?;
                let cache = if keep {
                    LayerCache::Pool { input_shape: input.shape().to_vec(), argmax }
                } else {
                    LayerCache::None
                };
                Ok((out, cache))
            }
        }
    }

    /// Returns the input gradient and, for parametric layers, `(dW, db)`.
    /// The input gradient of a leading (index 0) convolution is left at zero.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache,
        dout: &Tensor,
        index: usize,
    ) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
        let mismatch = || Error::Internal(format!("layer {index}: cache does not match layer kind"));
        match (self, cache) {
            (Layer::Conv1d(c), LayerCache::Input(x)) => {
                let (dx, dw, db) = c.backward(x, dout, index > 0);
                Ok((dx, Some((dw, db))))
            }
            (Layer::Dense(d), LayerCache::Input(x)) => {
                let (dx, dw, db) = d.backward(x, dout);
                Ok((dx, Some((dw, db))))
            }
            (Layer::Relu, LayerCache::ReluOutput(y)) => {
                let mut dx = dout.clone();
                dx.data_mut()
                    .iter_mut()
                    .zip(y.data())
                    .for_each(|(g, &v)| {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    });
                Ok((dx, None))
            }
            (Layer::MaxPool { .. }, LayerCache::Pool { input_shape, argmax }) => {
                let mut dx = Tensor::zeros(input_shape.clone());
                let d = dx.data_mut();
                for (&src, &g) in argmax.iter().zip(dout.data()) {
                    d[src] += g;
                }
                Ok((dx, None))
            }
            _ => Err(mismatch()),
        }
    }
}
