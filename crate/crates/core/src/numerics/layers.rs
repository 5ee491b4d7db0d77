//! Neural layers with explicit forward/backward passes.
//!
//! Layers operate on a single sample. Feature maps are `[H, W, C]`, dense
//! inputs are rank-1 and token sequences are rank-1 tensors of integral ids.
//! Each forward pass returns a [`Tape`] holding exactly what the matching
//! backward pass needs; a tape can be consumed once.

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        input: usize,
        output: usize,
    },
    TokenEmbedding {
        vocab: usize,
        dim: usize,
    },
    /// Depthwise `kernel x kernel` convolution with zero "same" padding,
    /// followed by a pointwise `in_ch -> out_ch` mix with bias.
    SepConv2D {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: [usize; 2],
    },
    LayerNorm {
        dim: usize,
    },
    /// Non-overlapping max pooling; partial windows at the border are kept.
    MaxPool2D {
        window: [usize; 2],
    },
    GlobalMaxPool,
    #[serde(rename = "relu")]
    ReLU,
    Sigmoid,
    Dropout {
        p: f64,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::TokenEmbedding { .. } => "token_embedding",
            LayerKind::SepConv2D { .. } => "sep_conv2d",
            LayerKind::LayerNorm { .. } => "layer_norm",
            LayerKind::MaxPool2D { .. } => "max_pool2d",
            LayerKind::GlobalMaxPool => "global_max_pool",
            LayerKind::ReLU => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Dropout { .. } => "dropout",
        }
    }

    /// Parameter shapes in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Dense { input, output } => vec![vec![input, output], vec![output]],
            LayerKind::TokenEmbedding { vocab, dim } => vec![vec![vocab, dim]],
            LayerKind::SepConv2D {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![
                vec![kernel, kernel, in_ch],
                vec![in_ch, out_ch],
                vec![out_ch],
            ],
            LayerKind::LayerNorm { dim } => vec![vec![dim], vec![dim]],
            _ => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::DegenerateLayer(msg));
        match *self {
            LayerKind::Dense { input, output } if input == 0 || output == 0 => {
                bad(format!("dense {input}->{output}"))
            }
            LayerKind::TokenEmbedding { vocab, dim } if vocab == 0 || dim == 0 => {
                bad(format!("token embedding {vocab}x{dim}"))
            }
            LayerKind::SepConv2D {
                in_ch,
                out_ch,
                kernel,
                stride,
            } if in_ch == 0
                || out_ch == 0
                || kernel == 0
                || kernel % 2 == 0
                || stride.contains(&0) =>
            {
                bad(format!(
                    "sep_conv2d in={in_ch} out={out_ch} kernel={kernel} stride={stride:?} (kernel must be odd)"
                ))
            }
            LayerKind::LayerNorm { dim } if dim == 0 => bad("layer norm over 0 dims".into()),
            LayerKind::MaxPool2D { window } if window.contains(&0) => {
                bad(format!("max pool window {window:?}"))
            }
            LayerKind::Dropout { p } if !(0.0..1.0).contains(&p) => {
                bad(format!("dropout p={p} outside [0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

/// Glorot-uniform initialisation on `[-sqrt(6/(fan_in+fan_out)), +sqrt(..)]`.
pub fn glorot_init<T: Scalar>(
    rng: &mut Rng,
    fan_in: usize,
    fan_out: usize,
    shape: &[usize],
) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::DegenerateLayer(format!(
            "glorot fan_in={fan_in} fan_out={fan_out}"
        )));
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.uniform_range(-limit, limit)))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    kind: LayerKind,
    params: Vec<Tensor<T>>,
}

#[derive(Debug)]
enum TapeData<T> {
    Dense {
        input: Tensor<T>,
    },
    Embedding {
        ids: Vec<usize>,
        input_shape: Vec<usize>,
    },
    SepConv {
        input: Tensor<T>,
        depthwise: Tensor<T>,
    },
    LayerNorm {
        normalized: Tensor<T>,
        inv_std: Vec<T>,
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    GlobalMaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    ReLU {
        input: Tensor<T>,
    },
    Sigmoid {
        output: Tensor<T>,
    },
    Dropout {
        shape: Vec<usize>,
        scale: Option<Vec<T>>,
    },
}

/// Activations cached by a forward pass. Single use.
#[derive(Debug)]
pub struct Tape<T = f32> {
    layer: &'static str,
    output_shape: Vec<usize>,
    data: Option<TapeData<T>>,
}

impl<T> Tape<T> {
    pub fn layer(&self) -> &'static str {
        self.layer
    }

    pub fn is_consumed(&self) -> bool {
        self.data.is_none()
    }
}

#[derive(Debug)]
pub struct Gradients<T = f32> {
    pub input: Tensor<T>,
    pub params: Vec<Tensor<T>>,
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn out_dim(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

fn pooled_dim(size: usize, window: usize) -> usize {
    size.div_ceil(window)
}

fn expect_map(context: &str, x: &[usize], channels: Option<usize>) -> Result<(usize, usize, usize)> {
    match (x, channels) {
        ([h, w, c], Some(ch)) if *c == ch => Ok((*h, *w, *c)),
        ([h, w, c], None) => Ok((*h, *w, *c)),
        (_, Some(ch)) => Err(Error::shape(context, &[0, 0, ch], x)),
        (_, None) => Err(Error::shape(context, &[0, 0, 0], x)),
    }
}

impl<T: Scalar> Layer<T> {
    pub fn new(kind: LayerKind, rng: &mut Rng) -> Result<Self> {
        kind.validate()?;
        let params = match kind {
            LayerKind::Dense { input, output } => vec![
                glorot_init(rng, input, output, &[input, output])?,
                Tensor::zeros(&[output]),
            ],
            LayerKind::TokenEmbedding { vocab, dim } => {
                vec![glorot_init(rng, vocab, dim, &[vocab, dim])?]
            }
            LayerKind::SepConv2D {
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let taps = kernel * kernel;
                vec![
                    glorot_init(rng, taps, taps, &[kernel, kernel, in_ch])?,
                    glorot_init(rng, in_ch, out_ch, &[in_ch, out_ch])?,
                    Tensor::zeros(&[out_ch]),
                ]
            }
            LayerKind::LayerNorm { dim } => {
                vec![Tensor::full(&[dim], T::one()), Tensor::zeros(&[dim])]
            }
            _ => Vec::new(),
        };
        Ok(Self { kind, params })
    }

    /// Builds a layer from explicit parameters (deserialisation, tests).
    pub fn with_params(kind: LayerKind, params: Vec<Tensor<T>>) -> Result<Self> {
        kind.validate()?;
        let shapes = kind.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "{} expects {} parameter tensors, got {}",
                kind.name(),
                shapes.len(),
                params.len()
            )));
        }
        for (shape, p) in shapes.iter().zip(&params) {
            p.expect_shape(kind.name(), shape)?;
        }
        Ok(Self { kind, params })
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            kind: self.kind.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, Tape<T>)> {
        let (output, data) = match self.kind {
            LayerKind::Dense { input: n_in, output: n_out } => {
                input.expect_shape("dense input", &[n_in])?;
                let w = self.params[0].data();
                let b = self.params[1].data();
                let mut acc: Vec<f64> = b.iter().map(|v| v.to_f64_lossy()).collect();
                for (i, &x) in input.data().iter().enumerate() {
                    let x = x.to_f64_lossy();
                    if x == 0.0 {
                        continue;
                    }
                    let row = &w[i * n_out..(i + 1) * n_out];
                    for (a, &wv) in acc.iter_mut().zip(row) {
                        *a += x * wv.to_f64_lossy();
                    }
                }
                let out = acc.into_iter().map(T::from_f64_lossy).collect();
                (
                    Tensor::from_parts(vec![n_out], out),
                    TapeData::Dense {
                        input: input.clone(),
                    },
                )
            }
            LayerKind::TokenEmbedding { vocab, dim } => {
                if input.rank() != 1 {
                    return Err(Error::shape("token ids", &[input.len()], input.shape()));
                }
                let table = self.params[0].data();
                let mut ids = Vec::with_capacity(input.len());
                let mut out = Vec::with_capacity(input.len() * dim);
                for &v in input.data() {
                    let id = v.to_f64_lossy();
                    if id < 0.0 || id.fract() != 0.0 || id as usize >= vocab {
                        return Err(Error::InvalidSpec(format!(
                            "token id {id} outside vocabulary of {vocab}"
                        )));
                    }
                    let id = id as usize;
                    ids.push(id);
                    out.extend_from_slice(&table[id * dim..(id + 1) * dim]);
                }
                (
                    Tensor::from_parts(vec![input.len(), dim], out),
                    TapeData::Embedding {
                        ids,
                        input_shape: input.shape().to_vec(),
                    },
                )
            }
            LayerKind::SepConv2D {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let (h, w, c) = expect_map("sep_conv2d input", input.shape(), Some(in_ch))?;
                let (oh, ow) = (out_dim(h, stride[0]), out_dim(w, stride[1]));
                let pad = (kernel / 2) as isize;
                let x = input.data();
                let dk = self.params[0].data();
                let mut dw = vec![T::zero(); oh * ow * c];
                for i in 0..oh {
                    for j in 0..ow {
                        for ki in 0..kernel {
                            let r = (i * stride[0]) as isize + ki as isize - pad;
                            if r < 0 || r >= h as isize {
                                continue;
                            }
                            for kj in 0..kernel {
                                let s = (j * stride[1]) as isize + kj as isize - pad;
                                if s < 0 || s >= w as isize {
                                    continue;
                                }
                                let xi = (r as usize * w + s as usize) * c;
                                let ki_off = (ki * kernel + kj) * c;
                                let oi = (i * ow + j) * c;
                                for ch in 0..c {
                                    dw[oi + ch] = dw[oi + ch] + x[xi + ch] * dk[ki_off + ch];
                                }
                            }
                        }
                    }
                }
                let pw = self.params[1].data();
                let bias = self.params[2].data();
                let mut out = vec![T::zero(); oh * ow * out_ch];
                for p in 0..oh * ow {
                    let o = &mut out[p * out_ch..(p + 1) * out_ch];
                    o.copy_from_slice(bias);
                    for ch in 0..c {
                        let d = dw[p * c + ch];
                        let row = &pw[ch * out_ch..(ch + 1) * out_ch];
                        for (ov, &wv) in o.iter_mut().zip(row) {
                            *ov = *ov + d * wv;
                        }
                    }
                }
                (
                    Tensor::from_parts(vec![oh, ow, out_ch], out),
                    TapeData::SepConv {
                        input: input.clone(),
                        depthwise: Tensor::from_parts(vec![oh, ow, c], dw),
                    },
                )
            }
            LayerKind::LayerNorm { dim } => {
                if input.shape().last() != Some(&dim) {
                    let mut expected = input.shape().to_vec();
                    if let Some(last) = expected.last_mut() {
                        *last = dim;
                    }
                    return Err(Error::shape("layer norm input", &expected, input.shape()));
                }
                let gamma = self.params[0].data();
                let beta = self.params[1].data();
                let rows = input.len() / dim;
                let mut normalized = vec![T::zero(); input.len()];
                let mut out = vec![T::zero(); input.len()];
                let mut inv_std = Vec::with_capacity(rows);
                for r in 0..rows {
                    let row = &input.data()[r * dim..(r + 1) * dim];
                    let mean = row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / dim as f64;
                    let var = row
                        .iter()
                        .map(|v| (v.to_f64_lossy() - mean).powi(2))
                        .sum::<f64>()
                        / dim as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    inv_std.push(T::from_f64_lossy(inv));
                    for k in 0..dim {
                        let centered = row[k].to_f64_lossy() - mean;
                        let xhat = if centered == 0.0 { T::zero() } else { T::from_f64_lossy(centered * inv) };
                        normalized[r * dim + k] = xhat;
                        out[r * dim + k] = gamma[k] * xhat + beta[k];
                    }
                }
                (
                    Tensor::from_parts(input.shape().to_vec(), out),
                    TapeData::LayerNorm {
                        normalized: Tensor::from_parts(input.shape().to_vec(), normalized),
                        inv_std,
                    },
                )
            }
            LayerKind::MaxPool2D { window } => {
                let (h, w, c) = expect_map("max_pool2d input", input.shape(), None)?;
                let (oh, ow) = (pooled_dim(h, window[0]), pooled_dim(w, window[1]));
                let x = input.data();
                let mut out = vec![T::neg_infinity(); oh * ow * c];
                let mut argmax = vec![0usize; oh * ow * c];
                for r in 0..h {
                    for s in 0..w {
                        for ch in 0..c {
                            let xi = (r * w + s) * c + ch;
                            let oi = ((r / window[0]) * ow + s / window[1]) * c + ch;
                            if x[xi] > out[oi] {
                                out[oi] = x[xi];
                                argmax[oi] = xi;
                            }
                        }
                    }
                }
                (
                    Tensor::from_parts(vec![oh, ow, c], out),
                    TapeData::MaxPool {
                        input_shape: input.shape().to_vec(),
                        argmax,
                    },
                )
            }
            LayerKind::GlobalMaxPool => {
                let (h, w, c) = expect_map("global_max_pool input", input.shape(), None)?;
                let x = input.data();
                let mut out = vec![T::neg_infinity(); c];
                let mut argmax = vec![0usize; c];
                for p in 0..h * w {
                    for ch in 0..c {
                        let xi = p * c + ch;
                        if x[xi] > out[ch] {
                            out[ch] = x[xi];
                            argmax[ch] = xi;
                        }
                    }
                }
                (
                    Tensor::from_parts(vec![c], out),
                    TapeData::GlobalMaxPool {
                        input_shape: input.shape().to_vec(),
                        argmax,
                    },
                )
            }
            LayerKind::ReLU => (
                input.map(|v| if v > T::zero() { v } else { T::zero() }),
                TapeData::ReLU {
                    input: input.clone(),
                },
            ),
            LayerKind::Sigmoid => {
                let output = input.map(sigmoid);
                (
                    output.clone(),
                    TapeData::Sigmoid { output },
                )
            }
            LayerKind::Dropout { p } => match mode {
                Mode::Infer => (
                    input.clone(),
                    TapeData::Dropout {
                        shape: input.shape().to_vec(),
                        scale: None,
                    },
                ),
                Mode::Train => {
                    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
                    let scale: Vec<T> = (0..input.len())
                        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
                        .collect();
                    let out = input
                        .data()
                        .iter()
                        .zip(&scale)
                        .map(|(&x, &s)| x * s)
                        .collect();
                    (
                        Tensor::from_parts(input.shape().to_vec(), out),
                        TapeData::Dropout {
                            shape: input.shape().to_vec(),
                            scale: Some(scale),
                        },
                    )
                }
            },
        };
        output.ensure_finite(self.kind.name())?;
        let tape = Tape {
            layer: self.kind.name(),
            output_shape: output.shape().to_vec(),
            data: Some(data),
        };
        Ok((output, tape))
    }

    pub fn backward(&self, tape: &mut Tape<T>, grad_out: &Tensor<T>) -> Result<Gradients<T>> {
        if tape.layer != self.kind.name() {
            return Err(Error::TapeMismatch(format!(
                "tape from {} passed to {}",
                tape.layer,
                self.kind.name()
            )));
        }
        grad_out.expect_shape("gradient w.r.t. layer output", &tape.output_shape)?;
        let data = tape.data.take().ok_or(Error::TapeConsumed)?;
        let g = grad_out.data();
        let grads = match (data, &self.kind) {
            (TapeData::Dense { input }, &LayerKind::Dense { input: n_in, output: n_out }) => {
                let w = self.params[0].data();
                let mut gw = vec![T::zero(); n_in * n_out];
                let mut gx = vec![T::zero(); n_in];
                for (i, &x) in input.data().iter().enumerate() {
                    let row = &w[i * n_out..(i + 1) * n_out];
                    let grow = &mut gw[i * n_out..(i + 1) * n_out];
                    let mut acc = 0.0f64;
                    for j in 0..n_out {
                        grow[j] = x * g[j];
                        acc += (row[j] * g[j]).to_f64_lossy();
                    }
                    gx[i] = T::from_f64_lossy(acc);
                }
                Gradients {
                    input: Tensor::from_parts(vec![n_in], gx),
                    params: vec![
                        Tensor::from_parts(vec![n_in, n_out], gw),
                        grad_out.clone(),
                    ],
                }
            }
            (TapeData::Embedding { ids, input_shape }, &LayerKind::TokenEmbedding { vocab, dim }) => {
                let mut gt = vec![T::zero(); vocab * dim];
                for (pos, &id) in ids.iter().enumerate() {
                    for k in 0..dim {
                        gt[id * dim + k] = gt[id * dim + k] + g[pos * dim + k];
                    }
                }
                Gradients {
                    input: Tensor::zeros(&input_shape),
                    params: vec![Tensor::from_parts(vec![vocab, dim], gt)],
                }
            }
            (
                TapeData::SepConv { input, depthwise },
                &LayerKind::SepConv2D {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                },
            ) => {
                let (h, w, c) = (input.shape()[0], input.shape()[1], in_ch);
                let (oh, ow) = (depthwise.shape()[0], depthwise.shape()[1]);
                let pad = (kernel / 2) as isize;
                let pw = self.params[1].data();
                let dk = self.params[0].data();
                let dw = depthwise.data();
                let x = input.data();

                let mut g_bias = vec![T::zero(); out_ch];
                let mut g_pw = vec![T::zero(); c * out_ch];
                let mut g_dw = vec![T::zero(); oh * ow * c];
                for p in 0..oh * ow {
                    let go = &g[p * out_ch..(p + 1) * out_ch];
                    for (gb, &gv) in g_bias.iter_mut().zip(go) {
                        *gb = *gb + gv;
                    }
                    for ch in 0..c {
                        let d = dw[p * c + ch];
                        let row = &pw[ch * out_ch..(ch + 1) * out_ch];
                        let grow = &mut g_pw[ch * out_ch..(ch + 1) * out_ch];
                        let mut acc = T::zero();
                        for o in 0..out_ch {
                            grow[o] = grow[o] + d * go[o];
                            acc = acc + row[o] * go[o];
                        }
                        g_dw[p * c + ch] = acc;
                    }
                }

                let mut g_dk = vec![T::zero(); kernel * kernel * c];
                let mut g_x = vec![T::zero(); h * w * c];
                for i in 0..oh {
                    for j in 0..ow {
                        for ki in 0..kernel {
                            let r = (i * stride[0]) as isize + ki as isize - pad;
                            if r < 0 || r >= h as isize {
                                continue;
                            }
                            for kj in 0..kernel {
                                let s = (j * stride[1]) as isize + kj as isize - pad;
                                if s < 0 || s >= w as isize {
                                    continue;
                                }
                                let xi = (r as usize * w + s as usize) * c;
                                let ki_off = (ki * kernel + kj) * c;
                                let oi = (i * ow + j) * c;
                                for ch in 0..c {
                                    let gd = g_dw[oi + ch];
                                    g_dk[ki_off + ch] = g_dk[ki_off + ch] + gd * x[xi + ch];
                                    g_x[xi + ch] = g_x[xi + ch] + gd * dk[ki_off + ch];
                                }
                            }
                        }
                    }
                }
                Gradients {
                    input: Tensor::from_parts(input.shape().to_vec(), g_x),
                    params: vec![
                        Tensor::from_parts(vec![kernel, kernel, c], g_dk),
                        Tensor::from_parts(vec![c, out_ch], g_pw),
                        Tensor::from_parts(vec![out_ch], g_bias),
                    ],
                }
            }
            (TapeData::LayerNorm { normalized, inv_std }, &LayerKind::LayerNorm { dim }) => {
                let gamma = self.params[0].data();
                let xhat = normalized.data();
                let mut g_gamma = vec![T::zero(); dim];
                let mut g_beta = vec![T::zero(); dim];
                let mut g_x = vec![T::zero(); xhat.len()];
                let n = T::from_usize(dim).expect("dim fits float");
                for (r, &inv) in inv_std.iter().enumerate() {
                    let base = r * dim;
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for k in 0..dim {
                        let gy = g[base + k];
                        g_gamma[k] = g_gamma[k] + gy * xhat[base + k];
                        g_beta[k] = g_beta[k] + gy;
                        let gxh = gy * gamma[k];
                        sum_g = sum_g + gxh;
                        sum_gx = sum_gx + gxh * xhat[base + k];
                    }
                    for k in 0..dim {
                        let gxh = g[base + k] * gamma[k];
                        g_x[base + k] = inv / n * (n * gxh - sum_g - xhat[base + k] * sum_gx);
                    }
                }
                Gradients {
                    input: Tensor::from_parts(normalized.shape().to_vec(), g_x),
                    params: vec![
                        Tensor::from_parts(vec![dim], g_gamma),
                        Tensor::from_parts(vec![dim], g_beta),
                    ],
                }
            }
            (TapeData::MaxPool { input_shape, argmax }, LayerKind::MaxPool2D { .. })
            | (TapeData::GlobalMaxPool { input_shape, argmax }, LayerKind::GlobalMaxPool) => {
                let mut g_x = vec![T::zero(); input_shape.iter().product()];
                for (oi, &xi) in argmax.iter().enumerate() {
                    g_x[xi] = g_x[xi] + g[oi];
                }
                Gradients {
                    input: Tensor::from_parts(input_shape, g_x),
                    params: Vec::new(),
                }
            }
            (TapeData::ReLU { input }, LayerKind::ReLU) => {
                let g_x = input
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                Gradients {
                    input: Tensor::from_parts(input.shape().to_vec(), g_x),
                    params: Vec::new(),
                }
            }
            (TapeData::Sigmoid { output }, LayerKind::Sigmoid) => {
                let g_x = output
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                Gradients {
                    input: Tensor::from_parts(output.shape().to_vec(), g_x),
                    params: Vec::new(),
                }
            }
            (TapeData::Dropout { shape, scale }, LayerKind::Dropout { .. }) => {
                let g_x = match scale {
                    Some(scale) => g.iter().zip(&scale).map(|(&gv, &s)| gv * s).collect(),
                    None => g.to_vec(),
                };
                Gradients {
                    input: Tensor::from_parts(shape, g_x),
                    params: Vec::new(),
                }
            }
            (_, kind) => {
                return Err(Error::TapeMismatch(format!(
                    "tape payload does not match {}",
                    kind.name()
                )))
            }
        };
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seed_rng;

    fn layer(kind: LayerKind) -> Layer<f64> {
        Layer::new(kind, &mut seed_rng(0)).unwrap()
    }

    #[test]
    fn relu_forward_and_backward() {
        let l = layer(LayerKind::ReLU);
        let x = Tensor::vector(vec![-1.0, 2.0, 0.0]).unwrap();
        let (y, mut tape) = l.forward(&x, Mode::Infer, &mut seed_rng(0)).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 0.0]);
        let g = l.backward(&mut tape, &Tensor::vector(vec![1.0; 3]).unwrap()).unwrap();
        assert_eq!(g.input.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let l = layer(LayerKind::Sigmoid);
        let (y, _) = l
            .forward(&Tensor::vector(vec![0.0]).unwrap(), Mode::Infer, &mut seed_rng(0))
            .unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn layer_norm_constant_vector_maps_to_zero() {
        let l = layer(LayerKind::LayerNorm { dim: 3 });
        let (y, _) = l
            .forward(&Tensor::vector(vec![5.0; 3]).unwrap(), Mode::Infer, &mut seed_rng(0))
            .unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sep_conv_identity_kernel() {
        let kind = LayerKind::SepConv2D {
            in_ch: 2,
            out_ch: 2,
            kernel: 3,
            stride: [1, 1],
        };
        let mut depthwise = vec![0.0; 9 * 2];
        depthwise[4 * 2] = 1.0;
        depthwise[4 * 2 + 1] = 1.0;
        let l = Layer::with_params(
            kind,
            vec![
                Tensor::new(vec![3, 3, 2], depthwise).unwrap(),
                Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                Tensor::zeros(&[2]),
            ],
        )
        .unwrap();
        let mut rng = seed_rng(3);
        let x = Tensor::new(vec![4, 5, 2], (0..40).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
        let (y, _) = l.forward(&x, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn sep_conv_stride_two_halves_spatial_dims() {
        let l = layer(LayerKind::SepConv2D {
            in_ch: 3,
            out_ch: 8,
            kernel: 3,
            stride: [2, 2],
        });
        let (y, _) = l
            .forward(&Tensor::zeros(&[7, 8, 3]), Mode::Infer, &mut seed_rng(0))
            .unwrap();
        assert_eq!(y.shape(), &[4, 4, 8]);
    }

    #[test]
    fn max_pool_keeps_partial_windows() {
        let l = layer(LayerKind::MaxPool2D { window: [2, 2] });
        let x = Tensor::new(vec![3, 3, 1], (0..9).map(f64::from).collect()).unwrap();
        let (y, _) = l.forward(&x, Mode::Infer, &mut seed_rng(0)).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[4.0, 5.0, 7.0, 8.0]);
    }

    #[test]
    fn shape_mismatch_names_dims() {
        let l = layer(LayerKind::Dense { input: 3, output: 2 });
        let err = l
            .forward(&Tensor::zeros(&[4]), Mode::Infer, &mut seed_rng(0))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn reused_tape_is_rejected() {
        let l = layer(LayerKind::Sigmoid);
        let x = Tensor::vector(vec![0.3, -0.2]).unwrap();
        let (y, mut tape) = l.forward(&x, Mode::Train, &mut seed_rng(0)).unwrap();
        let g = Tensor::full(y.shape(), 1.0);
        l.backward(&mut tape, &g).unwrap();
        assert!(tape.is_consumed());
        assert!(matches!(l.backward(&mut tape, &g), Err(Error::TapeConsumed)));
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let l = layer(LayerKind::Dropout { p: 0.5 });
        let x = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
        let (y, _) = l.forward(&x, Mode::Infer, &mut seed_rng(0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_train_mode_preserves_expectation() {
        let l = layer(LayerKind::Dropout { p: 0.5 });
        let x = Tensor::vector(vec![0.2, 1.0, -3.0, 0.7]).unwrap();
        let mut rng = seed_rng(11);
        let draws = 20_000;
        let mut mean = vec![0.0; 4];
        for _ in 0..draws {
            let (y, _) = l.forward(&x, Mode::Train, &mut rng).unwrap();
            for (m, v) in mean.iter_mut().zip(y.data()) {
                *m += v / draws as f64;
            }
        }
        for (m, v) in mean.iter().zip(x.data()) {
            assert!((m - v).abs() <= 0.02 * v.abs(), "{m} vs {v}");
        }
    }

    #[test]
    fn glorot_bounds_and_errors() {
        let mut rng = seed_rng(5);
        let t: Tensor<f32> = glorot_init(&mut rng, 3, 3, &[3, 3]).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        assert!(glorot_init::<f32>(&mut rng, 600, 0, &[600]).is_err());
    }

    #[test]
    fn glorot_mean_is_centered() {
        let mut rng = seed_rng(17);
        let t: Tensor<f64> = glorot_init(&mut rng, 50, 50, &[100_000]).unwrap();
        let mean = t.sum_f64() / t.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
    }

    #[test]
    fn with_params_checks_shapes() {
        let kind = LayerKind::Dense { input: 2, output: 2 };
        assert!(Layer::<f32>::with_params(kind, vec![Tensor::zeros(&[2, 3]), Tensor::zeros(&[2])]).is_err());
    }
}
