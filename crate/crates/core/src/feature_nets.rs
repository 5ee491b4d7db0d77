//! Modality-specific embedding networks.
//!
//! Every network ends in `Dense(emb_len) -> Sigmoid -> Dropout`, so embeddings
//! lie in `(0, 1)` at inference time.
//!
//! | modality | stack |
//! |---|---|
//! | text  | TokenEmbedding -> mean over sequence -> head |
//! | image | ConvRes(c0) -> ConvRes(c1) -> GlobalMaxPool -> head |
//! | audio | image stack on `[L,1,1]` (waveform) or `[H,W,1]` (spectrogram) |
//! | video | per-frame ConvRes(c0) -> channel concat -> ConvRes(c1) -> GlobalMaxPool -> head |
//! | vec   | flatten -> Dense(dense_units) -> ReLU -> head |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Layer, LayerKind, Mode, Rng, Scalar, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Video,
    Audio,
    Vec,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Video => "video",
            Modality::Audio => "audio",
            Modality::Vec => "vec",
        };
        f.write_str(s)
    }
}

fn default_token_embed_dim() -> usize {
    32
}
fn default_conv_channels() -> [usize; 2] {
    [32, 64]
}
fn default_dense_units() -> usize {
    128
}
fn default_emb_len() -> usize {
    200
}
fn default_dropout() -> f64 {
    0.5
}
fn default_frame_window() -> usize {
    4
}
fn default_kernel() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNetSpec {
    pub modality: Modality,
    /// text: `[seq_len]`; image: `[H, W, C]`; audio: `[L]` or `[H, W]`;
    /// video: `[frames, H, W, C]`; vec: any shape, flattened.
    pub input_dims: Vec<usize>,
    #[serde(default)]
    pub vocab_size: usize,
    #[serde(default = "default_token_embed_dim")]
    pub token_embed_dim: usize,
    #[serde(default = "default_conv_channels")]
    pub conv_channels: [usize; 2],
    #[serde(default = "default_dense_units")]
    pub dense_units: usize,
    #[serde(default = "default_emb_len")]
    pub emb_len: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_frame_window")]
    pub frame_window: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

impl FeatureNetSpec {
    pub fn new(modality: Modality, input_dims: Vec<usize>) -> Self {
        Self {
            modality,
            input_dims,
            vocab_size: 0,
            token_embed_dim: default_token_embed_dim(),
            conv_channels: default_conv_channels(),
            dense_units: default_dense_units(),
            emb_len: default_emb_len(),
            dropout_p: default_dropout(),
            frame_window: default_frame_window(),
            kernel: default_kernel(),
        }
    }

    pub fn text(seq_len: usize, vocab_size: usize) -> Self {
        Self {
            vocab_size,
            ..Self::new(Modality::Text, vec![seq_len])
        }
    }

    pub fn image(h: usize, w: usize, c: usize) -> Self {
        Self::new(Modality::Image, vec![h, w, c])
    }

    pub fn video(frames: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            frame_window: frames,
            ..Self::new(Modality::Video, vec![frames, h, w, c])
        }
    }

    pub fn audio(dims: Vec<usize>) -> Self {
        Self::new(Modality::Audio, dims)
    }

    pub fn vec(dims: Vec<usize>) -> Self {
        Self::new(Modality::Vec, dims)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.emb_len == 0 {
            return bad("emb_len must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.conv_channels.contains(&0) {
            return bad("conv_channels must be positive".into());
        }
        if self.input_dims.is_empty() || self.input_dims.contains(&0) {
            return bad(format!("input_dims {:?} must be non-empty and positive", self.input_dims));
        }
        let dims = self.input_dims.len();
        match self.modality {
            Modality::Text if dims != 1 => bad("text input_dims must be [seq_len]".into()),
            Modality::Text if self.vocab_size == 0 => bad("text requires vocab_size >= 1".into()),
            Modality::Text if self.token_embed_dim == 0 => bad("token_embed_dim must be >= 1".into()),
            Modality::Image if dims != 3 => bad("image input_dims must be [H, W, C]".into()),
            Modality::Audio if dims > 2 => bad("audio input_dims must be [L] or [H, W]".into()),
            Modality::Video if dims != 4 => bad("video input_dims must be [frames, H, W, C]".into()),
            Modality::Video if self.input_dims[0] != self.frame_window => bad(format!(
                "video frame_window {} disagrees with input_dims {:?}",
                self.frame_window, self.input_dims
            )),
            Modality::Vec if self.dense_units == 0 => bad("dense_units must be >= 1".into()),
            _ => Ok(()),
        }
    }

    /// The all-zero input of this modality (token id 0 for text).
    pub fn zero_input<T: Scalar>(&self) -> Tensor<T> {
        Tensor::zeros(&self.input_dims)
    }

    /// Fits a token sequence to the fixed text length: truncates, or pads
    /// with id 0.
    pub fn pad_tokens<T: Scalar>(&self, tokens: &[usize]) -> Result<Tensor<T>> {
        if self.modality != Modality::Text {
            return Err(Error::ModalityMismatch(format!("{} network takes no token ids", self.modality)));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::InvalidSpec(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        let len = self.input_dims[0];
        let data = (0..len)
            .map(|i| T::from_f64_lossy(tokens.get(i).copied().unwrap_or(0) as f64))
            .collect();
        Tensor::new(vec![len], data)
    }
}

/// `ConvStep(x) = LN(SepConv(ReLU(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStep<T = f32> {
    layers: [Layer<T>; 3],
}

impl<T: Scalar> ConvStep<T> {
    fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: [usize; 2], rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            layers: [
                Layer::new(LayerKind::ReLU, rng)?,
                Layer::new(
                    LayerKind::SepConv2D {
                        in_ch,
                        out_ch,
                        kernel,
                        stride,
                    },
                    rng,
                )?,
                Layer::new(LayerKind::LayerNorm { dim: out_ch }, rng)?,
            ],
        })
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, Vec<Tape<T>>)> {
        run_layers(&self.layers, x, mode, rng)
    }

    fn backward(&self, tapes: &mut [Tape<T>], g: &Tensor<T>, grads: &mut Vec<Tensor<T>>) -> Result<Tensor<T>> {
        backprop_layers(&self.layers, tapes, g, grads)
    }
}

fn run_layers<T: Scalar>(
    layers: &[Layer<T>],
    x: &Tensor<T>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Vec<Tape<T>>)> {
    let mut tapes = Vec::with_capacity(layers.len());
    let mut cur = x.clone();
    for l in layers {
        let (y, t) = l.forward(&cur, mode, rng)?;
        tapes.push(t);
        cur = y;
    }
    Ok((cur, tapes))
}

/// Backpropagates through `layers`, appending parameter gradients in
/// forward (storage) order.
fn backprop_layers<T: Scalar>(
    layers: &[Layer<T>],
    tapes: &mut [Tape<T>],
    g: &Tensor<T>,
    grads: &mut Vec<Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut cur = g.clone();
    for (l, t) in layers.iter().zip(tapes.iter_mut()).rev() {
        let gr = l.backward(t, &cur)?;
        cur = gr.input;
        per_layer.push(gr.params);
    }
    grads.extend(per_layer.into_iter().rev().flatten());
    Ok(cur)
}

/// Downsampling residual block: `MaxPool(c2(c1(x))) + ConvStep_s2(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvResBlock<T = f32> {
    first: ConvStep<T>,
    second: ConvStep<T>,
    pool: Layer<T>,
    shortcut: ConvStep<T>,
    one_dimensional: bool,
}

#[derive(Debug)]
struct ConvResTape<T> {
    first: Vec<Tape<T>>,
    second: Vec<Tape<T>>,
    pool: Tape<T>,
    shortcut: Vec<Tape<T>>,
}

impl<T: Scalar> ConvResBlock<T> {
    /// `one_dimensional` pools and strides along H only, for `[L, 1, C]` maps.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, one_dimensional: bool, rng: &mut Rng) -> Result<Self> {
        let down = if one_dimensional { [2, 1] } else { [2, 2] };
        Ok(Self {
            first: ConvStep::new(in_ch, out_ch, kernel, [1, 1], rng)?,
            second: ConvStep::new(out_ch, out_ch, kernel, [1, 1], rng)?,
            pool: Layer::new(LayerKind::MaxPool2D { window: down }, rng)?,
            shortcut: ConvStep::new(in_ch, out_ch, kernel, down, rng)?,
            one_dimensional,
        })
    }

    fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.first
            .layers
            .iter()
            .chain(&self.second.layers)
            .chain(std::iter::once(&self.pool))
            .chain(&self.shortcut.layers)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.first
            .layers
            .iter_mut()
            .chain(self.second.layers.iter_mut())
            .chain(std::iter::once(&mut self.pool))
            .chain(self.shortcut.layers.iter_mut())
    }

    fn check_spatial(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 3 {
            return Err(Error::shape("conv_res_block input (H, W, C)", &[0, 0, 0], x.shape()));
        }
        let (h, w) = (x.shape()[0], x.shape()[1]);
        if h < 2 || (!self.one_dimensional && w < 2) {
            return Err(Error::SpatialTooSmall { height: h, width: w });
        }
        Ok(())
    }

    fn forward_taped(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, ConvResTape<T>)> {
        self.check_spatial(x)?;
        let (a, first) = self.first.forward(x, mode, rng)?;
        let (b, second) = self.second.forward(&a, mode, rng)?;
        let (mut out, pool) = self.pool.forward(&b, mode, rng)?;
        let (s, shortcut) = self.shortcut.forward(x, mode, rng)?;
        out.add_assign(&s)?;
        Ok((
            out,
            ConvResTape {
                first,
                second,
                pool,
                shortcut,
            },
        ))
    }

    fn backward(&self, tape: &mut ConvResTape<T>, g: &Tensor<T>, grads: &mut Vec<Tensor<T>>) -> Result<Tensor<T>> {
        let gb = self.pool.backward(&mut tape.pool, g)?;
        let mut main_grads = Vec::new();
        let ga = self.second.backward(&mut tape.second, &gb.input, &mut main_grads)?;
        let mut first_grads = Vec::new();
        let mut gx = self.first.backward(&mut tape.first, &ga, &mut first_grads)?;
        let mut short_grads = Vec::new();
        let gs = self.shortcut.backward(&mut tape.shortcut, g, &mut short_grads)?;
        gx.add_assign(&gs)?;
        grads.extend(first_grads);
        grads.extend(main_grads);
        grads.extend(short_grads);
        Ok(gx)
    }
}

/// Applies one residual block to an `[H, W, C]` feature map.
pub fn conv_res_block<T: Scalar>(x: &Tensor<T>, block: &ConvResBlock<T>) -> Result<Tensor<T>> {
    let mut rng = Rng::new(0);
    block.forward_taped(x, Mode::Infer, &mut rng).map(|(y, _)| y)
}

#[derive(Clone, Debug, PartialEq)]
enum Stage<T> {
    Reshape(Vec<usize>),
    Layer(Layer<T>),
    ConvRes(ConvResBlock<T>),
    /// One block per frame of a `[F, H, W, C]` window, outputs concatenated
    /// along channels.
    Framewise(Vec<ConvResBlock<T>>),
    MeanOverRows,
}

#[derive(Debug)]
enum StageTape<T> {
    Reshape(Vec<usize>),
    Layer(Tape<T>),
    ConvRes(ConvResTape<T>),
    Framewise {
        frame_shape: Vec<usize>,
        frames: Vec<ConvResTape<T>>,
        channels: usize,
    },
    Mean {
        rows: usize,
        dim: usize,
    },
}

/// Activations of one [`FeatureNet`] forward pass.
#[derive(Debug)]
pub struct NetTape<T = f32> {
    stages: Option<Vec<StageTape<T>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet<T = f32> {
    spec: FeatureNetSpec,
    stages: Vec<Stage<T>>,
}

pub fn build_feature_net<T: Scalar>(spec: &FeatureNetSpec, rng: &mut Rng) -> Result<FeatureNet<T>> {
    FeatureNet::new(spec.clone(), rng)
}

impl<T: Scalar> FeatureNet<T> {
    pub fn new(spec: FeatureNetSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let [c0, c1] = spec.conv_channels;
        let k = spec.kernel;
        let mut stages = Vec::new();
        let trunk_out = match spec.modality {
            Modality::Text => {
                stages.push(Stage::Layer(Layer::new(
                    LayerKind::TokenEmbedding {
                        vocab: spec.vocab_size,
                        dim: spec.token_embed_dim,
                    },
                    rng,
                )?));
                stages.push(Stage::MeanOverRows);
                spec.token_embed_dim
            }
            Modality::Image | Modality::Audio => {
                let (map, one_d) = match (spec.modality, spec.input_dims.as_slice()) {
                    (Modality::Audio, [l]) => (vec![*l, 1, 1], true),
                    (Modality::Audio, [h, w]) => (vec![*h, *w, 1], false),
                    (_, dims) => (dims.to_vec(), false),
                };
                let channels = map[2];
                stages.push(Stage::Reshape(map));
                stages.push(Stage::ConvRes(ConvResBlock::new(channels, c0, k, one_d, rng)?));
                stages.push(Stage::ConvRes(ConvResBlock::new(c0, c1, k, one_d, rng)?));
                stages.push(Stage::Layer(Layer::new(LayerKind::GlobalMaxPool, rng)?));
                c1
            }
            Modality::Video => {
                let channels = spec.input_dims[3];
                let blocks = (0..spec.frame_window)
                    .map(|_| ConvResBlock::new(channels, c0, k, false, rng))
                    .collect::<Result<Vec<_>>>()?;
                stages.push(Stage::Framewise(blocks));
                stages.push(Stage::ConvRes(ConvResBlock::new(c0 * spec.frame_window, c1, k, false, rng)?));
                stages.push(Stage::Layer(Layer::new(LayerKind::GlobalMaxPool, rng)?));
                c1
            }
            Modality::Vec => {
                let n: usize = spec.input_dims.iter().product();
                stages.push(Stage::Reshape(vec![n]));
                stages.push(Stage::Layer(Layer::new(
                    LayerKind::Dense {
                        input: n,
                        output: spec.dense_units,
                    },
                    rng,
                )?));
                stages.push(Stage::Layer(Layer::new(LayerKind::ReLU, rng)?));
                spec.dense_units
            }
        };
        stages.push(Stage::Layer(Layer::new(
            LayerKind::Dense {
                input: trunk_out,
                output: spec.emb_len,
            },
            rng,
        )?));
        stages.push(Stage::Layer(Layer::new(LayerKind::Sigmoid, rng)?));
        stages.push(Stage::Layer(Layer::new(LayerKind::Dropout { p: spec.dropout_p }, rng)?));
        Ok(Self { spec, stages })
    }

    /// Rebuilds a network from stored parameters (in [`Self::params`] order).
    pub fn from_params(spec: FeatureNetSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        let mut net = Self::new(spec, &mut Rng::new(0))?;
        let slots = net.params_mut();
        if slots.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "network has {} parameter tensors, {} supplied",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            p.expect_shape("stored parameter", slot.shape())?;
            *slot = p;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &FeatureNetSpec {
        &self.spec
    }

    pub fn emb_len(&self) -> usize {
        self.spec.emb_len
    }

    /// Every layer in evaluation order (per-frame blocks in frame order).
    pub fn layers(&self) -> Vec<&Layer<T>> {
        let mut out = Vec::new();
        for s in &self.stages {
            match s {
                Stage::Layer(l) => out.push(l),
                Stage::ConvRes(b) => out.extend(b.layers()),
                Stage::Framewise(bs) => bs.iter().for_each(|b| out.extend(b.layers())),
                Stage::Reshape(_) | Stage::MeanOverRows => {}
            }
        }
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer<T>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            match s {
                Stage::Layer(l) => out.push(l),
                Stage::ConvRes(b) => out.extend(b.layers_mut()),
                Stage::Framewise(bs) => bs.iter_mut().for_each(|b| out.extend(b.layers_mut())),
                Stage::Reshape(_) | Stage::MeanOverRows => {}
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers().into_iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| l.params_mut().iter_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Number of parameterised or activation layers, frames counted once.
    pub fn depth(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::Layer(_) => 1,
                Stage::ConvRes(b) => b.layers().count(),
                Stage::Framewise(bs) => bs.first().map_or(0, |b| b.layers().count()),
                Stage::Reshape(_) | Stage::MeanOverRows => 0,
            })
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> FeatureNet<U> {
        let params: Vec<Tensor<U>> = self.params().into_iter().map(|p| p.cast()).collect();
        FeatureNet::from_params(self.spec.clone(), params).expect("same spec, same shapes")
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, NetTape<T>)> {
        x.expect_shape(&format!("{} input", self.spec.modality), &self.spec.input_dims)?;
        let mut cur = x.clone();
        let mut tapes = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (next, tape) = match stage {
                Stage::Reshape(shape) => {
                    let from = cur.shape().to_vec();
                    (cur.reshape(shape)?, StageTape::Reshape(from))
                }
                Stage::Layer(l) => {
                    let (y, t) = l.forward(&cur, mode, rng)?;
                    (y, StageTape::Layer(t))
                }
                Stage::ConvRes(b) => {
                    let (y, t) = b.forward_taped(&cur, mode, rng)?;
                    (y, StageTape::ConvRes(t))
                }
                Stage::Framewise(blocks) => {
                    let frame_shape = cur.shape()[1..].to_vec();
                    let frame_len: usize = frame_shape.iter().product();
                    let mut outs = Vec::with_capacity(blocks.len());
                    let mut frames = Vec::with_capacity(blocks.len());
                    for (f, b) in blocks.iter().enumerate() {
                        let frame = Tensor::from_parts(
                            frame_shape.clone(),
                            cur.data()[f * frame_len..(f + 1) * frame_len].to_vec(),
                        );
                        let (y, t) = b.forward_taped(&frame, mode, rng)?;
                        outs.push(y);
                        frames.push(t);
                    }
                    let (y, channels) = concat_channels(&outs);
                    (
                        y,
                        StageTape::Framewise {
                            frame_shape,
                            frames,
                            channels,
                        },
                    )
                }
                Stage::MeanOverRows => {
                    let (rows, dim) = (cur.shape()[0], cur.shape()[1]);
                    let mut acc = vec![0.0f64; dim];
                    for r in 0..rows {
                        for (a, v) in acc.iter_mut().zip(&cur.data()[r * dim..(r + 1) * dim]) {
                            *a += v.to_f64_lossy();
                        }
                    }
                    let mean = acc.into_iter().map(|a| T::from_f64_lossy(a / rows as f64)).collect();
                    (Tensor::from_parts(vec![dim], mean), StageTape::Mean { rows, dim })
                }
            };
            tapes.push(tape);
            cur = next;
        }
        Ok((cur, NetTape { stages: Some(tapes) }))
    }

    /// Returns gradients for every parameter (in [`Self::params`] order) and
    /// for the input.
    pub fn backward(&self, tape: &mut NetTape<T>, grad_out: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let mut tapes = tape.stages.take().ok_or(Error::TapeConsumed)?;
        let mut chunks: Vec<Vec<Tensor<T>>> = Vec::with_capacity(self.stages.len());
        let mut g = grad_out.clone();
        for (stage, tape) in self.stages.iter().zip(tapes.iter_mut()).rev() {
            let mut grads = Vec::new();
            g = match (stage, tape) {
                (Stage::Reshape(_), StageTape::Reshape(from)) => g.reshape(from)?,
                (Stage::Layer(l), StageTape::Layer(t)) => {
                    let gr = l.backward(t, &g)?;
                    grads = gr.params;
                    gr.input
                }
                (Stage::ConvRes(b), StageTape::ConvRes(t)) => b.backward(t, &g, &mut grads)?,
                (
                    Stage::Framewise(blocks),
                    StageTape::Framewise {
                        frame_shape,
                        frames,
                        channels,
                    },
                ) => {
                    let parts = split_channels(&g, *channels, blocks.len());
                    let mut gx = Vec::with_capacity(blocks.len() * frame_shape.iter().product::<usize>());
                    for ((b, t), gp) in blocks.iter().zip(frames.iter_mut()).zip(&parts) {
                        gx.extend_from_slice(b.backward(t, gp, &mut grads)?.data());
                    }
                    let mut shape = vec![blocks.len()];
                    shape.extend_from_slice(frame_shape);
                    Tensor::from_parts(shape, gx)
                }
                (Stage::MeanOverRows, StageTape::Mean { rows, dim }) => {
                    let inv = T::from_f64_lossy(1.0 / *rows as f64);
                    let row: Vec<T> = g.data().iter().map(|&v| v * inv).collect();
                    let data = (0..*rows).flat_map(|_| row.iter().copied()).collect();
                    Tensor::from_parts(vec![*rows, *dim], data)
                }
                _ => return Err(Error::TapeMismatch("network tape out of sync with stages".into())),
            };
            chunks.push(grads);
        }
        let grads = chunks.into_iter().rev().flatten().collect();
        Ok((grads, g))
    }

    pub fn embed(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        self.forward(x, mode, rng).map(|(y, _)| y)
    }
}

fn concat_channels<T: Scalar>(maps: &[Tensor<T>]) -> (Tensor<T>, usize) {
    let (h, w, c) = (maps[0].shape()[0], maps[0].shape()[1], maps[0].shape()[2]);
    let total = c * maps.len();
    let mut out = Vec::with_capacity(h * w * total);
    for p in 0..h * w {
        for m in maps {
            out.extend_from_slice(&m.data()[p * c..(p + 1) * c]);
        }
    }
    (Tensor::from_parts(vec![h, w, total], out), c)
}

fn split_channels<T: Scalar>(g: &Tensor<T>, c: usize, parts: usize) -> Vec<Tensor<T>> {
    let (h, w) = (g.shape()[0], g.shape()[1]);
    (0..parts)
        .map(|f| {
            let mut d = Vec::with_capacity(h * w * c);
            for p in 0..h * w {
                let base = p * c * parts + f * c;
                d.extend_from_slice(&g.data()[base..base + c]);
            }
            Tensor::from_parts(vec![h, w, c], d)
        })
        .collect()
}
