//! The unified SKIP/REUSE filter `g = g_cls ∘ g_modality`.
//!
//! A pair of inputs is scored by `σ(Σ_j w_tj |e1_j − e2_j| + b_t)`, one row of
//! `w` per task. SKIP is the same machinery with the second input fixed to
//! the all-zero input, whose embedding is cached.
//!
//! Scores are interpreted as "not redundant / run inference" probability for
//! SKIP and as a learned distance for REUSE.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_nets::{FeatureNet, FeatureNetSpec};
use crate::numerics::{adam_step, glorot_init, read_tensor, write_tensor, Mode, OptimizerState, Rng, Scalar, Tensor};

/// Clamp applied to scores before taking logarithms.
pub const BCE_CLAMP: f64 = 1e-7;
pub const CONTRASTIVE_MARGIN: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Skip,
    Reuse,
}

impl FilterKind {
    pub fn loss(self) -> LossKind {
        match self {
            FilterKind::Skip => LossKind::Bce,
            FilterKind::Reuse => LossKind::Contrastive,
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterKind::Skip => "skip",
            FilterKind::Reuse => "reuse",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    /// Margin fixed at [`CONTRASTIVE_MARGIN`].
    Contrastive,
}

fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the loss matching the model kind.
    #[serde(default)]
    pub loss: Option<LossKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            loss: None,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self, kind: FilterKind) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidSpec(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidSpec("batch_size and epochs must be positive".into()));
        }
        match self.loss {
            Some(l) if l != kind.loss() => Err(Error::Mode(format!("{kind} filter cannot be trained with {l:?} loss"))),
            _ => Ok(()),
        }
    }
}

/// `w: [tasks, width]`, `b: [tasks]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T = f32> {
    w: Tensor<T>,
    b: Tensor<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(tasks: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        if tasks == 0 || width == 0 {
            return Err(Error::InvalidSpec("classifier needs at least one task and one input".into()));
        }
        Ok(Self {
            w: glorot_init(rng, width, 1, &[tasks, width])?,
            b: Tensor::zeros(&[tasks]),
        })
    }

    pub fn from_parts(w: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        if w.rank() != 2 {
            return Err(Error::shape("classifier weight", &[1, w.len()], w.shape()));
        }
        b.expect_shape("classifier bias", &[w.shape()[0]])?;
        Ok(Self { w, b })
    }

    pub fn tasks(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.w
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.b
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Pre-activation `Σ_j w_tj |e1_j − e2_j| + b_t` for task `t`, in f64.
    pub fn logit(&self, t: usize, e1: &[T], e2: &[T]) -> f64 {
        let row = &self.w.data()[t * self.width()..(t + 1) * self.width()];
        let s: f64 = row
            .iter()
            .zip(e1.iter().zip(e2))
            .map(|(w, (a, b))| w.to_f64_lossy() * (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .sum();
        s + self.b.data()[t].to_f64_lossy()
    }

    pub fn scores(&self, e1: &[T], e2: &[T]) -> Vec<f64> {
        (0..self.tasks()).map(|t| sigmoid(self.logit(t, e1, e2))).collect()
    }

    fn cast<U: Scalar>(&self) -> Classifier<U> {
        Classifier {
            w: self.w.cast(),
            b: self.b.cast(),
        }
    }
}

/// Logistic function, kept strictly inside `(0, 1)`.
pub fn sigmoid(s: f64) -> f64 {
    let z = if s >= 0.0 { 1.0 / (1.0 + (-s).exp()) } else { s.exp() / (1.0 + s.exp()) };
    z.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Binary cross-entropy and its derivative with respect to `z`.
pub fn bce_loss(z: f64, label: u8) -> (f64, f64) {
    let z = z.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if label == 1 {
        (-z.ln(), -1.0 / z)
    } else {
        (-(1.0 - z).ln(), 1.0 / (1.0 - z))
    }
}

/// Binary cross-entropy of `sigmoid(s)` computed from the logit, with its
/// derivative `sigmoid(s) − label` with respect to `s`.
pub fn bce_with_logit(s: f64, label: u8) -> (f64, f64) {
    let softplus = |v: f64| v.max(0.0) + (-v.abs()).exp().ln_1p();
    let loss = if label == 1 { softplus(-s) } else { softplus(s) };
    let z = if s >= 0.0 { 1.0 / (1.0 + (-s).exp()) } else { s.exp() / (1.0 + s.exp()) };
    (loss, z - f64::from(label))
}

/// Contrastive loss on a learned distance `d`: `d²` for similar pairs
/// (label 0), `max(0, 1 − d)²` for dissimilar ones (label 1).
pub fn contrastive_loss(d: f64, label: u8) -> (f64, f64) {
    if label == 0 {
        (d * d, 2.0 * d)
    } else {
        let gap = (CONTRASTIVE_MARGIN - d).max(0.0);
        (gap * gap, -2.0 * gap)
    }
}

/// Training targets: redundancy labels for SKIP, discrete inference results
/// for REUSE (pair labels are `1(y_i ≠ y_j)`).
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    /// One `{0,1}` label per sample and task, row-major `[n, tasks]`.
    Redundancy(&'a [u8]),
    Results(&'a [i64]),
}

/// One input per modality of the filter.
pub type Input<T = f32> = Vec<Tensor<T>>;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterModel<T = f32> {
    kind: FilterKind,
    nets: Vec<FeatureNet<T>>,
    classifier: Classifier<T>,
    zero_embedding: Option<Tensor<T>>,
}

impl<T: Scalar> FilterModel<T> {
    pub fn new(kind: FilterKind, specs: &[FeatureNetSpec], tasks: usize, rng: &mut Rng) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidSpec("a filter needs at least one feature network".into()));
        }
        if kind == FilterKind::Reuse && tasks != 1 {
            return Err(Error::InvalidSpec("reuse filters have exactly one task".into()));
        }
        let nets = specs
            .iter()
            .map(|s| FeatureNet::new(s.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        let width = nets.iter().map(|n| n.emb_len()).sum();
        let classifier = Classifier::new(tasks, width, rng)?;
        Self::assemble(kind, nets, classifier)
    }

    pub fn from_parts(kind: FilterKind, nets: Vec<FeatureNet<T>>, classifier: Classifier<T>) -> Result<Self> {
        let width: usize = nets.iter().map(|n| n.emb_len()).sum();
        if nets.is_empty() || width != classifier.width() {
            return Err(Error::InvalidSpec(format!(
                "classifier width {} does not match total embedding length {width}",
                classifier.width()
            )));
        }
        Self::assemble(kind, nets, classifier)
    }

    fn assemble(kind: FilterKind, nets: Vec<FeatureNet<T>>, classifier: Classifier<T>) -> Result<Self> {
        let mut model = Self {
            kind,
            nets,
            classifier,
            zero_embedding: None,
        };
        model.refresh()?;
        Ok(model)
    }

    /// Recomputes the cached zero-input embedding after a parameter change.
    fn refresh(&mut self) -> Result<()> {
        self.zero_embedding = match self.kind {
            FilterKind::Skip => Some(self.embed(&self.zero_input())?),
            FilterKind::Reuse => None,
        };
        Ok(())
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn nets(&self) -> &[FeatureNet<T>] {
        &self.nets
    }

    pub fn classifier(&self) -> &Classifier<T> {
        &self.classifier
    }

    pub fn tasks(&self) -> usize {
        self.classifier.tasks()
    }

    pub fn zero_embedding(&self) -> Option<&Tensor<T>> {
        self.zero_embedding.as_ref()
    }

    pub fn specs(&self) -> Vec<FeatureNetSpec> {
        self.nets.iter().map(|n| n.spec().clone()).collect()
    }

    pub fn zero_input(&self) -> Input<T> {
        self.nets.iter().map(|n| n.spec().zero_input()).collect()
    }

    /// Feature-network parameters (net by net) followed by `w` and `b`.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.nets.iter().flat_map(|n| n.params()).collect();
        out.push(&self.classifier.w);
        out.push(&self.classifier.b);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.nets.iter_mut().flat_map(|n| n.params_mut()).collect();
        out.push(&mut self.classifier.w);
        out.push(&mut self.classifier.b);
        out
    }

    /// Replaces every parameter (in [`Self::params`] order).
    pub fn set_params(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        let slots = self.params_mut();
        if slots.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "model has {} parameter tensors, {} supplied",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.iter().zip(&params) {
            p.expect_shape("model parameter", slot.shape())?;
        }
        for (slot, p) in slots.into_iter().zip(params) {
            *slot = p;
        }
        self.refresh()
    }

    pub fn param_count(&self) -> usize {
        self.feature_param_count() + self.classifier.param_count()
    }

    pub fn feature_param_count(&self) -> usize {
        self.nets.iter().map(|n| n.param_count()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> FilterModel<U> {
        FilterModel::from_parts(self.kind, self.nets.iter().map(|n| n.cast()).collect(), self.classifier.cast())
            .expect("cast preserves shapes")
    }

    fn check_input(&self, x: &[Tensor<T>]) -> Result<()> {
        if x.len() != self.nets.len() {
            return Err(Error::ModalityMismatch(format!(
                "filter has {} modalities, input has {}",
                self.nets.len(),
                x.len()
            )));
        }
        for (net, t) in self.nets.iter().zip(x) {
            if t.shape() != net.spec().input_dims.as_slice() {
                return Err(Error::ModalityMismatch(format!(
                    "{} network expects {:?}, got {:?}",
                    net.spec().modality,
                    net.spec().input_dims,
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Concatenated inference-mode embedding of all modalities.
    pub fn embed(&self, x: &[Tensor<T>]) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut rng = Rng::new(0);
        let mut data = Vec::with_capacity(self.classifier.width());
        for (net, t) in self.nets.iter().zip(x) {
            data.extend_from_slice(net.embed(t, Mode::Infer, &mut rng)?.data());
        }
        Tensor::vector(data)
    }

    /// Per-task scores of a pair; symmetric in its arguments.
    pub fn pair_score(&self, x1: &[Tensor<T>], x2: &[Tensor<T>]) -> Result<Vec<f64>> {
        let e1 = self.embed(x1)?;
        let e2 = self.embed(x2)?;
        Ok(self.classifier.scores(e1.data(), e2.data()))
    }

    /// Per-task SKIP scores against the cached zero embedding.
    pub fn multitask_scores(&self, x: &[Tensor<T>]) -> Result<Vec<f64>> {
        let e = self.embed(x)?;
        self.multitask_scores_from_embedding(&e)
    }

    pub fn multitask_scores_from_embedding(&self, e: &Tensor<T>) -> Result<Vec<f64>> {
        let e0 = self.zero_embedding.as_ref().ok_or(Error::MissingZeroEmbedding)?;
        Ok(self.classifier.scores(e.data(), e0.data()))
    }

    /// Probability that `x` is not redundant (task 0).
    pub fn skip_score(&self, x: &[Tensor<T>]) -> Result<f64> {
        Ok(self.multitask_scores(x)?[0])
    }

    /// Learned distance between two embeddings (task 0).
    pub fn distance(&self, e1: &[T], e2: &[T]) -> f64 {
        sigmoid(self.classifier.logit(0, e1, e2))
    }

    /// Mean loss over one batch and the gradient of that mean with respect
    /// to every parameter. Dropout masks are drawn from `rng`.
    pub fn batch_loss(&self, batch: &[&Input<T>], targets: BatchTargets<'_>, rng: &mut Rng) -> Result<(f64, Vec<Tensor<T>>)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for x in batch {
            self.check_input(x)?;
        }
        let width = self.classifier.width();
        let tasks = self.tasks();
        let mut gw = vec![0.0f64; tasks * width];
        let mut gb = vec![0.0f64; tasks];
        let mut net_grads: Vec<Vec<f64>> = self.params()[..self.params().len() - 2]
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect();

        let mut passes: Vec<(Vec<f64>, Vec<crate::feature_nets::NetTape<T>>)> = Vec::with_capacity(batch.len() + 1);
        let run = |x: &[Tensor<T>], rng: &mut Rng| -> Result<(Vec<f64>, Vec<crate::feature_nets::NetTape<T>>)> {
            let mut e = Vec::with_capacity(width);
            let mut tapes = Vec::with_capacity(x.len());
            for (net, t) in self.nets.iter().zip(x) {
                let (y, tape) = net.forward(t, Mode::Train, rng)?;
                e.extend(y.data().iter().map(|v| v.to_f64_lossy()));
                tapes.push(tape);
            }
            Ok((e, tapes))
        };

        let loss;
        let mut grad_e: Vec<Vec<f64>>;
        match targets {
            BatchTargets::Redundancy(labels) => {
                if self.kind != FilterKind::Skip {
                    return Err(Error::Mode("redundancy labels train skip filters".into()));
                }
                if labels.len() != batch.len() * tasks {
                    return Err(Error::InvalidSpec(format!(
                        "{} labels for {} samples x {tasks} tasks",
                        labels.len(),
                        batch.len()
                    )));
                }
                let zero = self.zero_input();
                passes.push(run(&zero, rng)?);
                for x in batch {
                    passes.push(run(x, rng)?);
                }
                grad_e = vec![vec![0.0; width]; passes.len()];
                let n = batch.len() as f64;
                let mut total = 0.0;
                for i in 0..batch.len() {
                    let (e0, e) = (&passes[0].0, &passes[i + 1].0);
                    for t in 0..tasks {
                        let label = labels[i * tasks + t];
                        if label > 1 {
                            return Err(Error::InvalidLabel(label));
                        }
                        let s = logit_f64(&self.classifier, t, e, e0);
                        let (l, ds) = bce_with_logit(s, label);
                        total += l;
                        let ds = ds / n;
                        accumulate_pair(&self.classifier, t, ds, e, e0, &mut gw, &mut gb, &mut grad_e, i + 1, 0);
                    }
                }
                loss = total / n;
            }
            BatchTargets::Results(results) => {
                if self.kind != FilterKind::Reuse {
                    return Err(Error::Mode("result labels train reuse filters".into()));
                }
                if results.len() != batch.len() {
                    return Err(Error::InvalidSpec(format!("{} results for {} samples", results.len(), batch.len())));
                }
                for x in batch {
                    passes.push(run(x, rng)?);
                }
                grad_e = vec![vec![0.0; width]; passes.len()];
                let pairs = batch.len() * (batch.len() - 1) / 2;
                if pairs == 0 {
                    loss = 0.0;
                } else {
                    let n = pairs as f64;
                    let mut total = 0.0;
                    for i in 0..batch.len() {
                        for j in i + 1..batch.len() {
                            let label = u8::from(results[i] != results[j]);
                            let (ei, ej) = (&passes[i].0, &passes[j].0);
                            let s = logit_f64(&self.classifier, 0, ei, ej);
                            let d = sigmoid(s);
                            let (l, dd) = contrastive_loss(d, label);
                            total += l;
                            let ds = dd * d * (1.0 - d) / n;
                            accumulate_pair(&self.classifier, 0, ds, ei, ej, &mut gw, &mut gb, &mut grad_e, i, j);
                        }
                    }
                    loss = total / n;
                }
            }
        }

        for ((_, mut tapes), ge) in passes.into_iter().zip(&grad_e) {
            let mut offset = 0;
            let mut slot = 0;
            for (net, tape) in self.nets.iter().zip(tapes.iter_mut()) {
                let len = net.emb_len();
                let g = Tensor::from_parts(vec![len], ge[offset..offset + len].iter().map(|&v| T::from_f64_lossy(v)).collect());
                let (grads, _) = net.backward(tape, &g)?;
                for p in grads {
                    for (acc, v) in net_grads[slot].iter_mut().zip(p.data()) {
                        *acc += v.to_f64_lossy();
                    }
                    slot += 1;
                }
                offset += len;
            }
        }

        let to_t = |shape: &[usize], v: Vec<f64>| Tensor::from_parts(shape.to_vec(), v.into_iter().map(T::from_f64_lossy).collect());
        let mut grads: Vec<Tensor<T>> = self.params()[..net_grads.len()]
            .iter()
            .zip(net_grads)
            .map(|(p, g)| to_t(p.shape(), g))
            .collect();
        grads.push(to_t(&[tasks, width], gw));
        grads.push(to_t(&[tasks], gb));
        Ok((loss, grads))
    }

    /// Trains every parameter end to end and returns the mean loss of each
    /// epoch. Warm-starts from the current weights.
    pub fn train(&mut self, inputs: &[Input<T>], targets: Targets<'_>, cfg: &TrainConfig) -> Result<Vec<f64>> {
        cfg.validate(self.kind)?;
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let tasks = self.tasks();
        match (self.kind, targets) {
            (FilterKind::Skip, Targets::Results(_)) => return Err(Error::Mode("result labels train reuse filters".into())),
            (FilterKind::Reuse, Targets::Redundancy(_)) => {
                return Err(Error::Mode("redundancy labels train skip filters".into()))
            }
            _ => {}
        }
        match targets {
            Targets::Redundancy(l) => {
                if l.len() != inputs.len() * tasks {
                    return Err(Error::InvalidSpec(format!("{} labels for {} samples x {tasks} tasks", l.len(), inputs.len())));
                }
                if let Some(&bad) = l.iter().find(|&&v| v > 1) {
                    return Err(Error::InvalidLabel(bad));
                }
            }
            Targets::Results(r) if r.len() != inputs.len() => {
                return Err(Error::InvalidSpec(format!("{} results for {} samples", r.len(), inputs.len())));
            }
            Targets::Results(_) => {}
        }
        let mut rng = Rng::new(cfg.seed);
        let mut opt = OptimizerState::new(cfg.learning_rate);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let mut epoch_loss = 0.0;
            let mut weight = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Input<T>> = chunk.iter().map(|&i| &inputs[i]).collect();
                let (loss, grads, w) = match targets {
                    Targets::Redundancy(l) => {
                        let labels: Vec<u8> = chunk.iter().flat_map(|&i| l[i * tasks..(i + 1) * tasks].iter().copied()).collect();
                        let (loss, g) = self.batch_loss(&batch, BatchTargets::Redundancy(&labels), &mut rng)?;
                        (loss, g, chunk.len() as f64)
                    }
                    Targets::Results(r) => {
                        if chunk.len() < 2 {
                            continue;
                        }
                        let results: Vec<i64> = chunk.iter().map(|&i| r[i]).collect();
                        let (loss, g) = self.batch_loss(&batch, BatchTargets::Results(&results), &mut rng)?;
                        (loss, g, (chunk.len() * (chunk.len() - 1) / 2) as f64)
                    }
                };
                adam_step(self.params_mut(), &grads, &mut opt)?;
                epoch_loss += loss * w;
                weight += w;
            }
            trace.push(if weight > 0.0 { epoch_loss / weight } else { 0.0 });
        }
        for p in self.params() {
            p.ensure_finite("training")?;
        }
        self.refresh()?;
        Ok(trace)
    }
}

/// Targets for a single batch, aligned with the batch order.
#[derive(Clone, Copy, Debug)]
pub enum BatchTargets<'a> {
    Redundancy(&'a [u8]),
    Results(&'a [i64]),
}

fn logit_f64<T: Scalar>(c: &Classifier<T>, t: usize, e1: &[f64], e2: &[f64]) -> f64 {
    let width = c.width();
    let row = &c.w.data()[t * width..(t + 1) * width];
    let s: f64 = row
        .iter()
        .zip(e1.iter().zip(e2))
        .map(|(w, (a, b))| w.to_f64_lossy() * (a - b).abs())
        .sum();
    s + c.b.data()[t].to_f64_lossy()
}

#[allow(clippy::too_many_arguments)]
fn accumulate_pair<T: Scalar>(
    c: &Classifier<T>,
    t: usize,
    ds: f64,
    e1: &[f64],
    e2: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    grad_e: &mut [Vec<f64>],
    i1: usize,
    i2: usize,
) {
    let width = c.width();
    let row = &c.w.data()[t * width..(t + 1) * width];
    gb[t] += ds;
    for j in 0..width {
        let diff = e1[j] - e2[j];
        gw[t * width + j] += ds * diff.abs();
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        let g = ds * row[j].to_f64_lossy() * sign;
        grad_e[i1][j] += g;
        grad_e[i2][j] -= g;
    }
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    kind: FilterKind,
    tasks: usize,
    nets: Vec<FeatureNetSpec>,
    params: Vec<String>,
}

const MANIFEST: &str = "model.json";

impl FilterModel<f32> {
    /// Writes `model.json` plus one tensor file per parameter.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params = self.params();
        let names: Vec<String> = (0..params.len()).map(|i| format!("param_{i:03}.ift")).collect();
        for (name, p) in names.iter().zip(&params) {
            write_tensor(&dir.join(name), p)?;
        }
        let manifest = ModelManifest {
            kind: self.kind,
            tasks: self.tasks(),
            nets: self.specs(),
            params: names,
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut model = Self::new(manifest.kind, &manifest.nets, manifest.tasks, &mut Rng::new(0))
            .map_err(|e| Error::format(&path, e.to_string()))?;
        let params = manifest
            .params
            .iter()
            .map(|n| read_tensor(&dir.join(n)))
            .collect::<Result<Vec<_>>>()?;
        model.set_params(params).map_err(|e| Error::format(&path, e.to_string()))?;
        Ok(model)
    }
}
