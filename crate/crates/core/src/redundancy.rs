//! Redundancy measurements `f_h`, reuse pair labels and synthetic workloads.
//!
//! `z = 1` means "not redundant, keep the input"; `z = 0` means the output
//! of `h` would have been redundant.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numerics::{read_tensor, write_tensor, Rng, Tensor};

/// An output `y = h(x)` of the inference model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelOutput {
    ClassProbs(Vec<f64>),
    Scalar(f64),
    /// Detected items; the count is the length.
    ItemSet(Vec<i64>),
    Label(i64),
}

impl ModelOutput {
    pub fn variant(&self) -> &'static str {
        match self {
            ModelOutput::ClassProbs(_) => "class_probs",
            ModelOutput::Scalar(_) => "scalar",
            ModelOutput::ItemSet(_) => "item_set",
            ModelOutput::Label(_) => "label",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelOutput::ClassProbs(p) => {
                let sum: f64 = p.iter().sum();
                if p.is_empty() || p.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-5 {
                    return Err(Error::InvalidSpec(format!("class probabilities {p:?} do not sum to 1")));
                }
                Ok(())
            }
            ModelOutput::Scalar(v) if !v.is_finite() => Err(Error::NonFinite("scalar output".into())),
            _ => Ok(()),
        }
    }

    /// Index of the most probable class (lowest index on ties).
    pub fn argmax(&self) -> Option<usize> {
        match self {
            ModelOutput::ClassProbs(p) => Some(
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0,
            ),
            _ => None,
        }
    }

    /// Discrete value used to compare two outputs for reuse.
    pub fn discrete_key(&self, disc: Discretization) -> Result<DiscreteKey> {
        match self {
            ModelOutput::Label(l) => Ok(DiscreteKey::Id(*l)),
            ModelOutput::ClassProbs(_) => Ok(DiscreteKey::Id(self.argmax().unwrap_or(0) as i64)),
            ModelOutput::ItemSet(items) => {
                let mut items = items.clone();
                items.sort_unstable();
                Ok(DiscreteKey::Set(items))
            }
            ModelOutput::Scalar(v) => {
                if v.fract() == 0.0 && v.abs() < 9.0e15 {
                    return Ok(DiscreteKey::Id(*v as i64));
                }
                match disc {
                    Discretization::Nearest => Ok(DiscreteKey::Id(v.round() as i64)),
                    Discretization::Undeclared => Err(Error::NotDiscretized(format!("scalar {v}"))),
                }
            }
        }
    }
}

/// How continuous outputs are made comparable for reuse.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Only outputs that are already discrete can be compared.
    #[default]
    Undeclared,
    /// Round scalars to the nearest integer.
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiscreteKey {
    Id(i64),
    Set(Vec<i64>),
}

/// `1` iff the two outputs differ after discretization.
pub fn reuse_label(yi: &ModelOutput, yj: &ModelOutput, disc: Discretization) -> Result<u8> {
    Ok(u8::from(yi.discrete_key(disc)? != yj.discrete_key(disc)?))
}

/// Maps outputs to dense integer ids (first-seen order) so that equal ids
/// mean equal discrete results.
pub fn result_ids(outputs: &[ModelOutput], disc: Discretization) -> Result<Vec<i64>> {
    let mut seen: HashMap<DiscreteKey, i64> = HashMap::new();
    outputs
        .iter()
        .map(|y| {
            let key = y.discrete_key(disc)?;
            let next = seen.len() as i64;
            Ok(*seen.entry(key).or_insert(next))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RedundancySpec {
    /// Keep iff the confidence exceeds `t`.
    ConfThreshold { t: f64 },
    /// Keep iff the (arg-max) class is in `classes`.
    ClassSubset { classes: Vec<i64> },
    /// Keep iff the scalar exceeds `t`.
    RegressionBound { t: f64 },
    /// Keep iff at least one item was detected.
    DetectionNonEmpty,
    /// Keep iff the output is not in the cached snapshot.
    CachedSet { cached: Vec<ModelOutput> },
}

impl RedundancySpec {
    pub fn name(&self) -> &'static str {
        match self {
            RedundancySpec::ConfThreshold { .. } => "conf_threshold",
            RedundancySpec::ClassSubset { .. } => "class_subset",
            RedundancySpec::RegressionBound { .. } => "regression_bound",
            RedundancySpec::DetectionNonEmpty => "detection_non_empty",
            RedundancySpec::CachedSet { .. } => "cached_set",
        }
    }

    /// `label_space`: number of classes, when known.
    pub fn validate(&self, label_space: Option<usize>) -> Result<()> {
        match self {
            RedundancySpec::ConfThreshold { t } if !(*t > 0.0 && *t < 1.0) => {
                Err(Error::InvalidSpec(format!("confidence threshold {t} outside (0, 1)")))
            }
            RedundancySpec::ClassSubset { classes } if classes.is_empty() => {
                Err(Error::InvalidSpec("class subset is empty".into()))
            }
            RedundancySpec::ClassSubset { classes } => match label_space {
                Some(l) if classes.iter().any(|&c| c < 0 || c as usize >= l) => Err(Error::InvalidSpec(format!(
                    "class subset {classes:?} not within {l} classes"
                ))),
                _ => Ok(()),
            },
            RedundancySpec::RegressionBound { t } if !t.is_finite() => {
                Err(Error::InvalidSpec("regression bound must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `f_h(y)`: a pure function of the output.
pub fn measure(spec: &RedundancySpec, y: &ModelOutput) -> Result<u8> {
    let incompatible = || Error::IncompatibleOutput {
        spec: spec.name().into(),
        output: y.variant().into(),
    };
    let keep = match (spec, y) {
        (RedundancySpec::ConfThreshold { t }, ModelOutput::ClassProbs(p)) => p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > *t,
        (RedundancySpec::ConfThreshold { t }, ModelOutput::Scalar(v)) => v > t,
        (RedundancySpec::ClassSubset { classes }, ModelOutput::Label(l)) => classes.contains(l),
        (RedundancySpec::ClassSubset { classes }, ModelOutput::ClassProbs(_)) => {
            classes.contains(&(y.argmax().unwrap_or(0) as i64))
        }
        (RedundancySpec::RegressionBound { t }, ModelOutput::Scalar(v)) => v > t,
        (RedundancySpec::RegressionBound { t }, ModelOutput::ItemSet(items)) => items.len() as f64 > *t,
        (RedundancySpec::DetectionNonEmpty, ModelOutput::ItemSet(items)) => !items.is_empty(),
        (RedundancySpec::DetectionNonEmpty, ModelOutput::Scalar(v)) => v.abs() > 0.0,
        (RedundancySpec::CachedSet { cached }, _) => {
            let key = y.discrete_key(Discretization::Undeclared)?;
            let mut hit = false;
            for c in cached {
                if c.discrete_key(Discretization::Undeclared)? == key {
                    hit = true;
                    break;
                }
            }
            !hit
        }
        _ => return Err(incompatible()),
    };
    Ok(u8::from(keep))
}

fn default_classes() -> usize {
    4
}
fn default_signal_dims() -> usize {
    2
}
fn default_noise_dims() -> usize {
    30
}
fn default_noise_std() -> f64 {
    3.0
}
fn default_radius() -> f64 {
    3.0
}
fn default_spread() -> f64 {
    1.0
}
fn default_r_n() -> f64 {
    0.5
}
fn default_count_dims() -> usize {
    4
}
fn default_count_scale() -> f64 {
    3.0
}
fn default_shift() -> Vec<f64> {
    vec![-6.0, -6.0]
}
fn default_switch() -> f64 {
    0.5
}
fn default_scale() -> f64 {
    1.0
}
fn default_rotate() -> f64 {
    90.0
}

/// Which measurement a blob workload is paired with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobMeasure {
    /// Keep the first `(1 − r_N)·k` classes.
    #[default]
    Subset,
    /// Keep outputs whose top probability exceeds the `r_N` quantile.
    Confidence,
}

/// Gaussian class blobs: class means on a circle in the first two signal
/// dimensions, plus isotropic high-variance noise dimensions that carry no
/// class information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsConfig {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_signal_dims")]
    pub signal_dims: usize,
    #[serde(default = "default_noise_dims")]
    pub noise_dims: usize,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_r_n")]
    pub r_n: f64,
    #[serde(default)]
    pub measure: BlobMeasure,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// `y = floor(max(0, a·x + b))` with `x ~ N(0, I)`; `b` is set so that
/// `P(y = 0) = r_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountConfig {
    #[serde(default = "default_count_dims")]
    pub dims: usize,
    /// `|a|`.
    #[serde(default = "default_count_scale")]
    pub scale: f64,
    #[serde(default = "default_r_n")]
    pub r_n: f64,
}

impl Default for CountConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Blobs whose signal means become `scale · rot(μ) + shift` from sample
/// index `switch_at · n` onwards; `rotate_deg` turns the first two signal
/// dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    #[serde(flatten)]
    pub blobs: BlobsConfig,
    #[serde(default = "default_shift")]
    pub shift: Vec<f64>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_rotate")]
    pub rotate_deg: f64,
    #[serde(default = "default_switch")]
    pub switch_at: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum WorkloadConfig {
    BlobsK(BlobsConfig),
    CountReg(CountConfig),
    DriftStream(DriftConfig),
}

/// A generator `D`, an oracle `h` and a paired measurement with known `r_N`.
#[derive(Clone, Debug)]
pub struct SyntheticWorkload {
    config: WorkloadConfig,
    spec: RedundancySpec,
    means: Vec<Vec<f64>>,
    count_weights: Vec<f64>,
    count_bias: f64,
}

const CALIBRATION_DRAWS: usize = 100_000;
const CALIBRATION_SEED: u64 = 0xca11_b4a7;

impl SyntheticWorkload {
    pub fn new(config: WorkloadConfig) -> Result<Self> {
        let mut w = Self {
            config,
            spec: RedundancySpec::DetectionNonEmpty,
            means: Vec::new(),
            count_weights: Vec::new(),
            count_bias: 0.0,
        };
        match w.config.clone() {
            WorkloadConfig::BlobsK(b) => {
                w.means = blob_means(&b)?;
                w.spec = w.blob_spec(&b)?;
            }
            WorkloadConfig::DriftStream(d) => {
                w.means = blob_means(&d.blobs)?;
                if d.shift.len() > d.blobs.signal_dims || d.shift.iter().any(|v| !v.is_finite()) || !d.scale.is_finite() || !d.rotate_deg.is_finite() {
                    return Err(Error::InvalidSpec(format!(
                        "drift shift {:?} must be finite with at most {} entries",
                        d.shift, d.blobs.signal_dims
                    )));
                }
                if !(0.0..=1.0).contains(&d.switch_at) {
                    return Err(Error::InvalidSpec(format!("switch_at {} outside [0, 1]", d.switch_at)));
                }
                w.spec = w.blob_spec(&d.blobs)?;
            }
            WorkloadConfig::CountReg(c) => {
                if c.dims == 0 || !(c.scale > 0.0) {
                    return Err(Error::InvalidSpec("count-reg needs dims >= 1 and scale > 0".into()));
                }
                check_ratio(c.r_n)?;
                let sign = |i: usize| if i % 2 == 0 { 1.0 } else { -1.0 };
                let per = c.scale / (c.dims as f64).sqrt();
                w.count_weights = (0..c.dims).map(|i| sign(i) * per).collect();
                let q = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(c.r_n);
                w.count_bias = 1.0 - c.scale * q;
                w.spec = RedundancySpec::RegressionBound { t: 0.0 };
            }
        }
        Ok(w)
    }

    fn blob_spec(&self, b: &BlobsConfig) -> Result<RedundancySpec> {
        check_ratio(b.r_n)?;
        match b.measure {
            BlobMeasure::Subset => {
                let keep = (1.0 - b.r_n) * b.classes as f64;
                if (keep - keep.round()).abs() > 1e-9 || keep.round() < 1.0 {
                    return Err(Error::InvalidSpec(format!(
                        "r_N {} is not a multiple of 1/{} leaving at least one kept class",
                        b.r_n, b.classes
                    )));
                }
                Ok(RedundancySpec::ClassSubset {
                    classes: (0..keep.round() as i64).collect(),
                })
            }
            BlobMeasure::Confidence => {
                let mut rng = Rng::new(CALIBRATION_SEED);
                let mut conf: Vec<f64> = (0..CALIBRATION_DRAWS)
                    .map(|i| {
                        let x = self.draw(&mut rng, i, CALIBRATION_DRAWS);
                        match self.oracle(&x) {
                            ModelOutput::ClassProbs(p) => p.into_iter().fold(0.0, f64::max),
                            _ => unreachable!("blob oracles emit class probabilities"),
                        }
                    })
                    .collect();
                conf.sort_by(f64::total_cmp);
                let idx = ((b.r_n * CALIBRATION_DRAWS as f64) as usize).min(CALIBRATION_DRAWS - 1);
                let t = conf[idx].clamp(1e-9, 1.0 - 1e-9);
                Ok(RedundancySpec::ConfThreshold { t })
            }
        }
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.config
    }

    pub fn name(&self) -> &'static str {
        match self.config {
            WorkloadConfig::BlobsK(_) => "blobs-k",
            WorkloadConfig::CountReg(_) => "count-reg",
            WorkloadConfig::DriftStream(_) => "drift-stream",
        }
    }

    /// The measurement paired with this workload's declared `r_N`.
    pub fn spec(&self) -> &RedundancySpec {
        &self.spec
    }

    pub fn declared_r_n(&self) -> f64 {
        match &self.config {
            WorkloadConfig::BlobsK(b) => b.r_n,
            WorkloadConfig::DriftStream(d) => d.blobs.r_n,
            WorkloadConfig::CountReg(c) => c.r_n,
        }
    }

    pub fn input_dims(&self) -> Vec<usize> {
        vec![self.flat_dims()]
    }

    fn flat_dims(&self) -> usize {
        match &self.config {
            WorkloadConfig::BlobsK(b) => b.signal_dims + b.noise_dims,
            WorkloadConfig::DriftStream(d) => d.blobs.signal_dims + d.blobs.noise_dims,
            WorkloadConfig::CountReg(c) => c.dims,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.config {
            WorkloadConfig::BlobsK(b) => Some(b.classes),
            WorkloadConfig::DriftStream(d) => Some(d.blobs.classes),
            WorkloadConfig::CountReg(_) => None,
        }
    }

    pub fn discretization(&self) -> Discretization {
        match self.config {
            WorkloadConfig::CountReg(_) => Discretization::Nearest,
            _ => Discretization::Undeclared,
        }
    }

    /// Whether stream index `i` of `n` lies in the shifted regime.
    pub fn shifted(&self, i: usize, n: usize) -> bool {
        match &self.config {
            WorkloadConfig::DriftStream(d) => (i as f64) >= d.switch_at * n as f64,
            _ => false,
        }
    }

    fn blobs(&self) -> Option<&BlobsConfig> {
        match &self.config {
            WorkloadConfig::BlobsK(b) => Some(b),
            WorkloadConfig::DriftStream(d) => Some(&d.blobs),
            WorkloadConfig::CountReg(_) => None,
        }
    }

    /// Draws input `i` of a stream of length `n`, rounded to f32.
    pub fn draw(&self, rng: &mut Rng, i: usize, n: usize) -> Vec<f64> {
        let x: Vec<f64> = match (&self.config, self.blobs()) {
            (WorkloadConfig::CountReg(c), _) => (0..c.dims).map(|_| rng.normal(0.0, 1.0)).collect(),
            (_, Some(b)) => {
                let class = rng.below(b.classes);
                let mut x = Vec::with_capacity(self.flat_dims());
                for d in 0..b.signal_dims {
                    let mu = if self.shifted(i, n) {
                        self.drifted_mean(class)[d]
                    } else {
                        self.means[class][d]
                    };
                    x.push(rng.normal(mu, b.spread));
                }
                for _ in 0..b.noise_dims {
                    x.push(rng.normal(0.0, b.noise_std));
                }
                x
            }
            _ => unreachable!(),
        };
        x.into_iter().map(|v| v as f32 as f64).collect()
    }

    fn drifted_mean(&self, class: usize) -> Vec<f64> {
        let mut mu = self.means[class].clone();
        if let WorkloadConfig::DriftStream(d) = &self.config {
            let (sin, cos) = d.rotate_deg.to_radians().sin_cos();
            let (a, b) = (mu[0], mu[1]);
            mu[0] = cos * a - sin * b;
            mu[1] = sin * a + cos * b;
            for (i, m) in mu.iter_mut().enumerate() {
                *m = d.scale * *m + d.shift.get(i).copied().unwrap_or(0.0);
            }
        }
        mu
    }

    /// The inference model `h`. Blob oracles are the Bayes classifier of the
    /// mixture (shared isotropic covariance) over signal dimensions; for the
    /// drift stream both regimes' components vote for their class.
    pub fn oracle(&self, x: &[f64]) -> ModelOutput {
        match (&self.config, self.blobs()) {
            (WorkloadConfig::CountReg(_), _) => {
                let s: f64 = self.count_weights.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + self.count_bias;
                ModelOutput::Scalar(s.max(0.0).floor())
            }
            (_, Some(b)) => {
                let var = b.spread * b.spread;
                let mut components: Vec<(usize, Vec<f64>)> = self.means.iter().cloned().enumerate().collect();
                if matches!(self.config, WorkloadConfig::DriftStream(_)) {
                    for c in 0..b.classes {
                        components.push((c, self.drifted_mean(c)));
                    }
                }
                let logits: Vec<f64> = components
                    .iter()
                    .map(|(_, mu)| {
                        let d2: f64 = mu.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
                        -d2 / (2.0 * var)
                    })
                    .collect();
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut probs = vec![0.0; b.classes];
                let mut total = 0.0;
                for ((c, _), l) in components.iter().zip(&logits) {
                    let e = (l - top).exp();
                    probs[*c] += e;
                    total += e;
                }
                probs.iter_mut().for_each(|p| *p /= total);
                ModelOutput::ClassProbs(probs)
            }
            _ => unreachable!(),
        }
    }

    /// Reuse results of `h`: the arg-max class for blobs, the count otherwise.
    pub fn result(&self, y: &ModelOutput) -> ModelOutput {
        match y {
            ModelOutput::ClassProbs(_) => ModelOutput::Label(y.argmax().unwrap_or(0) as i64),
            other => other.clone(),
        }
    }
}

fn check_ratio(r_n: f64) -> Result<()> {
    if r_n > 0.0 && r_n < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("r_N {r_n} outside (0, 1)")))
    }
}

fn blob_means(b: &BlobsConfig) -> Result<Vec<Vec<f64>>> {
    if b.classes < 2 || b.signal_dims < 2 {
        return Err(Error::InvalidSpec("blobs need at least 2 classes and 2 signal dims".into()));
    }
    if !(b.spread > 0.0) || !(b.noise_std >= 0.0) || !(b.radius > 0.0) {
        return Err(Error::InvalidSpec("blob spread, radius and noise_std must be positive".into()));
    }
    Ok((0..b.classes)
        .map(|c| {
            let a = 2.0 * std::f64::consts::PI * c as f64 / b.classes as f64;
            let mut mu = vec![0.0; b.signal_dims];
            mu[0] = b.radius * a.cos();
            mu[1] = b.radius * a.sin();
            mu
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub y: ModelOutput,
    pub z: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub workload: WorkloadConfig,
    pub spec: RedundancySpec,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of samples with `z = 0`.
    pub fn redundant_ratio(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.z == 0).count() as f64 / self.samples.len() as f64
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.z).collect()
    }

    pub fn outputs(&self) -> Vec<ModelOutput> {
        self.samples.iter().map(|s| s.y.clone()).collect()
    }

    pub fn inputs(&self) -> Vec<Vec<Tensor>> {
        self.samples.iter().map(|s| vec![s.x.clone()]).collect()
    }

    /// Splits into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.samples.len());
        let head = Dataset {
            samples: self.samples[..n].to_vec(),
            ..self.clone_meta()
        };
        let tail = Dataset {
            samples: self.samples[n..].to_vec(),
            ..self.clone_meta()
        };
        (head, tail)
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            workload: self.workload.clone(),
            spec: self.spec.clone(),
            seed: self.seed,
            samples: Vec::new(),
        }
    }
}

/// Draws `n` samples with `y = h(x)` and `z = measure(spec, y)`.
pub fn gen_dataset(workload: &SyntheticWorkload, spec: &RedundancySpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    spec.validate(workload.classes())?;
    let mut rng = Rng::new(seed);
    let dims = workload.input_dims();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let x = workload.draw(&mut rng, i, n);
        let y = workload.oracle(&x);
        let z = measure(spec, &y)?;
        samples.push(Sample {
            x: Tensor::from_f64(&dims, &x)?,
            y,
            z,
        });
    }
    Ok(Dataset {
        workload: workload.config().clone(),
        spec: spec.clone(),
        seed,
        samples,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    workload: WorkloadConfig,
    spec: RedundancySpec,
    n: usize,
    seed: u64,
    input_dims: Vec<usize>,
    declared_r_n: f64,
    measured_r_n: f64,
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    index: usize,
    y: String,
    z: u8,
}

const DATASET_MANIFEST: &str = "manifest.json";
const DATASET_INPUTS: &str = "x.ift";
const DATASET_LABELS: &str = "labels.csv";

/// Writes `manifest.json`, `x.ift` (all inputs stacked as `[n, ...dims]`)
/// and `labels.csv` (`index,y,z`, with `y` as JSON).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = ds.samples[0].x.shape().to_vec();
    let mut shape = vec![ds.len()];
    shape.extend_from_slice(&dims);
    let data: Vec<f32> = ds.samples.iter().flat_map(|s| s.x.data().iter().copied()).collect();
    write_tensor(&dir.join(DATASET_INPUTS), &Tensor::new(shape, data)?)?;

    let labels_path = dir.join(DATASET_LABELS);
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| Error::format(&labels_path, e.to_string()))?;
    for (index, s) in ds.samples.iter().enumerate() {
        w.serialize(LabelRow {
            index,
            y: serde_json::to_string(&s.y)?,
            z: s.z,
        })?;
    }
    w.flush().map_err(|e| Error::io(&labels_path, e))?;

    let workload = SyntheticWorkload::new(ds.workload.clone())?;
    let manifest = DatasetManifest {
        workload: ds.workload.clone(),
        spec: ds.spec.clone(),
        n: ds.len(),
        seed: ds.seed,
        input_dims: dims,
        declared_r_n: workload.declared_r_n(),
        measured_r_n: ds.redundant_ratio(),
    };
    let path = dir.join(DATASET_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(DATASET_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;

    let x_path = dir.join(DATASET_INPUTS);
    let x = read_tensor(&x_path)?;
    let mut expected = vec![manifest.n];
    expected.extend_from_slice(&manifest.input_dims);
    if x.shape() != expected.as_slice() {
        return Err(Error::format(
            &x_path,
            format!("expected shape {expected:?}, found {:?}", x.shape()),
        ));
    }

    let labels_path = dir.join(DATASET_LABELS);
    let mut r = csv::Reader::from_path(&labels_path).map_err(|e| Error::format(&labels_path, e.to_string()))?;
    let mut rows = Vec::with_capacity(manifest.n);
    for row in r.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::format(&labels_path, e.to_string()))?;
        let y: ModelOutput = serde_json::from_str(&row.y).map_err(|e| Error::format(&labels_path, e.to_string()))?;
        if row.index != rows.len() || row.z > 1 {
            return Err(Error::format(&labels_path, format!("bad row {}", row.index)));
        }
        rows.push((y, row.z));
    }
    if rows.len() != manifest.n {
        return Err(Error::format(
            &labels_path,
            format!("{} rows for {} samples", rows.len(), manifest.n),
        ));
    }
    let per: usize = manifest.input_dims.iter().product();
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(i, (y, z))| {
            let data = x.data()[i * per..(i + 1) * per].to_vec();
            Ok(Sample {
                x: Tensor::new(manifest.input_dims.clone(), data)?,
                y,
                z,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        workload: manifest.workload,
        spec: manifest.spec,
        seed: manifest.seed,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measurement_examples() {
        let conf = RedundancySpec::ConfThreshold { t: 0.9 };
        assert_eq!(measure(&conf, &ModelOutput::ClassProbs(vec![0.95, 0.05])).unwrap(), 1);
        assert_eq!(measure(&conf, &ModelOutput::ClassProbs(vec![0.6, 0.4])).unwrap(), 0);
        assert_eq!(measure(&RedundancySpec::DetectionNonEmpty, &ModelOutput::ItemSet(vec![])).unwrap(), 0);
        assert_eq!(measure(&RedundancySpec::DetectionNonEmpty, &ModelOutput::ItemSet(vec![4])).unwrap(), 1);
        let laying = 5;
        let walking = 0;
        let subset = RedundancySpec::ClassSubset { classes: vec![laying] };
        assert_eq!(measure(&subset, &ModelOutput::Label(walking)).unwrap(), 0);
        assert_eq!(measure(&subset, &ModelOutput::Label(laying)).unwrap(), 1);
        let bound = RedundancySpec::RegressionBound { t: 0.0 };
        assert_eq!(measure(&bound, &ModelOutput::Scalar(0.0)).unwrap(), 0);
        assert_eq!(measure(&bound, &ModelOutput::Scalar(3.0)).unwrap(), 1);
    }

    #[test]
    fn cached_set_measures_membership() {
        let spec = RedundancySpec::CachedSet {
            cached: vec![ModelOutput::Label(1), ModelOutput::Label(4)],
        };
        assert_eq!(measure(&spec, &ModelOutput::Label(4)).unwrap(), 0);
        assert_eq!(measure(&spec, &ModelOutput::Label(2)).unwrap(), 1);
    }

    #[test]
    fn incompatible_variants_error() {
        let err = measure(&RedundancySpec::DetectionNonEmpty, &ModelOutput::Label(1)).unwrap_err();
        assert!(matches!(err, Error::IncompatibleOutput { .. }));
        assert!(measure(&RedundancySpec::RegressionBound { t: 0.0 }, &ModelOutput::ClassProbs(vec![1.0])).is_err());
    }

    #[test]
    fn reuse_labels() {
        let d = Discretization::Undeclared;
        assert_eq!(reuse_label(&ModelOutput::Label(3), &ModelOutput::Label(3), d).unwrap(), 0);
        assert_eq!(reuse_label(&ModelOutput::Scalar(2.0), &ModelOutput::Scalar(5.0), d).unwrap(), 1);
        let err = reuse_label(&ModelOutput::Scalar(2.5), &ModelOutput::Scalar(2.7), d).unwrap_err();
        assert!(matches!(err, Error::NotDiscretized(_)));
        let n = Discretization::Nearest;
        assert_eq!(reuse_label(&ModelOutput::Scalar(2.6), &ModelOutput::Scalar(3.2), n).unwrap(), 0);
        assert_eq!(
            reuse_label(&ModelOutput::ItemSet(vec![2, 1]), &ModelOutput::ItemSet(vec![1, 2]), d).unwrap(),
            0
        );
    }

    #[test]
    fn result_ids_are_dense_in_first_seen_order() {
        let ys = [ModelOutput::Label(9), ModelOutput::Label(2), ModelOutput::Label(9)];
        assert_eq!(result_ids(&ys, Discretization::Undeclared).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn spec_validation() {
        assert!(RedundancySpec::ClassSubset { classes: vec![] }.validate(None).is_err());
        assert!(RedundancySpec::ClassSubset { classes: vec![4] }.validate(Some(4)).is_err());
        assert!(RedundancySpec::ClassSubset { classes: vec![3] }.validate(Some(4)).is_ok());
        assert!(RedundancySpec::ConfThreshold { t: 1.0 }.validate(None).is_err());
    }

    #[test]
    fn workload_config_json_shape() {
        let cfg: WorkloadConfig = serde_json::from_str(r#"{"name": "blobs-k", "classes": 6, "r_n": 0.5}"#).unwrap();
        match cfg {
            WorkloadConfig::BlobsK(b) => {
                assert_eq!(b.classes, 6);
                assert_eq!(b.noise_dims, 30);
            }
            other => panic!("{other:?}"),
        }
        let drift: WorkloadConfig = serde_json::from_str(r#"{"name": "drift-stream", "switch_at": 0.25}"#).unwrap();
        assert!(matches!(drift, WorkloadConfig::DriftStream(ref d) if d.switch_at == 0.25 && d.blobs.classes == 4));
        assert!(serde_json::from_str::<WorkloadConfig>(r#"{"name": "blobs-k", "bogus": 1}"#).is_err());
    }
}
