//! Inference driver, metrics, cost model and sweeps.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_model::{FilterKind, FilterModel};
use crate::numerics::Tensor;
use crate::redundancy::{Dataset, Discretization, ModelOutput};
use crate::reuse_cache::{Cache, CacheConfig, Distance, Euclidean, Precomputed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeploymentKind {
    OnDevice,
    Offloading,
    ModelPartitioning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSpec {
    pub kind: DeploymentKind,
    #[serde(default)]
    pub bytes_per_input: u64,
    #[serde(default)]
    pub bytes_per_featuremap: u64,
}

impl DeploymentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind == DeploymentKind::ModelPartitioning && self.bytes_per_featuremap == 0 {
            return Err(Error::InvalidSpec(
                "model partitioning needs bytes_per_featuremap > 0".into(),
            ));
        }
        Ok(())
    }

    /// Bytes sent over the wire per executed input.
    pub fn wire_bytes(&self) -> u64 {
        match self.kind {
            DeploymentKind::OnDevice => 0,
            DeploymentKind::Offloading => self.bytes_per_input,
            DeploymentKind::ModelPartitioning => self.bytes_per_featuremap,
        }
    }
}

/// Per-input costs in abstract units (milliseconds in shipped configs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub c_g: f64,
    pub c_h: f64,
    pub c_hhat: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_g", self.c_g), ("c_h", self.c_h), ("c_hhat", self.c_hhat)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidSpec(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    Computation,
    Communication,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub valid: bool,
    pub min_rate: f64,
    pub reason: String,
}

/// Expected per-input cost `C(g) + (1 − r)C(h) + rC(ĥ)`.
pub fn avg_cost(cost: &CostModel, r: f64) -> f64 {
    cost.c_g + (1.0 - r) * cost.c_h + r * cost.c_hhat
}

pub fn validity(cost: &CostModel, r: f64, acc: f64, t_acc: f64, goal: Goal) -> Result<Validity> {
    let min_rate = match goal {
        Goal::Computation => {
            if cost.c_h <= cost.c_hhat {
                return Err(Error::FilterCannotReduce {
                    c_h: cost.c_h,
                    c_hhat: cost.c_hhat,
                });
            }
            cost.c_g / (cost.c_h - cost.c_hhat)
        }
        Goal::Communication => 0.0,
    };
    let reason = if acc <= t_acc {
        format!("accuracy {acc} does not exceed {t_acc}")
    } else if r <= min_rate {
        format!("filtering rate {r} does not exceed {min_rate}")
    } else {
        "ok".to_string()
    };
    Ok(Validity {
        valid: acc > t_acc && r > min_rate,
        min_rate,
        reason,
    })
}

/// Best achievable filtering rate at accuracy `t_acc`: `(1 − t_acc) + r_N`, capped at 1.
pub fn optimal_rate(r_n: f64, t_acc: f64) -> f64 {
    ((1.0 - t_acc) + r_n).min(1.0)
}

/// Serial filter-then-model throughput and the fraction of wire traffic saved.
pub fn deployment_metrics(deploy: &DeploymentSpec, base_throughput_h: f64, filter_throughput_g: f64, r: f64) -> Result<(f64, f64)> {
    deploy.validate()?;
    if !(base_throughput_h > 0.0 && filter_throughput_g > 0.0) {
        return Err(Error::InvalidSpec("throughputs must be > 0".into()));
    }
    let throughput = 1.0 / (1.0 / filter_throughput_g + (1.0 - r) / base_throughput_h);
    let saving = match deploy.kind {
        DeploymentKind::OnDevice => 0.0,
        _ => r,
    };
    Ok((throughput, saving))
}

/// One row of the per-input audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub index: usize,
    /// Skip score `g(x)`, or θ for reuse (absent during warm-up).
    pub score: Option<f64>,
    pub z: u8,
    pub filtered: bool,
    pub correct: bool,
    pub warm_up: bool,
}

/// `(Acc, r)` over a decision log; `(1, 0)` for an empty log.
pub fn summarize<'a>(decisions: impl IntoIterator<Item = &'a Decision>) -> (f64, f64) {
    let (mut n, mut correct, mut filtered) = (0usize, 0usize, 0usize);
    for d in decisions {
        n += 1;
        correct += usize::from(d.correct);
        filtered += usize::from(d.filtered);
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    (correct as f64 / n as f64, filtered as f64 / n as f64)
}

/// Mean charged cost of a stream: `C(g)` per input, `C(h)` per executed and
/// `C(ĥ)` per filtered input.
pub fn simulate_cost(decisions: &[Decision], cost: &CostModel) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    let total: f64 = decisions
        .iter()
        .map(|d| cost.c_g + if d.filtered { cost.c_hhat } else { cost.c_h })
        .sum();
    total / decisions.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: FilterKind,
    pub n: usize,
    pub acc: f64,
    pub rate: f64,
    pub avg_cost: f64,
    pub simulated_cost: f64,
    pub throughput: Option<f64>,
    pub bandwidth_saving: Option<f64>,
    pub valid: Option<bool>,
    pub min_rate: Option<f64>,
    pub reason: Option<String>,
}

impl MetricsReport {
    pub fn from_decisions(mode: FilterKind, decisions: &[Decision], cost: &CostModel) -> Self {
        let (acc, rate) = summarize(decisions);
        Self {
            mode,
            n: decisions.len(),
            acc,
            rate,
            avg_cost: avg_cost(cost, rate),
            simulated_cost: simulate_cost(decisions, cost),
            throughput: None,
            bandwidth_saving: None,
            valid: None,
            min_rate: None,
            reason: None,
        }
    }

    pub fn with_validity(mut self, cost: &CostModel, t_acc: f64, goal: Goal) -> Result<Self> {
        let v = validity(cost, self.rate, self.acc, t_acc, goal)?;
        self.valid = Some(v.valid);
        self.min_rate = Some(v.min_rate);
        self.reason = Some(v.reason);
        Ok(self)
    }

    pub fn with_deployment(mut self, deploy: &DeploymentSpec, base_throughput_h: f64, filter_throughput_g: f64) -> Result<Self> {
        let (t, s) = deployment_metrics(deploy, base_throughput_h, filter_throughput_g, self.rate)?;
        self.throughput = Some(t);
        self.bandwidth_saving = Some(s);
        Ok(self)
    }
}

fn require_kind(model: &FilterModel, kind: FilterKind) -> Result<()> {
    if model.kind() != kind {
        return Err(Error::Mode(format!("expected a {kind} model, got {}", model.kind())));
    }
    Ok(())
}

fn require_stream(stream: &Dataset) -> Result<()> {
    if stream.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Skip scores `g(x)` for every input of the stream.
pub fn skip_scores(model: &FilterModel, stream: &Dataset) -> Result<Vec<f64>> {
    require_kind(model, FilterKind::Skip)?;
    stream
        .samples
        .iter()
        .map(|s| model.skip_score(std::slice::from_ref(&s.x)))
        .collect()
}

/// Filters iff `score <= t`; a filtered input is correct iff its `z` is 0.
pub fn skip_decisions(scores: &[f64], labels: &[u8], t: f64) -> Vec<Decision> {
    scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(index, (&score, &z))| {
            let filtered = score <= t;
            Decision {
                index,
                score: Some(score),
                z,
                filtered,
                correct: !filtered || z == 0,
                warm_up: false,
            }
        })
        .collect()
}

pub fn run_skip(model: &FilterModel, stream: &Dataset, t: f64, cost: &CostModel) -> Result<(Vec<Decision>, MetricsReport)> {
    require_stream(stream)?;
    let scores = skip_scores(model, stream)?;
    let decisions = skip_decisions(&scores, &stream.labels(), t);
    let report = MetricsReport::from_decisions(FilterKind::Skip, &decisions, cost);
    Ok((decisions, report))
}

/// Streams `keys` through a fresh cache; the oracle result of input `i` is
/// `outputs[i]`. A reused result is correct iff its discretized value equals
/// the oracle's.
pub fn reuse_decisions<K: Clone>(
    keys: impl IntoIterator<Item = K>,
    metric: &impl Distance<K>,
    outputs: &[ModelOutput],
    labels: &[u8],
    config: &CacheConfig,
) -> Result<Vec<Decision>> {
    let mut cache = Cache::new(config.clone())?;
    let disc = config.discretization;
    let mut out = Vec::with_capacity(outputs.len());
    for (index, key) in keys.into_iter().enumerate() {
        let truth = &outputs[index];
        let step = cache.step(key, metric, || truth.clone())?;
        let correct = !step.reused || step.y.discrete_key(disc)? == truth.discrete_key(disc)?;
        out.push(Decision {
            index,
            score: step.theta,
            z: labels[index],
            filtered: step.reused,
            correct,
            warm_up: step.warm_up,
        });
    }
    Ok(out)
}

fn embeddings(model: &FilterModel, stream: &Dataset) -> Result<Vec<Tensor>> {
    stream.samples.iter().map(|s| model.embed(std::slice::from_ref(&s.x))).collect()
}

pub fn run_reuse(
    model: &FilterModel,
    stream: &Dataset,
    config: &CacheConfig,
    cost: &CostModel,
) -> Result<(Vec<Decision>, MetricsReport)> {
    require_kind(model, FilterKind::Reuse)?;
    require_stream(stream)?;
    let keys = embeddings(model, stream)?;
    let decisions = reuse_decisions(keys, model, &stream.outputs(), &stream.labels(), config)?;
    let report = MetricsReport::from_decisions(FilterKind::Reuse, &decisions, cost);
    Ok((decisions, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Threshold (skip) or cache ratio (reuse).
    pub param: f64,
    pub acc: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub mode: FilterKind,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn param_name(&self) -> &'static str {
        match self.mode {
            FilterKind::Skip => "threshold",
            FilterKind::Reuse => "cache_ratio",
        }
    }
}

/// `0, 0.01, …, 1`.
pub fn grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Re-thresholds fixed scores over the grid.
pub fn sweep_scores(scores: &[f64], labels: &[u8]) -> Curve {
    let points = grid()
        .into_iter()
        .map(|t| {
            let (acc, rate) = summarize(&skip_decisions(scores, labels, t));
            CurvePoint { param: t, acc, rate }
        })
        .collect();
    Curve {
        mode: FilterKind::Skip,
        points,
    }
}

/// Cache size for a ratio of the stream length.
pub fn cache_size(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round() as usize
}

/// Reuse sweep over the cache ratio with pairwise distances fixed up front.
/// Ratios whose cache cannot hold `K` entries never reuse and score `(1, 0)`.
pub fn sweep_reuse_precomputed(
    metric: &Precomputed,
    outputs: &[ModelOutput],
    labels: &[u8],
    base: &CacheConfig,
) -> Result<Curve> {
    let n = outputs.len();
    let mut points = Vec::with_capacity(101);
    for ratio in grid() {
        let capacity = cache_size(ratio, n);
        let (acc, rate) = if capacity < base.k {
            (1.0, 0.0)
        } else {
            let cfg = CacheConfig {
                capacity,
                reinit_every: None,
                ..base.clone()
            };
            summarize(&reuse_decisions(0..n, metric, outputs, labels, &cfg)?)
        };
        points.push(CurvePoint { param: ratio, acc, rate });
    }
    Ok(Curve {
        mode: FilterKind::Reuse,
        points,
    })
}

fn pairwise(n: usize, d: impl Fn(usize, usize) -> f64) -> Result<Precomputed> {
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = d(i, j);
            matrix[i * n + j] = v;
            matrix[j * n + i] = v;
        }
    }
    Precomputed::new(n, matrix)
}

/// Threshold sweep (skip) or cache-ratio sweep (reuse); embeddings are
/// computed once per input.
pub fn sweep(model: &FilterModel, stream: &Dataset, base: &CacheConfig) -> Result<Curve> {
    require_stream(stream)?;
    match model.kind() {
        FilterKind::Skip => Ok(sweep_scores(&skip_scores(model, stream)?, &stream.labels())),
        FilterKind::Reuse => {
            let keys = embeddings(model, stream)?;
            let metric = pairwise(keys.len(), |i, j| model.distance(keys[i].data(), keys[j].data()))?;
            sweep_reuse_precomputed(&metric, &stream.outputs(), &stream.labels(), base)
        }
    }
}

/// Largest rate among points with `acc >= target`, or 0.
pub fn rate_at_accuracy(curve: &Curve, target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.acc >= target)
        .map(|p| p.rate)
        .fold(0.0, f64::max)
}

fn flat(x: &Tensor) -> &[f32] {
    x.data()
}

/// Fraction of the `k` nearest pool inputs (Euclidean on raw values, ties
/// by pool position) whose label is 1.
pub fn lowlevel_skip_scores(pool: &Dataset, stream: &Dataset, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > pool.len() {
        return Err(Error::InvalidSpec(format!(
            "K = {k} needs 1 <= K <= labeled pool size {}",
            pool.len()
        )));
    }
    let metric = Euclidean;
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(pool.len());
    let mut scores = Vec::with_capacity(stream.len());
    for q in &stream.samples {
        dists.clear();
        dists.extend(pool.samples.iter().enumerate().map(|(i, p)| (metric.distance(&q.x, &p.x), i)));
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, order);
        }
        let votes = dists[..k].iter().filter(|(_, i)| pool.samples[*i].z == 1).count();
        scores.push(votes as f64 / k as f64);
    }
    Ok(scores)
}

/// KNN baseline on raw flattened inputs, swept with the same protocol as the
/// learned filter. Skip votes over the labeled `pool`; reuse caches raw inputs.
pub fn baseline_lowlevel(pool: &Dataset, stream: &Dataset, k: usize, mode: FilterKind, base: &CacheConfig) -> Result<Curve> {
    require_stream(stream)?;
    match mode {
        FilterKind::Skip => Ok(sweep_scores(&lowlevel_skip_scores(pool, stream, k)?, &stream.labels())),
        FilterKind::Reuse => {
            let xs: Vec<&[f32]> = stream.samples.iter().map(|s| flat(&s.x)).collect();
            let metric = pairwise(xs.len(), |i, j| {
                xs[i]
                    .iter()
                    .zip(xs[j])
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })?;
            let cfg = CacheConfig { k, ..base.clone() };
            sweep_reuse_precomputed(&metric, &stream.outputs(), &stream.labels(), &cfg)
        }
    }
}

/// Discretization used to compare results of a stream.
pub fn stream_discretization(stream: &Dataset) -> Discretization {
    stream
        .samples
        .iter()
        .find(|s| matches!(s.y, ModelOutput::Scalar(v) if v.fract() != 0.0))
        .map_or(Discretization::Undeclared, |_| Discretization::Nearest)
}

#[derive(Serialize)]
struct CurveRow {
    param: f64,
    acc: f64,
    rate: f64,
}

pub fn write_curve_csv(path: &Path, curve: &Curve) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record([curve.param_name(), "acc", "rate"])?;
    for p in &curve.points {
        w.serialize(CurveRow {
            param: p.param,
            acc: p.acc,
            rate: p.rate,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve_csv(path: &Path, mode: FilterKind) -> Result<Curve> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut points = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad field {i} in row {:?}", row)))
        };
        points.push(CurvePoint {
            param: field(0)?,
            acc: field(1)?,
            rate: field(2)?,
        });
    }
    Ok(Curve { mode, points })
}

#[derive(Serialize)]
struct DecisionRow {
    index: usize,
    score: Option<f64>,
    z: u8,
    filtered: u8,
    correct: u8,
    warm_up: u8,
}

pub fn write_decisions_csv(path: &Path, decisions: &[Decision]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for d in decisions {
        w.serialize(DecisionRow {
            index: d.index,
            score: d.score,
            z: d.z,
            filtered: u8::from(d.filtered),
            correct: u8::from(d.correct),
            warm_up: u8::from(d.warm_up),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One JSON object per line.
pub fn write_jsonl<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
