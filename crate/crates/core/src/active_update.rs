//! Online training policies under distribution shift.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_model::{FilterKind, FilterModel, Targets, TrainConfig};
use crate::pipeline::{skip_decisions, summarize};
use crate::redundancy::Dataset;

/// Decision threshold shared by all policies.
pub const ONLINE_THRESHOLD: f64 = 0.5;
/// Epochs per warm-started update.
pub const UPDATE_EPOCHS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    Skip(f64),
    /// Neighbour agreement θ of an H-KNN lookup.
    ReuseTheta(f64),
}

/// `|g(x) − 0.5|` for skip and `1 − θ` for reuse; `flip_reuse` uses `θ` instead.
pub fn confidence(score: Score, flip_reuse: bool) -> f64 {
    match score {
        Score::Skip(z) => (z - 0.5).abs(),
        Score::ReuseTheta(theta) if flip_reuse => theta,
        Score::ReuseTheta(theta) => 1.0 - theta,
    }
}

/// `⌈beta·n⌉` with a small tolerance so that e.g. `0.1 · 200` stays 20.
pub fn selection_size(beta: f64, n: usize) -> usize {
    let raw = beta * n as f64;
    let size = (raw - 1e-9).ceil().max(0.0) as usize;
    size.min(n)
}

/// Indices (ascending) of the `⌈beta·n⌉` least confident entries; ties go to
/// the earlier position.
pub fn select_least_confidence(confidences: &[f64], beta: f64) -> Result<Vec<usize>> {
    if confidences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidSpec(format!("beta {beta} outside (0, 1]")));
    }
    Ok(least_confident(confidences, selection_size(beta, confidences.len())))
}

fn least_confident(confidences: &[f64], size: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]).then(a.cmp(&b)));
    order.truncate(size);
    order.sort_unstable();
    order
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Offline,
    Periodic,
    Active,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub period_len: usize,
    /// Offline labels the first `β` of the stream; the others `β` of each period.
    pub beta: f64,
    #[serde(default)]
    pub label_budget: Option<usize>,
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidSpec(format!("beta {} outside (0, 1]", self.beta)));
        }
        if self.period_len == 0 {
            return Err(Error::InvalidSpec("period_len must be >= 1".into()));
        }
        if self.kind != PolicyKind::Offline && self.beta * (self.period_len as f64) < 1.0 - 1e-9 {
            return Err(Error::InvalidSpec("beta * period_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub period: usize,
    pub acc: f64,
    pub rate: f64,
    pub labels_used: usize,
    /// Selection was cut short by the label budget.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub policy: PolicyKind,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn mean_acc(&self) -> f64 {
        self.rows.iter().map(|r| r.acc).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_rate(&self) -> f64 {
        self.rows.iter().map(|r| r.rate).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn labels_used(&self) -> usize {
        self.rows.iter().map(|r| r.labels_used).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Labeled {
    inputs: Vec<Vec<crate::numerics::Tensor>>,
    labels: Vec<u8>,
}

impl Labeled {
    fn push(&mut self, stream: &Dataset, i: usize) {
        self.inputs.push(vec![stream.samples[i].x.clone()]);
        self.labels.push(stream.samples[i].z);
    }

    fn fit(&self, model: &mut FilterModel, cfg: &TrainConfig) -> Result<()> {
        model.train(&self.inputs, Targets::Redundancy(&self.labels), cfg)?;
        Ok(())
    }
}

fn period_scores(model: &FilterModel, stream: &Dataset, range: std::ops::Range<usize>) -> Result<Vec<f64>> {
    stream.samples[range]
        .iter()
        .map(|s| model.skip_score(std::slice::from_ref(&s.x)))
        .collect()
}

/// Runs a SKIP filter over `stream` in periods of `policy.period_len`,
/// labelling with the oracle `z` and filtering at threshold 0.5.
///
/// Offline trains once with `cfg` on the first `⌈β·n⌉` inputs. Periodic and
/// Active pick `⌈β·period_len⌉` inputs of each period (the first ones, or the
/// least confident under the current model), add them to the labelled pool
/// and retrain before filtering that period: the first fit uses `cfg`, later
/// ones warm-start for `UPDATE_EPOCHS` epochs.
pub fn run_online(model: &mut FilterModel, stream: &Dataset, policy: &PolicySpec, cfg: &TrainConfig) -> Result<Trace> {
    policy.validate()?;
    if model.kind() != FilterKind::Skip {
        return Err(Error::Mode(format!("online policies drive skip filters, got {}", model.kind())));
    }
    if stream.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = stream.len();
    let budget = policy.label_budget.unwrap_or(usize::MAX);
    let mut pool = Labeled {
        inputs: Vec::new(),
        labels: Vec::new(),
    };
    let labels = stream.labels();
    let mut rows = Vec::new();

    if policy.kind == PolicyKind::Offline {
        let want = selection_size(policy.beta, n);
        let take = want.min(budget);
        (0..take).for_each(|i| pool.push(stream, i));
        if take > 0 {
            pool.fit(model, cfg)?;
        }
        rows.reserve(n.div_ceil(policy.period_len));
        for (period, start) in (0..n).step_by(policy.period_len).enumerate() {
            let end = (start + policy.period_len).min(n);
            let scores = period_scores(model, stream, start..end)?;
            let (acc, rate) = summarize(&skip_decisions(&scores, &labels[start..end], ONLINE_THRESHOLD));
            rows.push(TraceRow {
                period,
                acc,
                rate,
                labels_used: if period == 0 { take } else { 0 },
                truncated: period == 0 && take < want,
            });
        }
        return Ok(Trace {
            policy: policy.kind,
            rows,
        });
    }

    let mut remaining = budget;
    let mut fitted = false;
    let update_cfg = TrainConfig {
        epochs: UPDATE_EPOCHS,
        ..cfg.clone()
    };
    for (period, start) in (0..n).step_by(policy.period_len).enumerate() {
        let end = (start + policy.period_len).min(n);
        let want = selection_size(policy.beta, end - start);
        let take = want.min(remaining);
        let picked: Vec<usize> = match policy.kind {
            PolicyKind::Periodic => (start..start + take).collect(),
            _ => {
                let conf: Vec<f64> = period_scores(model, stream, start..end)?
                    .into_iter()
                    .map(|z| confidence(Score::Skip(z), false))
                    .collect();
                least_confident(&conf, take).into_iter().map(|i| start + i).collect()
            }
        };
        picked.iter().for_each(|&i| pool.push(stream, i));
        remaining -= picked.len();
        if !picked.is_empty() {
            let base = if fitted { &update_cfg } else { cfg };
            let seeded = TrainConfig {
                seed: cfg.seed.wrapping_add(period as u64),
                ..base.clone()
            };
            pool.fit(model, &seeded)?;
            fitted = true;
        }
        let scores = period_scores(model, stream, start..end)?;
        let (acc, rate) = summarize(&skip_decisions(&scores, &labels[start..end], ONLINE_THRESHOLD));
        rows.push(TraceRow {
            period,
            acc,
            rate,
            labels_used: picked.len(),
            truncated: picked.len() < want,
        });
    }
    Ok(Trace {
        policy: policy.kind,
        rows,
    })
}
