//! The REUSE key-value cache: H-KNN lookup under a learned distance,
//! homogeneity-based miss detection and LFU replacement.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_model::FilterModel;
use crate::numerics::{write_tensor, Scalar, Tensor};
use crate::redundancy::{DiscreteKey, Discretization, ModelOutput};

/// Distance between a query and a stored key.
pub trait Distance<K> {
    fn distance(&self, query: &K, key: &K) -> f64;
}

/// The trained classifier as a distance: `σ(Σ w |q − k| + b)`.
impl<T: Scalar> Distance<Tensor<T>> for FilterModel<T> {
    fn distance(&self, query: &Tensor<T>, key: &Tensor<T>) -> f64 {
        FilterModel::distance(self, query.data(), key.data())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Euclidean;

impl<T: Scalar> Distance<Tensor<T>> for Euclidean {
    fn distance(&self, query: &Tensor<T>, key: &Tensor<T>) -> f64 {
        query
            .data()
            .iter()
            .zip(key.data())
            .map(|(a, b)| {
                let d = a.to_f64_lossy() - b.to_f64_lossy();
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Distances looked up in a precomputed `n × n` matrix; keys are row ids.
#[derive(Clone, Debug)]
pub struct Precomputed {
    n: usize,
    matrix: Vec<f64>,
}

impl Precomputed {
    pub fn new(n: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::shape("distance matrix", &[n, n], &[matrix.len()]));
        }
        Ok(Self { n, matrix })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let matrix = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        Self { n, matrix }
    }
}

impl Distance<usize> for Precomputed {
    fn distance(&self, query: &usize, key: &usize) -> f64 {
        self.matrix[query * self.n + key]
    }
}

fn default_capacity() -> usize {
    1000
}
fn default_k() -> usize {
    10
}
fn default_theta() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    /// `s`.
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    /// `K`.
    #[serde(default = "default_k")]
    pub k: usize,
    /// `θ_T`.
    #[serde(default = "default_theta")]
    pub theta_t: f64,
    /// Clear the cache every this many processed inputs.
    #[serde(default)]
    pub reinit_every: Option<usize>,
    #[serde(default)]
    pub discretization: Discretization,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            capacity: default_capacity(),
            k: default_k(),
            theta_t: default_theta(),
            reinit_every: None,
            discretization: Discretization::Undeclared,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.capacity < self.k {
            return Err(Error::InvalidSpec(format!(
                "cache needs 1 <= K <= s, got K = {} and s = {}",
                self.k, self.capacity
            )));
        }
        if !(0.0..=1.0).contains(&self.theta_t) {
            return Err(Error::InvalidSpec(format!("theta_T {} outside [0, 1]", self.theta_t)));
        }
        if self.reinit_every == Some(0) {
            return Err(Error::InvalidSpec("reinit_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry<K> {
    pub key: K,
    pub value: ModelOutput,
    pub result: DiscreteKey,
    pub freq: u64,
    pub insert_seq: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HknnResult {
    /// Value of the nearest neighbour holding the majority result.
    pub y: ModelOutput,
    pub majority: DiscreteKey,
    /// Votes for the majority divided by `K`.
    pub theta: f64,
    /// `insert_seq` of the K nearest entries, nearest first.
    pub neighbors: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct Cache<K> {
    config: CacheConfig,
    entries: Vec<CacheEntry<K>>,
    next_seq: u64,
    processed: u64,
    evictions: u64,
    resets: u64,
}

impl<K: Clone> Cache<K> {
    pub fn new(config: CacheConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            entries: Vec::new(),
            next_seq: 0,
            processed: 0,
            evictions: 0,
            resets: 0,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CacheEntry<K>] {
        &self.entries
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// The `k` entries nearest to `query`, ties in distance broken by lower
    /// `insert_seq`, with the majority result and homogeneity `θ`.
    pub fn hknn(&self, query: &K, metric: &impl Distance<K>, k: usize) -> Result<HknnResult> {
        if k == 0 || self.entries.len() < k {
            return Err(Error::CacheUnderfull {
                need: k,
                have: self.entries.len(),
            });
        }
        let mut ranked: Vec<(f64, u64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (metric.distance(query, &e.key), e.insert_seq, i))
            .collect();
        let order = |a: &(f64, u64, usize), b: &(f64, u64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < ranked.len() {
            ranked.select_nth_unstable_by(k - 1, order);
            ranked.truncate(k);
        }
        ranked.sort_by(order);

        let mut votes: HashMap<&DiscreteKey, (usize, usize)> = HashMap::new();
        for (rank, &(_, _, i)) in ranked.iter().enumerate() {
            let v = votes.entry(&self.entries[i].result).or_insert((0, rank));
            v.0 += 1;
        }
        let (&majority, &(count, first_rank)) = votes
            .iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .expect("k >= 1 neighbours");
        let winner = &self.entries[ranked[first_rank].2];
        Ok(HknnResult {
            y: winner.value.clone(),
            majority: majority.clone(),
            theta: count as f64 / k as f64,
            neighbors: ranked.iter().map(|r| r.1).collect(),
        })
    }

    /// Credits the neighbours that voted for the reused majority.
    pub fn mark_reused(&mut self, result: &HknnResult) {
        for e in &mut self.entries {
            if e.result == result.majority && result.neighbors.contains(&e.insert_seq) {
                e.freq += 1;
            }
        }
    }

    /// Appends while below capacity, otherwise replaces the least frequently
    /// used entry (oldest on ties). Returns the evicted entry, if any.
    pub fn insert(&mut self, key: K, value: ModelOutput) -> Result<Option<CacheEntry<K>>> {
        let entry = CacheEntry {
            key,
            result: value.discrete_key(self.config.discretization)?,
            value,
            freq: 0,
            insert_seq: self.next_seq,
        };
        self.next_seq += 1;
        if self.entries.len() < self.config.capacity {
            self.entries.push(entry);
            return Ok(None);
        }
        let victim = self
            .entries
            .iter()
            .enumerate()
            .min_by_key(|(_, e)| (e.freq, e.insert_seq))
            .map(|(i, _)| i)
            .expect("capacity >= 1");
        self.evictions += 1;
        Ok(Some(std::mem::replace(&mut self.entries[victim], entry)))
    }

    /// One InFi-Reuse step. During warm-up (`len < s`) or on a miss
    /// (`θ < θ_T`) the oracle runs and its result is cached; otherwise the
    /// cached majority is returned and `reused` is true.
    pub fn reuse_step(
        &mut self,
        query: K,
        metric: &impl Distance<K>,
        inference: impl FnOnce() -> ModelOutput,
    ) -> Result<(ModelOutput, bool)> {
        let out = self.step(query, metric, inference)?;
        Ok((out.y, out.reused))
    }

    /// Same as [`Cache::reuse_step`] but also reports θ and warm-up status.
    pub fn step(
        &mut self,
        query: K,
        metric: &impl Distance<K>,
        inference: impl FnOnce() -> ModelOutput,
    ) -> Result<StepOutcome> {
        if let Some(every) = self.config.reinit_every {
            if self.processed > 0 && self.processed % every as u64 == 0 {
                self.entries.clear();
                self.resets += 1;
            }
        }
        self.processed += 1;
        if self.entries.len() < self.config.capacity {
            let y = inference();
            self.insert(query, y.clone())?;
            return Ok(StepOutcome {
                y,
                reused: false,
                theta: None,
                warm_up: true,
            });
        }
        let hit = self.hknn(&query, metric, self.config.k)?;
        let theta = Some(hit.theta);
        if hit.theta >= self.config.theta_t {
            self.mark_reused(&hit);
            return Ok(StepOutcome {
                y: hit.y,
                reused: true,
                theta,
                warm_up: false,
            });
        }
        let y = inference();
        self.insert(query, y.clone())?;
        Ok(StepOutcome {
            y,
            reused: false,
            theta,
            warm_up: false,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub y: ModelOutput,
    pub reused: bool,
    /// `None` during warm-up.
    pub theta: Option<f64>,
    pub warm_up: bool,
}

#[derive(Serialize)]
struct DumpEntry<'a> {
    insert_seq: u64,
    freq: u64,
    value: &'a ModelOutput,
}

#[derive(Serialize)]
struct DumpManifest<'a> {
    config: &'a CacheConfig,
    entries: Vec<DumpEntry<'a>>,
    keys: &'static str,
}

impl Cache<Tensor> {
    /// Writes `cache.json` and the stacked keys as `keys.ift`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(first) = self.entries.first() {
            let mut shape = vec![self.entries.len()];
            shape.extend_from_slice(first.key.shape());
            let data = self.entries.iter().flat_map(|e| e.key.data().iter().copied()).collect();
            write_tensor(&dir.join("keys.ift"), &Tensor::new(shape, data)?)?;
        }
        let manifest = DumpManifest {
            config: &self.config,
            entries: self
                .entries
                .iter()
                .map(|e| DumpEntry {
                    insert_seq: e.insert_seq,
                    freq: e.freq,
                    value: &e.value,
                })
                .collect(),
            keys: "keys.ift",
        };
        let path = dir.join("cache.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
    }
}
