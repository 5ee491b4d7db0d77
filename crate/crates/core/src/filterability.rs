//! Empirical Rademacher complexity of finite hypothesis families and
//! numerical checks of the filterability lemmas.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Default largest sample size enumerated exactly (`2^12` sign vectors).
pub const DEFAULT_EXACT_CAP: usize = 12;
/// Hard ceiling for exact enumeration.
pub const MAX_EXACT_CAP: usize = 20;
pub const EXACT_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueRange {
    Binary,
    Bounded { m: f64 },
}

/// A finite family materialised as value vectors on a fixed sample `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisFamily {
    pub members: Vec<Vec<f64>>,
    pub range: ValueRange,
}

impl HypothesisFamily {
    pub fn new(members: Vec<Vec<f64>>, range: ValueRange) -> Result<Self> {
        let family = Self { members, range };
        family.validate()?;
        Ok(family)
    }

    pub fn binary(members: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(members, ValueRange::Binary)
    }

    /// Bounded by the largest absolute value present.
    pub fn real(members: Vec<Vec<f64>>) -> Result<Self> {
        let m = members.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        Self::new(members, ValueRange::Bounded { m })
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.members.first().ok_or(Error::EmptyFamily)?;
        let m = first.len();
        if m == 0 {
            return Err(Error::InvalidSpec("value vectors must be non-empty".into()));
        }
        for (i, h) in self.members.iter().enumerate() {
            if h.len() != m {
                return Err(Error::shape(format!("family member {i}"), &[m], &[h.len()]));
            }
            for &v in h {
                let ok = match self.range {
                    ValueRange::Binary => v == 1.0 || v == -1.0,
                    ValueRange::Bounded { m } => v.is_finite() && v.abs() <= m,
                };
                if !ok {
                    return Err(Error::InvalidSpec(format!("member {i} value {v} outside {:?}", self.range)));
                }
            }
        }
        Ok(())
    }

    /// Sample size `|S|`.
    pub fn m(&self) -> usize {
        self.members.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Drops repeated value vectors, keeping first occurrences.
    pub fn dedup(&self) -> Self {
        Self {
            members: dedup(self.members.clone()),
            range: self.range,
        }
    }
}

fn dedup(members: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut seen = HashSet::new();
    members
        .into_iter()
        .filter(|h| seen.insert(h.iter().map(|v| v.to_bits()).collect::<Vec<u64>>()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EstimateMode {
    Exact { cap: usize },
    MonteCarlo { draws: usize, seed: u64 },
}

impl Default for EstimateMode {
    fn default() -> Self {
        EstimateMode::Exact { cap: DEFAULT_EXACT_CAP }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub value: f64,
    /// Zero for exact enumeration.
    pub std_error: f64,
    pub mode: EstimateMode,
}

fn sup_correlation(members: &[Vec<f64>], sigma: &[f64]) -> f64 {
    members
        .iter()
        .map(|h| h.iter().zip(sigma).map(|(v, s)| v * s).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
        / sigma.len() as f64
}

/// `E_σ[sup_h (1/m) Σ σ_i h(x_i)]`, exactly over all `2^m` sign vectors or
/// by Monte Carlo.
pub fn empirical_rademacher(family: &HypothesisFamily, mode: EstimateMode) -> Result<RademacherEstimate> {
    family.validate()?;
    let members = dedup(family.members.clone());
    let m = family.m();
    let mut sigma = vec![0.0; m];
    match mode {
        EstimateMode::Exact { cap } => {
            let cap = cap.min(MAX_EXACT_CAP);
            if m > cap {
                return Err(Error::ExactCapExceeded { m, cap });
            }
            let count = 1u64 << m;
            let mut total = 0.0;
            for mask in 0..count {
                for (i, s) in sigma.iter_mut().enumerate() {
                    *s = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
                }
                total += sup_correlation(&members, &sigma);
            }
            Ok(RademacherEstimate {
                value: total / count as f64,
                std_error: 0.0,
                mode,
            })
        }
        EstimateMode::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(Error::InvalidSpec("Monte Carlo needs at least 2 draws".into()));
            }
            let mut rng = Rng::new(seed);
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..draws {
                sigma.iter_mut().for_each(|s| *s = rng.sign());
                let v = sup_correlation(&members, &sigma);
                sum += v;
                sq += v * v;
            }
            let n = draws as f64;
            let mean = sum / n;
            let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
            Ok(RademacherEstimate {
                value: mean,
                std_error: (var / n).sqrt(),
                mode,
            })
        }
    }
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `{sign(h·(h + b)) : h ∈ H, b ∈ b_grid}`, deduplicated; `sign(0) = +1`.
pub fn derive_conf_family(h: &HypothesisFamily, b_grid: &[f64]) -> Result<HypothesisFamily> {
    if b_grid.is_empty() {
        return Err(Error::InvalidSpec("b_grid is empty".into()));
    }
    if !b_grid.contains(&2.0) {
        return Err(Error::InvalidSpec("b_grid must contain the witness b = 2".into()));
    }
    if h.range != ValueRange::Binary {
        return Err(Error::InvalidSpec("confidence families need a {-1, +1} family".into()));
    }
    h.validate()?;
    let members = h
        .members
        .iter()
        .flat_map(|hv| b_grid.iter().map(move |&b| hv.iter().map(|&v| sign(v * (v + b))).collect()))
        .collect();
    HypothesisFamily::binary(dedup(members))
}

fn tuple_max(parts: &[&HypothesisFamily]) -> Vec<Vec<f64>> {
    let m = parts[0].m();
    let mut acc: Vec<Vec<f64>> = vec![vec![f64::NEG_INFINITY; m]];
    for part in parts {
        acc = acc
            .iter()
            .flat_map(|partial| {
                part.members
                    .iter()
                    .map(move |h| partial.iter().zip(h).map(|(a, b)| a.max(*b)).collect())
            })
            .collect();
    }
    dedup(acc)
}

/// `(H_max, G_max)`: pointwise maxima over one member from every part, and
/// over one member from each part indexed by `j` (0-based).
pub fn derive_subset_family(parts: &[HypothesisFamily], j: &[usize]) -> Result<(HypothesisFamily, HypothesisFamily)> {
    if parts.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if j.is_empty() {
        return Err(Error::EmptySubset);
    }
    let m = parts[0].m();
    for (i, p) in parts.iter().enumerate() {
        p.validate()?;
        if p.m() != m {
            return Err(Error::shape(format!("part {i}"), &[m], &[p.m()]));
        }
    }
    let mut chosen: Vec<usize> = j.to_vec();
    chosen.sort_unstable();
    chosen.dedup();
    if let Some(&bad) = chosen.iter().find(|&&i| i >= parts.len()) {
        return Err(Error::InvalidSpec(format!("subset index {bad} out of {} parts", parts.len())));
    }
    let all: Vec<&HypothesisFamily> = parts.iter().collect();
    let sub: Vec<&HypothesisFamily> = chosen.iter().map(|&i| &parts[i]).collect();
    Ok((HypothesisFamily::real(tuple_max(&all))?, HypothesisFamily::real(tuple_max(&sub))?))
}

/// `{x ↦ |h(x) − c(x)|^p : h ∈ H}` after checking `|h − c| ≤ M` on `S`.
pub fn loss_family(h: &HypothesisFamily, c: &[f64], p: f64, bound: f64) -> Result<HypothesisFamily> {
    h.validate()?;
    if c.len() != h.m() {
        return Err(Error::shape("target values", &[h.m()], &[c.len()]));
    }
    if !(p >= 1.0) || !(bound >= 0.0) {
        return Err(Error::InvalidSpec(format!("need p >= 1 and M >= 0, got p = {p}, M = {bound}")));
    }
    let mut members = Vec::with_capacity(h.len());
    for (member, hv) in h.members.iter().enumerate() {
        let mut row = Vec::with_capacity(hv.len());
        for (sample, (v, t)) in hv.iter().zip(c).enumerate() {
            let gap = (v - t).abs();
            if gap > bound {
                return Err(Error::BoundViolation {
                    member,
                    sample,
                    value: gap,
                    bound,
                });
            }
            row.push(gap.powf(p));
        }
        members.push(row);
    }
    HypothesisFamily::new(members, ValueRange::Bounded { m: bound.powf(p) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    /// `R(G) ≥ R(H)` for confidence-derived families.
    L1,
    /// `R(G_max) ≤ R(H_max)` for class-subset families.
    L2,
    /// `R(|h − c|^p) ≤ p M^{p−1} R(H)`.
    T2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "lemma", rename_all = "snake_case")]
pub enum Instance {
    L1 {
        h: HypothesisFamily,
        b_grid: Vec<f64>,
    },
    L2 {
        parts: Vec<HypothesisFamily>,
        j: Vec<usize>,
    },
    T2 {
        h: HypothesisFamily,
        c: Vec<f64>,
        p: f64,
        bound: f64,
    },
}

impl Instance {
    pub fn lemma(&self) -> Lemma {
        match self {
            Instance::L1 { .. } => Lemma::L1,
            Instance::L2 { .. } => Lemma::L2,
            Instance::T2 { .. } => Lemma::T2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub lemma: Lemma,
    pub seed: Option<u64>,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// Signed distance from violation; negative when violated.
    pub margin: f64,
    pub exact: bool,
}

/// Computes both sides of the inequality named by `lemma` on `instance`.
pub fn verify(lemma: Lemma, instance: &Instance, mode: EstimateMode) -> Result<VerifyReport> {
    if instance.lemma() != lemma {
        return Err(Error::Mode(format!(
            "instance is for {:?}, verification asked for {lemma:?}",
            instance.lemma()
        )));
    }
    let (lhs, rhs, scale) = match instance {
        Instance::L1 { h, b_grid } => {
            let g = derive_conf_family(h, b_grid)?;
            (empirical_rademacher(&g, mode)?, empirical_rademacher(h, mode)?, 1.0)
        }
        Instance::L2 { parts, j } => {
            let (h_max, g_max) = derive_subset_family(parts, j)?;
            (empirical_rademacher(&g_max, mode)?, empirical_rademacher(&h_max, mode)?, 1.0)
        }
        Instance::T2 { h, c, p, bound } => {
            let losses = loss_family(h, c, *p, *bound)?;
            let factor = p * bound.powf(p - 1.0);
            (empirical_rademacher(&losses, mode)?, empirical_rademacher(h, mode)?, factor)
        }
    };
    let rhs_value = scale * rhs.value;
    let slack = match mode {
        EstimateMode::Exact { .. } => EXACT_SLACK,
        EstimateMode::MonteCarlo { .. } => 3.0 * (lhs.std_error.powi(2) + (scale * rhs.std_error).powi(2)).sqrt(),
    };
    let margin = match lemma {
        Lemma::L1 => lhs.value - rhs_value,
        Lemma::L2 | Lemma::T2 => rhs_value - lhs.value,
    };
    Ok(VerifyReport {
        lemma,
        seed: None,
        lhs: lhs.value,
        rhs: rhs_value,
        satisfied: margin >= -slack,
        margin,
        exact: matches!(mode, EstimateMode::Exact { .. }),
    })
}

fn binary_vectors(rng: &mut Rng, count: usize, m: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..m).map(|_| rng.sign()).collect()).collect()
}

fn real_vectors(rng: &mut Rng, count: usize, m: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..m).map(|_| rng.uniform_range(lo, hi)).collect())
        .collect()
}

/// Seeded random instance: `m ∈ [2, 10]`; L1 draws up to 16 sign vectors and
/// a `b` grid containing 2; L2 draws 1–3 parts of 1–4 members with values in
/// `[0, 1]` and a random non-empty `J`; T2 draws up to 8 members and targets
/// in `[−1, 1]`, `p ∈ {1, 2, 3}` and the tightest `M`.
pub fn random_instance(lemma: Lemma, seed: u64) -> Result<Instance> {
    let mut rng = Rng::new(seed);
    let m = 2 + rng.below(9);
    match lemma {
        Lemma::L1 => {
            let count = 1 + rng.below(16);
            let mut b_grid = vec![2.0];
            for _ in 0..rng.below(4) {
                b_grid.push((rng.uniform_range(-3.0, 3.0) * 4.0).round() / 4.0);
            }
            Ok(Instance::L1 {
                h: HypothesisFamily::binary(binary_vectors(&mut rng, count, m))?,
                b_grid,
            })
        }
        Lemma::L2 => {
            let l = 1 + rng.below(3);
            let parts = (0..l)
                .map(|_| {
                    let count = 1 + rng.below(4);
                    HypothesisFamily::real(real_vectors(&mut rng, count, m, 0.0, 1.0))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut j: Vec<usize> = (0..l).filter(|_| rng.bernoulli(0.5)).collect();
            if j.is_empty() {
                j.push(rng.below(l));
            }
            Ok(Instance::L2 { parts, j })
        }
        Lemma::T2 => {
            let count = 1 + rng.below(8);
            let h = HypothesisFamily::real(real_vectors(&mut rng, count, m, -1.0, 1.0))?;
            let c: Vec<f64> = (0..m).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let p = (1 + rng.below(3)) as f64;
            let bound = h
                .members
                .iter()
                .flat_map(|hv| hv.iter().zip(&c).map(|(v, t)| (v - t).abs()))
                .fold(0.0, f64::max);
            Ok(Instance::T2 { h, c, p, bound })
        }
    }
}

/// Verifies `count` random instances seeded `seed0, seed0 + 1, …`.
pub fn verify_random(lemma: Lemma, seed0: u64, count: usize, mode: EstimateMode) -> Result<Vec<VerifyReport>> {
    (0..count as u64)
        .map(|k| {
            let seed = seed0 + k;
            let instance = random_instance(lemma, seed)?;
            let mut report = verify(lemma, &instance, mode)?;
            report.seed = Some(seed);
            Ok(report)
        })
        .collect()
}
