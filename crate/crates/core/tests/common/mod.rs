#![allow(dead_code)]

use infilter_core::feature_nets::{FeatureNet, FeatureNetSpec};
use infilter_core::filter_model::{BatchTargets, FilterKind, FilterModel, Input};
use infilter_core::numerics::{Layer, Mode, Rng, Tensor};
use infilter_core::redundancy::DiscreteKey;
use infilter_core::reuse_cache::{Cache, Distance, Precomputed};

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-3;

/// Denominator floor: below this magnitude the f64 difference quotient at the
/// fine step is rounding-limited, so errors are measured absolutely.
const ZERO_FLOOR: f64 = 1e-6;

/// Step used to re-examine coordinates where the ±h window is not smooth.
pub const FD_FINE_STEP: f64 = 1e-6;

/// One-sided slopes disagreeing by more than this fraction mean the ±h window
/// straddles a ReLU/max kink or sits in a high-curvature LayerNorm region.
const ASYMMETRY_TOL: f64 = 1e-2;

#[derive(Debug, Default, Clone)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates whose ±h window was non-smooth and were re-checked at
    /// [`FD_FINE_STEP`].
    pub refined: usize,
    /// Coordinates non-smooth even at the fine step (a kink within 1e-6, seen
    /// as asymmetry or as the difference quotient moving when the step halves).
    pub kinks: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, f64, f64)>,
}

impl FdReport {
    pub fn merge(&mut self, other: &FdReport) {
        self.checked += other.checked;
        self.refined += other.refined;
        self.kinks += other.kinks;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err < FD_REL_TOL && self.kinks * 100 <= self.checked.max(1)
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ZERO_FLOOR)
}

fn asymmetric(fwd: f64, bwd: f64) -> bool {
    (fwd - bwd).abs() > ASYMMETRY_TOL * fwd.abs().max(bwd.abs()) + ZERO_FLOOR
}

/// Central-difference check. `loss_at(i, v)` evaluates the loss with
/// coordinate `i` set to `v` and every other coordinate at `base`.
///
/// A coordinate is judged at `h = FD_STEP` when the window is resolved at
/// that scale: the one-sided slopes agree and halving the step moves the
/// central difference by less than a quarter of the tolerance. Otherwise
/// (kink or near-singular LayerNorm within ±h) it is re-judged at
/// `FD_FINE_STEP` under the same tolerance and counted in `refined`.
pub fn fd_check(base: &[f64], analytic: &[f64], mut loss_at: impl FnMut(usize, f64) -> f64) -> FdReport {
    assert_eq!(base.len(), analytic.len());
    let mut report = FdReport::default();
    for (i, (&x, &g)) in base.iter().zip(analytic).enumerate() {
        let l0 = loss_at(i, x);
        let mut central = |h: f64| {
            let lp = loss_at(i, x + h);
            let lm = loss_at(i, x - h);
            ((lp - lm) / (2.0 * h), asymmetric((lp - l0) / h, (l0 - lm) / h))
        };
        let (coarse, coarse_kink) = central(FD_STEP);
        let (half, _) = central(FD_STEP / 2.0);
        let resolved = !coarse_kink && rel_err(coarse, half) <= 0.1 * FD_REL_TOL;
        let numeric = if resolved {
            coarse
        } else {
            let (fine, fine_kink) = central(FD_FINE_STEP);
            let (fine_half, _) = central(FD_FINE_STEP / 2.0);
            if fine_kink || rel_err(fine, fine_half) > 0.1 * FD_REL_TOL {
                report.kinks += 1;
                continue;
            }
            report.refined += 1;
            fine
        };
        let err = rel_err(numeric, g);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((i, numeric, g));
        }
    }
    report
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_range(lo, hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values with magnitude in `[lo, hi]` and random sign, away from ReLU kinks.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sign() * rng.uniform_range(lo, hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn weighted_sum(y: &Tensor<f64>, w: &[f64]) -> f64 {
    y.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Checks input and parameter gradients of a single layer under the loss
/// `Σ r_i y_i`. Every evaluation reseeds the RNG so dropout masks repeat.
pub fn check_layer(layer: &Layer<f64>, x: &Tensor<f64>, mode: Mode, seed: u64) -> FdReport {
    check_layer_with(layer, x, mode, seed, true)
}

/// As [`check_layer`]; `check_input = false` for non-differentiable inputs
/// such as token ids.
pub fn check_layer_with(layer: &Layer<f64>, x: &Tensor<f64>, mode: Mode, seed: u64, check_input: bool) -> FdReport {
    let mask_seed = seed ^ 0x5eed;
    let (y, mut tape) = layer.forward(x, mode, &mut Rng::new(mask_seed)).unwrap();
    let mut rng = Rng::new(seed);
    let weights: Vec<f64> = (0..y.len()).map(|_| rng.sign() * rng.uniform_range(0.5, 1.5)).collect();
    let g_out = Tensor::new(y.shape().to_vec(), weights.clone()).unwrap();
    let grads = layer.backward(&mut tape, &g_out).unwrap();

    let mut report = FdReport::default();
    if check_input {
        report = fd_check(x.data(), grads.input.data(), |i, v| {
            let mut xp = x.clone();
            xp.data_mut()[i] = v;
            let (y, _) = layer.forward(&xp, mode, &mut Rng::new(mask_seed)).unwrap();
            weighted_sum(&y, &weights)
        });
    } else {
        assert!(grads.input.data().iter().all(|&g| g == 0.0));
    }
    for (k, g) in grads.params.iter().enumerate() {
        let base = layer.params()[k].data().to_vec();
        let r = fd_check(&base, g.data(), |i, v| {
            let mut l = layer.clone();
            l.params_mut()[k].data_mut()[i] = v;
            let (y, _) = l.forward(x, mode, &mut Rng::new(mask_seed)).unwrap();
            weighted_sum(&y, &weights)
        });
        report.merge(&r);
    }
    report
}

/// Checks every parameter (and optionally the input) of a feature network
/// under `loss = Σ embed(x)`.
pub fn check_net(net: &FeatureNet<f64>, x: &Tensor<f64>, mode: Mode, seed: u64, check_input: bool) -> FdReport {
    let eval = |n: &FeatureNet<f64>, x: &Tensor<f64>| -> f64 {
        let (y, _) = n.forward(x, mode, &mut Rng::new(seed)).unwrap();
        y.sum_f64()
    };
    let (y, mut tape) = net.forward(x, mode, &mut Rng::new(seed)).unwrap();
    let (grads, g_in) = net.backward(&mut tape, &Tensor::full(y.shape(), 1.0)).unwrap();
    let mut report = FdReport::default();
    if check_input {
        report.merge(&fd_check(x.data(), g_in.data(), |i, v| {
            let mut xp = x.clone();
            xp.data_mut()[i] = v;
            eval(net, &xp)
        }));
    }
    let bases: Vec<Vec<f64>> = net.params().iter().map(|p| p.data().to_vec()).collect();
    for (k, g) in grads.iter().enumerate() {
        let r = fd_check(&bases[k], g.data(), |i, v| {
            let mut n = net.clone();
            n.params_mut()[k].data_mut()[i] = v;
            eval(&n, x)
        });
        report.merge(&r);
    }
    report
}

pub fn small_spec(dims: usize) -> FeatureNetSpec {
    FeatureNetSpec {
        dense_units: 6,
        emb_len: 4,
        dropout_p: 0.5,
        ..FeatureNetSpec::vec(vec![dims])
    }
}

pub fn vec_input<T: infilter_core::numerics::Scalar>(v: &[f64]) -> Input<T> {
    vec![Tensor::from_f64(&[v.len()], v).unwrap()]
}

pub fn loss_gradient_report(kind: FilterKind, seed: u64) -> FdReport {
    let mut rng = Rng::new(seed);
    let tasks = if kind == FilterKind::Skip { 2 } else { 1 };
    let mut model: FilterModel<f64> = FilterModel::new(kind, &[small_spec(3)], tasks, &mut rng).unwrap();
    // Zero-initialised biases put the zero input exactly on ReLU kinks.
    let shifted: Vec<Tensor<f64>> = model
        .params()
        .into_iter()
        .map(|p| {
            let d: Vec<f64> = p.data().iter().map(|v| v + rng.uniform_range(-0.3, 0.3)).collect();
            Tensor::new(p.shape().to_vec(), d).unwrap()
        })
        .collect();
    model.set_params(shifted).unwrap();
    let xs: Vec<Input<f64>> = (0..4)
        .map(|_| vec_input(&[rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)]))
        .collect();
    let batch: Vec<&Input<f64>> = xs.iter().collect();
    let labels: Vec<u8> = (0..xs.len() * tasks).map(|_| rng.below(2) as u8).collect();
    let results: Vec<i64> = vec![0, 1, 0, 2];
    let targets = match kind {
        FilterKind::Skip => BatchTargets::Redundancy(&labels),
        FilterKind::Reuse => BatchTargets::Results(&results),
    };
    let mask_seed = seed ^ 0xd00d;
    let (_, grads) = model.batch_loss(&batch, targets, &mut Rng::new(mask_seed)).unwrap();
    let base: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
    let mut report = FdReport::default();
    for (k, g) in grads.iter().enumerate() {
        let r = fd_check(base[k].data(), g.data(), |i, v| {
            let mut p = base.clone();
            p[k].data_mut()[i] = v;
            let mut m = model.clone();
            m.set_params(p).unwrap();
            m.batch_loss(&batch, targets, &mut Rng::new(mask_seed)).unwrap().0
        });
        report.merge(&r);
    }
    report
}

/// Exhaustive reference: an entry is a neighbour iff fewer than `k` entries
/// precede it in (distance, insert_seq) order.
pub fn brute_force(cache: &Cache<usize>, metric: &Precomputed, q: usize, k: usize) -> (Vec<u64>, DiscreteKey, f64) {
    let entries = cache.entries();
    let d: Vec<f64> = entries.iter().map(|e| metric.distance(&q, &e.key)).collect();
    let mut neighbours: Vec<(usize, usize)> = Vec::new();
    for i in 0..entries.len() {
        let before = (0..entries.len())
            .filter(|&j| d[j] < d[i] || (d[j] == d[i] && entries[j].insert_seq < entries[i].insert_seq))
            .count();
        if before < k {
            neighbours.push((before, i));
        }
    }
    neighbours.sort();
    let ids: Vec<u64> = neighbours.iter().map(|&(_, i)| entries[i].insert_seq).collect();
    let mut best: Option<(usize, usize, DiscreteKey)> = None;
    for (rank, &(_, i)) in neighbours.iter().enumerate() {
        let key = &entries[i].result;
        let votes = neighbours.iter().filter(|&&(_, j)| &entries[j].result == key).count();
        let better = match &best {
            None => true,
            Some((v, r, _)) => votes > *v || (votes == *v && rank < *r),
        };
        if better {
            best = Some((votes, rank, key.clone()));
        }
    }
    let (votes, _, key) = best.unwrap();
    (ids, key, votes as f64 / k as f64)
}
