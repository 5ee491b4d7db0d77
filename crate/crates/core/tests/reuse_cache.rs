mod common;

use common::brute_force;
use infilter_core::feature_nets::FeatureNetSpec;
use infilter_core::filter_model::{FilterKind, FilterModel};
use infilter_core::numerics::{Rng, Tensor};
use infilter_core::redundancy::{DiscreteKey, Discretization, ModelOutput};
use infilter_core::reuse_cache::{Cache, CacheConfig, Precomputed};

#[test]
fn hknn_matches_brute_force_on_random_caches() {
    let mut rng = Rng::new(2024);
    let mut queries = 0;
    while queries < 1000 {
        let size = 10 + rng.below(191);
        let n = size + 50;
        // Coarse integer distances force many ties.
        let metric = Precomputed::from_fn(n, |i, j| ((i * 31 + j * 17) % 23) as f64 / 23.0);
        let k = 1 + rng.below(size.min(15));
        let mut cache = Cache::new(CacheConfig {
            capacity: size,
            k,
            ..CacheConfig::default()
        })
        .unwrap();
        for key in 0..size {
            cache.insert(key, ModelOutput::Label(rng.below(4) as i64)).unwrap();
        }
        for _ in 0..50 {
            let q = size + rng.below(50);
            let got = cache.hknn(&q, &metric, k).unwrap();
            let (ids, key, theta) = brute_force(&cache, &metric, q, k);
            assert_eq!(got.neighbors, ids);
            assert_eq!(got.majority, key);
            assert_eq!(got.theta, theta);
            assert_eq!(got.y.discrete_key(Discretization::Undeclared).unwrap(), key);
            queries += 1;
        }
    }
}

#[test]
fn fifty_entries_k7_under_learned_distance() {
    let spec = FeatureNetSpec {
        emb_len: 8,
        dense_units: 8,
        ..FeatureNetSpec::vec(vec![3])
    };
    let model: FilterModel = FilterModel::new(FilterKind::Reuse, &[spec], 1, &mut Rng::new(1)).unwrap();
    let mut rng = Rng::new(5);
    let mut embed = || {
        let x = Tensor::vector((0..3).map(|_| rng.normal(0.0, 1.0) as f32).collect()).unwrap();
        model.embed(&[x]).unwrap()
    };
    let mut cache = Cache::new(CacheConfig {
        capacity: 50,
        k: 7,
        ..CacheConfig::default()
    })
    .unwrap();
    let keys: Vec<Tensor> = (0..50).map(|_| embed()).collect();
    for (i, key) in keys.iter().enumerate() {
        cache.insert(key.clone(), ModelOutput::Label((i % 3) as i64)).unwrap();
    }
    for _ in 0..20 {
        let q = embed();
        let got = cache.hknn(&q, &model, 7).unwrap();
        let mut all: Vec<(f64, u64)> = keys.iter().enumerate().map(|(i, k)| (model.distance(q.data(), k.data()), i as u64)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected: Vec<u64> = all[..7].iter().map(|a| a.1).collect();
        assert_eq!(got.neighbors, expected);
    }
}

fn scripted_cache(capacity: usize, k: usize, theta_t: f64) -> Cache<usize> {
    Cache::new(CacheConfig {
        capacity,
        k,
        theta_t,
        ..CacheConfig::default()
    })
    .unwrap()
}

#[test]
fn warm_up_never_reuses() {
    let metric = Precomputed::from_fn(100, |_, _| 0.0);
    let mut cache = scripted_cache(20, 3, 0.5);
    for q in 0..20 {
        let (_, reused) = cache.reuse_step(q, &metric, || ModelOutput::Label(1)).unwrap();
        assert!(!reused);
    }
    let (_, reused) = cache.reuse_step(20, &metric, || ModelOutput::Label(1)).unwrap();
    assert!(reused);
}

#[test]
fn full_homogeneity_threshold_rejects_mixed_pairs() {
    let metric = Precomputed::from_fn(200, |i, j| (i as f64 - j as f64).abs());
    let mut cache = scripted_cache(10, 2, 1.0);
    for q in 0..10 {
        cache.reuse_step(q, &metric, || ModelOutput::Label((q % 2) as i64)).unwrap();
    }
    for q in 10..200 {
        let (_, reused) = cache.reuse_step(q, &metric, || ModelOutput::Label((q % 2) as i64)).unwrap();
        assert!(!reused, "query {q}");
    }
}

#[test]
fn reuse_credits_majority_neighbours_only() {
    let metric = Precomputed::from_fn(10, |i, j| (i as f64 - j as f64).abs());
    let mut cache = scripted_cache(3, 3, 0.5);
    for (q, v) in [(1, 7), (2, 7), (3, 9)] {
        cache.reuse_step(q, &metric, || ModelOutput::Label(v)).unwrap();
    }
    let (y, reused) = cache.reuse_step(0, &metric, || unreachable!()).unwrap();
    assert!(reused);
    assert_eq!(y, ModelOutput::Label(7));
    let freqs: Vec<u64> = cache.entries().iter().map(|e| e.freq).collect();
    assert_eq!(freqs, vec![1, 1, 0]);
}

#[test]
fn capacity_and_eviction_accounting() {
    let mut rng = Rng::new(8);
    let metric = Precomputed::from_fn(3000, |i, j| ((i ^ j) % 97) as f64);
    let mut cache = scripted_cache(100, 5, 0.9);
    let mut inserts = 0u64;
    for q in 0..3000 {
        let label = rng.below(3) as i64;
        let (_, reused) = cache.reuse_step(q, &metric, || ModelOutput::Label(label)).unwrap();
        inserts += u64::from(!reused);
        assert!(cache.len() <= 100);
    }
    assert_eq!(cache.evictions(), inserts - 100);
}

#[test]
fn stream_lifecycle_resets_every_period() {
    let metric = Precomputed::from_fn(12_000, |i, j| ((i + j) % 13) as f64);
    let mut cache = Cache::new(CacheConfig {
        capacity: 1000,
        k: 10,
        theta_t: 0.5,
        reinit_every: Some(5000),
        discretization: Discretization::Undeclared,
    })
    .unwrap();
    let mut rng = Rng::new(4);
    for q in 0..12_000 {
        let label = rng.below(5) as i64;
        cache.reuse_step(q, &metric, || ModelOutput::Label(label)).unwrap();
        assert!(cache.len() <= 1000);
        if q % 5000 == 0 {
            assert_eq!(cache.len(), 1, "fresh cache at input {q}");
        }
    }
    assert_eq!(cache.resets(), 2);
}

#[test]
fn identical_streams_make_identical_decisions() {
    let run = || {
        let metric = Precomputed::from_fn(800, |i, j| ((i * 7 + j * 3) % 41) as f64);
        let mut cache = scripted_cache(50, 5, 0.6);
        let mut rng = Rng::new(12);
        (0..800)
            .map(|q| {
                let label = rng.below(3) as i64;
                cache.reuse_step(q, &metric, || ModelOutput::Label(label)).unwrap().1
            })
            .collect::<Vec<bool>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn continuous_results_need_a_discretization() {
    let mut cache: Cache<usize> = scripted_cache(4, 1, 0.5);
    assert!(cache.insert(0, ModelOutput::Scalar(1.5)).is_err());
    let mut cache: Cache<usize> = Cache::new(CacheConfig {
        capacity: 4,
        k: 1,
        discretization: Discretization::Nearest,
        ..CacheConfig::default()
    })
    .unwrap();
    cache.insert(0, ModelOutput::Scalar(1.5)).unwrap();
    assert_eq!(cache.entries()[0].result, DiscreteKey::Id(2));
}

#[test]
fn dump_writes_manifest_and_keys() {
    let mut cache: Cache<Tensor> = scripted_cache_tensor();
    cache.insert(Tensor::vector(vec![0.1, 0.2]).unwrap(), ModelOutput::Label(3)).unwrap();
    cache.insert(Tensor::vector(vec![0.3, 0.4]).unwrap(), ModelOutput::Label(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cache.dump(dir.path()).unwrap();
    let keys = infilter_core::numerics::read_tensor(&dir.path().join("keys.ift")).unwrap();
    assert_eq!(keys.shape(), &[2, 2]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cache.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 2);
}

fn scripted_cache_tensor() -> Cache<Tensor> {
    Cache::new(CacheConfig {
        capacity: 4,
        k: 1,
        ..CacheConfig::default()
    })
    .unwrap()
}
