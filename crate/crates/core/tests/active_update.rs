use infilter_core::active_update::{
    run_online, select_least_confidence, selection_size, PolicyKind, PolicySpec, Trace,
};
use infilter_core::feature_nets::FeatureNetSpec;
use infilter_core::filter_model::{FilterKind, FilterModel, TrainConfig};
use infilter_core::numerics::Rng;
use infilter_core::redundancy::{gen_dataset, Dataset, DriftConfig, SyntheticWorkload, WorkloadConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn selection_takes_the_least_confident_prefix(
        conf in prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.2, 0.3, 0.45]), 1..60),
        beta in 0.01..=1.0f64,
    ) {
        let picked = select_least_confidence(&conf, beta).unwrap();
        prop_assert_eq!(picked.len(), selection_size(beta, conf.len()));
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        for i in 0..conf.len() {
            if picked.contains(&i) {
                continue;
            }
            for &j in &picked {
                prop_assert!(conf[j] < conf[i] || (conf[j] == conf[i] && j < i));
            }
        }
    }
}

fn stream(switch_at: f64, n: usize, seed: u64) -> (SyntheticWorkload, Dataset) {
    let w = SyntheticWorkload::new(WorkloadConfig::DriftStream(DriftConfig {
        switch_at,
        ..DriftConfig::default()
    }))
    .unwrap();
    let ds = gen_dataset(&w, w.spec(), n, seed).unwrap();
    (w, ds)
}

fn fresh(w: &SyntheticWorkload, seed: u64) -> FilterModel {
    FilterModel::new(FilterKind::Skip, &[FeatureNetSpec::vec(w.input_dims())], 1, &mut Rng::new(seed)).unwrap()
}

fn policy(kind: PolicyKind, period_len: usize, beta: f64, label_budget: Option<usize>) -> PolicySpec {
    PolicySpec {
        kind,
        period_len,
        beta,
        label_budget,
    }
}

#[test]
fn budgets_and_selection_sizes_are_respected() {
    let (w, ds) = stream(0.5, 1000, 1);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::with_seed(4)
    };
    let trace = run_online(&mut fresh(&w, 1), &ds, &policy(PolicyKind::Active, 100, 0.1, None), &cfg).unwrap();
    assert_eq!(trace.rows.len(), 10);
    assert!(trace.rows.iter().all(|r| r.labels_used == 10 && !r.truncated));

    let trace = run_online(&mut fresh(&w, 1), &ds, &policy(PolicyKind::Periodic, 100, 0.1, Some(35)), &cfg).unwrap();
    let used: Vec<usize> = trace.rows.iter().map(|r| r.labels_used).collect();
    assert_eq!(used, vec![10, 10, 10, 5, 0, 0, 0, 0, 0, 0]);
    assert!(trace.rows[3].truncated && trace.rows[9].truncated && !trace.rows[2].truncated);
    assert_eq!(trace.labels_used(), 35);

    let trace = run_online(&mut fresh(&w, 1), &ds, &policy(PolicyKind::Offline, 100, 0.1, Some(40)), &cfg).unwrap();
    assert_eq!(trace.labels_used(), 40);
    assert!(trace.rows[0].truncated);
}

#[test]
fn full_selection_over_one_period_equals_offline_supervision() {
    let (w, ds) = stream(0.5, 300, 2);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::with_seed(5)
    };
    let mut active = fresh(&w, 3);
    let mut offline = fresh(&w, 3);
    let a = run_online(&mut active, &ds, &policy(PolicyKind::Active, 300, 1.0, None), &cfg).unwrap();
    let o = run_online(&mut offline, &ds, &policy(PolicyKind::Offline, 300, 1.0, None), &cfg).unwrap();
    assert_eq!(a.rows, o.rows);
    assert_eq!(active.params(), offline.params());
}

#[test]
fn runs_are_deterministic_and_reject_reuse_models() {
    let (w, ds) = stream(0.5, 600, 3);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::with_seed(6)
    };
    let p = policy(PolicyKind::Active, 100, 0.1, None);
    let a = run_online(&mut fresh(&w, 4), &ds, &p, &cfg).unwrap();
    let b = run_online(&mut fresh(&w, 4), &ds, &p, &cfg).unwrap();
    assert_eq!(a, b);

    let mut reuse = FilterModel::new(FilterKind::Reuse, &[FeatureNetSpec::vec(w.input_dims())], 1, &mut Rng::new(1)).unwrap();
    assert!(run_online(&mut reuse, &ds, &p, &cfg).is_err());
    assert!(run_online(&mut fresh(&w, 4), &ds, &policy(PolicyKind::Active, 5, 0.1, None), &cfg).is_err());
}

#[test]
fn trace_csv_layout() {
    let (w, ds) = stream(0.5, 200, 4);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::with_seed(7)
    };
    let trace = run_online(&mut fresh(&w, 5), &ds, &policy(PolicyKind::Periodic, 100, 0.1, None), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    trace.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("period,acc,rate,labels_used,truncated"));
    assert_eq!(lines.count(), 2);
}

fn mean_over_seeds(switch_at: f64, n: usize, seeds: std::ops::Range<u64>) -> [f64; 3] {
    let runs: Vec<[f64; 3]> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .clone()
            .map(|seed| {
                scope.spawn(move || {
                    let (w, ds) = stream(switch_at, n, 100 + seed);
                    let budget = Some(n / 10);
                    let mut out = [0.0; 3];
                    for (slot, kind) in [PolicyKind::Offline, PolicyKind::Periodic, PolicyKind::Active].into_iter().enumerate() {
                        let trace: Trace = run_online(
                            &mut fresh(&w, seed),
                            &ds,
                            &policy(kind, 200, 0.1, budget),
                            &TrainConfig::with_seed(seed + 7),
                        )
                        .unwrap();
                        out[slot] = trace.mean_acc();
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let k = runs.len() as f64;
    [0, 1, 2].map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / k)
}

#[test]
fn without_drift_policies_stay_within_three_points() {
    let [offline, periodic, active] = mean_over_seeds(1.0, 8000, 0..5);
    let spread = offline.max(periodic).max(active) - offline.min(periodic).min(active);
    assert!(spread < 0.03, "offline {offline} periodic {periodic} active {active}");
}
