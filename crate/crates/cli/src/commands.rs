use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use infilter_core::active_update::{run_online, selection_size, PolicyKind, PolicySpec};
use infilter_core::feature_nets::FeatureNetSpec;
use infilter_core::filter_model::{FilterKind, FilterModel, Targets};
use infilter_core::filterability::{verify_random, EstimateMode, Lemma};
use infilter_core::numerics::Rng;
use infilter_core::pipeline::{
    baseline_lowlevel, optimal_rate, rate_at_accuracy, run_reuse, run_skip, skip_scores, sweep, validity, write_curve_csv, write_decisions_csv, Curve, Goal, Validity,
};
use infilter_core::redundancy::{gen_dataset, load_dataset, result_ids, save_dataset, Dataset, SyntheticWorkload};
use serde::Serialize;

use crate::config::{required, RunConfig};
use crate::Usage;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn workload_of(ds: &Dataset) -> Result<SyntheticWorkload> {
    Ok(SyntheticWorkload::new(ds.workload.clone())?)
}

fn load(cfg: &RunConfig, field: &str, value: &Option<std::path::PathBuf>) -> Result<Dataset> {
    let dir = cfg.path(field, value)?;
    Ok(load_dataset(&dir)?)
}

fn load_model(cfg: &RunConfig) -> Result<FilterModel> {
    let dir = cfg.path("model", &cfg.model)?;
    Ok(FilterModel::load(&dir)?)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let workload = SyntheticWorkload::new(required("workload", &cfg.workload)?.clone())?;
    let n = *required("n", &cfg.n)?;
    let spec = cfg.redundancy.clone().unwrap_or_else(|| workload.spec().clone());
    let ds = gen_dataset(&workload, &spec, n, cfg.seed)?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {} samples to {} (r_N measured {:.4}, declared {:.4})",
        ds.len(),
        out.display(),
        ds.redundant_ratio(),
        workload.declared_r_n()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    kind: FilterKind,
    samples: usize,
    epochs: usize,
    final_loss: f64,
    train_acc: Option<f64>,
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load(cfg, "dataset", &cfg.dataset)?;
    let filter = required("filter", &cfg.filter)?;
    let net = match &filter.net {
        Some(net) => net.clone(),
        None => FeatureNetSpec::vec(ds.samples[0].x.shape().to_vec()),
    };
    let mut model = FilterModel::new(filter.kind, &[net], filter.tasks, &mut Rng::new(cfg.seed))?;
    let train_cfg = cfg.train.as_ref().map(|t| t.to_config(cfg.seed)).unwrap_or_else(|| {
        crate::config::TrainSection::default().to_config(cfg.seed)
    });
    let inputs = ds.inputs();
    let losses = match filter.kind {
        FilterKind::Skip => model.train(&inputs, Targets::Redundancy(&ds.labels()), &train_cfg)?,
        FilterKind::Reuse => {
            let ids = result_ids(&ds.outputs(), workload_of(&ds)?.discretization())?;
            model.train(&inputs, Targets::Results(&ids), &train_cfg)?
        }
    };
    model.save(&out.join("model"))?;

    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    let loss_path = out.join("loss.csv");
    fs::write(&loss_path, csv).with_context(|| format!("writing {}", loss_path.display()))?;

    let train_acc = match filter.kind {
        FilterKind::Skip => {
            let scores = skip_scores(&model, &ds)?;
            let agree = scores
                .iter()
                .zip(ds.labels())
                .filter(|(s, z)| (**s > 0.5) == (*z == 1))
                .count();
            Some(agree as f64 / ds.len() as f64)
        }
        FilterKind::Reuse => None,
    };
    let summary = TrainSummary {
        kind: filter.kind,
        samples: ds.len(),
        epochs: losses.len(),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        train_acc,
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    match train_acc {
        Some(acc) => println!("trained {} filter: final loss {:.5}, train accuracy {acc:.4}", filter.kind, summary.final_loss),
        None => println!("trained {} filter: final loss {:.5}", filter.kind, summary.final_loss),
    }
    Ok(())
}

fn check_mode(cfg: &RunConfig, model: &FilterModel) -> Result<()> {
    match cfg.mode {
        Some(mode) if mode != model.kind() => {
            Err(Usage(format!("config mode {mode} does not match the {} model", model.kind())).into())
        }
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct SweepSummary {
    mode: FilterKind,
    param_name: &'static str,
    points: usize,
    target_accuracy: f64,
    rate_at_accuracy: f64,
    r_n: f64,
    optimal_rate: f64,
    ratio: f64,
    validity: Option<Validity>,
    baseline_rate_at_accuracy: Option<f64>,
}

fn best_point(curve: &Curve, target: f64) -> (f64, f64) {
    curve
        .points
        .iter()
        .filter(|p| p.acc >= target)
        .max_by(|a, b| a.rate.total_cmp(&b.rate))
        .map_or((1.0, 0.0), |p| (p.acc, p.rate))
}

pub fn sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(cfg)?;
    check_mode(cfg, &model)?;
    let ds = load(cfg, "dataset", &cfg.dataset)?;
    let cache = cfg.cache.clone().unwrap_or_default();
    let curve = sweep(&model, &ds, &cache)?;
    write_curve_csv(&out.join("curve.csv"), &curve)?;

    let target = cfg.target_accuracy;
    let rate = rate_at_accuracy(&curve, target);
    let r_n = ds.redundant_ratio();
    let optimal = optimal_rate(r_n, target);
    let validity = match &cfg.cost {
        Some(cost) => {
            let (acc, r) = best_point(&curve, target);
            Some(validity(cost, r, acc, target, cfg.goal.unwrap_or(Goal::Computation))?)
        }
        None => None,
    };
    let baseline_rate = match &cfg.baseline {
        Some(b) => {
            let pool = load_dataset(&cfg.resolve(&b.pool))?;
            let base = baseline_lowlevel(&pool, &ds, b.k, model.kind(), &cache)?;
            write_curve_csv(&out.join("baseline_curve.csv"), &base)?;
            Some(rate_at_accuracy(&base, target))
        }
        None => None,
    };
    let summary = SweepSummary {
        mode: curve.mode,
        param_name: curve.param_name(),
        points: curve.points.len(),
        target_accuracy: target,
        rate_at_accuracy: rate,
        r_n,
        optimal_rate: optimal,
        ratio: if optimal > 0.0 { rate / optimal } else { 0.0 },
        validity,
        baseline_rate_at_accuracy: baseline_rate,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{} sweep: rate {rate:.4} at accuracy {target}, optimal {optimal:.4}, ratio {:.4}",
        curve.mode, summary.ratio
    );
    if let Some(b) = baseline_rate {
        println!("low-level baseline: rate {b:.4}");
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(cfg)?;
    check_mode(cfg, &model)?;
    let ds = load(cfg, "dataset", &cfg.dataset)?;
    let cost = required("cost", &cfg.cost)?;
    let deployment = required("deployment", &cfg.deployment)?;
    deployment.spec.validate()?;
    let (decisions, report) = match model.kind() {
        FilterKind::Skip => run_skip(&model, &ds, cfg.threshold.unwrap_or(0.5), cost)?,
        FilterKind::Reuse => run_reuse(&model, &ds, &cfg.cache.clone().unwrap_or_default(), cost)?,
    };
    let report = report
        .with_validity(cost, cfg.target_accuracy, cfg.goal.unwrap_or(Goal::Computation))?
        .with_deployment(&deployment.spec, deployment.base_throughput, deployment.filter_throughput)?;
    write_decisions_csv(&out.join("decisions.csv"), &decisions)?;
    write_json(&out.join("metrics.json"), &report)?;
    println!(
        "{} simulation: acc {:.4}, rate {:.4}, avg cost {:.4}, valid {}",
        report.mode,
        report.acc,
        report.rate,
        report.avg_cost,
        report.valid.unwrap_or(false)
    );
    Ok(())
}

#[derive(Serialize)]
struct PolicySummary {
    policy: PolicyKind,
    periods: usize,
    mean_acc: f64,
    mean_rate: f64,
    labels_used: usize,
}

fn policy_name(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Offline => "offline",
        PolicyKind::Periodic => "periodic",
        PolicyKind::Active => "active",
    }
}

pub fn active(cfg: &RunConfig, out: &Path) -> Result<()> {
    let stream = match (&cfg.dataset, &cfg.workload) {
        (Some(_), _) => load(cfg, "dataset", &cfg.dataset)?,
        (None, Some(w)) => {
            let workload = SyntheticWorkload::new(w.clone())?;
            let spec = cfg.redundancy.clone().unwrap_or_else(|| workload.spec().clone());
            gen_dataset(&workload, &spec, *required("n", &cfg.n)?, cfg.seed)?
        }
        (None, None) => bail!(Usage("config needs `dataset` or `workload`".into())),
    };
    let policy = required("policy", &cfg.policy)?;
    policy.validate()?;
    let kinds = cfg.policies.clone().unwrap_or_else(|| vec![policy.kind]);
    if let Some(budget) = policy.label_budget {
        let per = selection_size(policy.beta, policy.period_len);
        if budget < per {
            eprintln!("warning: label budget {budget} is below one period's selection of {per}; selection is truncated");
        }
    }
    let train_cfg = cfg.train.as_ref().map(|t| t.to_config(cfg.seed)).unwrap_or_else(|| {
        crate::config::TrainSection::default().to_config(cfg.seed)
    });
    let net = match cfg.filter.as_ref().and_then(|f| f.net.clone()) {
        Some(net) => net,
        None => FeatureNetSpec::vec(stream.samples[0].x.shape().to_vec()),
    };
    let mut summaries = Vec::new();
    for kind in kinds {
        let spec = PolicySpec {
            kind,
            ..policy.clone()
        };
        let mut model = FilterModel::new(FilterKind::Skip, &[net.clone()], 1, &mut Rng::new(cfg.seed))?;
        let trace = run_online(&mut model, &stream, &spec, &train_cfg)?;
        trace.write_csv(&out.join(format!("trace_{}.csv", policy_name(kind))))?;
        println!(
            "{}: mean acc {:.4}, mean rate {:.4}, labels {}",
            policy_name(kind),
            trace.mean_acc(),
            trace.mean_rate(),
            trace.labels_used()
        );
        summaries.push(PolicySummary {
            policy: kind,
            periods: trace.rows.len(),
            mean_acc: trace.mean_acc(),
            mean_rate: trace.mean_rate(),
            labels_used: trace.labels_used(),
        });
    }
    write_json(&out.join("active_summary.json"), &summaries)
}

pub fn filterability(cfg: &RunConfig, out: &Path) -> Result<()> {
    let lemma: Lemma = *required("lemma", &cfg.lemma)?;
    let count = cfg.instances.unwrap_or(20);
    let mode = cfg.estimate.unwrap_or_default();
    let reports = verify_random(lemma, cfg.seed, count, mode)?;
    write_json(&out.join("filterability.json"), &reports)?;
    let violations: Vec<u64> = reports.iter().filter(|r| !r.satisfied).filter_map(|r| r.seed).collect();
    println!("{lemma:?}: {} of {count} instances satisfied", count - violations.len());
    if !violations.is_empty() && matches!(mode, EstimateMode::Exact { .. }) {
        bail!("{lemma:?} violated on instance seeds {violations:?}");
    }
    Ok(())
}
