use proptest::prelude::*;
use sthcss_core::data::{synth_generate, SynthConfig, TargetKind};
use sthcss_core::model::{Model, ModelConfig};
use sthcss_core::pipeline::{evaluate, prepare, run_experiment, RunSpec, Split};
use sthcss_core::train::{compute_metrics, train, TrainConfig};

fn toy_spec(epochs: usize, lr: f64) -> (sthcss_core::data::SensorSeries, RunSpec) {
    let series = synth_generate(&SynthConfig {
        sensors: 4,
        groups: vec![2, 2],
        length: 600,
        target: TargetKind::Linear,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let spec = RunSpec {
        model: ModelConfig {
            sensors: 4,
            window: 8,
            kernel_size: 3,
            knn_k: 2,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs,
            lr,
            ..TrainConfig::default()
        },
        ..RunSpec::default()
    };
    (series, spec)
}

#[test]
fn toy_linear_target_converges() {
    let (series, spec) = toy_spec(50, 0.001);
    let exp = run_experiment(&series, &spec).unwrap();
    let h = &exp.outcome.history;
    let first = h[0].train_mse;
    let last = h.last().unwrap().train_mse;
    assert_eq!(h.len(), 51);
    assert!(last < 0.1 * first, "train mse {first} -> {last}");
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let (series, spec) = toy_spec(3, 0.0);
    let prepared = prepare(&series, &spec).unwrap();
    let init = Model::new(spec.model.clone()).unwrap();
    let out = train(&init, &prepared.operators.adjacency, &prepared.train, &prepared.val, &spec.train)
        .unwrap();
    assert_eq!(out.best.params, init.params);
    assert!(out.history.windows(2).all(|w| w[0].train_mse == w[1].train_mse));
}

#[test]
fn identical_seeds_reproduce_history_and_metrics() {
    let (series, spec) = toy_spec(4, 0.001);
    let a = run_experiment(&series, &spec).unwrap();
    let b = run_experiment(&series, &spec).unwrap();
    assert_eq!(a.outcome.history, b.outcome.history);
    assert_eq!(a.test, b.test);
    assert_eq!(a.outcome.best.params, b.outcome.best.params);

    let other = RunSpec {
        train: TrainConfig { seed: 7, ..spec.train.clone() },
        ..spec
    };
    let c = run_experiment(&series, &other).unwrap();
    assert_ne!(a.outcome.history, c.outcome.history);
}

/// Reported metrics come from the best-validation epoch.
#[test]
fn test_metrics_use_best_validation_parameters() {
    let (series, spec) = toy_spec(8, 0.003);
    let exp = run_experiment(&series, &spec).unwrap();
    let best = exp.outcome.best_epoch;
    let best_val = exp.outcome.history[best].val_mse;
    assert!(exp.outcome.history.iter().all(|r| r.val_mse >= best_val));
    let again = evaluate(&exp.outcome.best, &exp.prepared, Split::Test, &series.target_name).unwrap();
    assert_eq!(again, exp.test);
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median train MSE over the last 10 epochs beats the first 10 on the
/// default synthetic task.
#[test]
fn default_task_training_is_weakly_monotone() {
    let series = synth_generate(&SynthConfig::default()).unwrap();
    let spec = RunSpec {
        train: TrainConfig { epochs: 20, ..TrainConfig::default() },
        ..RunSpec::default()
    };
    let exp = run_experiment(&series, &spec).unwrap();
    let mse: Vec<f64> = exp.outcome.history[1..].iter().map(|r| r.train_mse).collect();
    let early = median(mse[..10].to_vec());
    let late = median(mse[mse.len() - 10..].to_vec());
    assert!(late < early, "median train mse {early} -> {late}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_respect_rescaling(
        y in prop::collection::vec(0.5f64..20.0, 3..40),
        noise in prop::collection::vec(-1.0f64..1.0, 40),
        a in 0.01f64..100.0,
        b in -50.0f64..50.0,
    ) {
        prop_assume!(y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min) > 1e-3);
        let yhat: Vec<f64> = y.iter().zip(&noise).map(|(v, e)| v + e).collect();
        let base = compute_metrics(&yhat, &y).unwrap();
        prop_assert!(base.r2 <= 1.0 && base.nmae >= 0.0 && base.nrmse >= 0.0);

        let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let yha: Vec<f64> = yhat.iter().map(|v| a * v + b).collect();
        let aff = compute_metrics(&yha, &ya).unwrap();
        let close = |p: f64, q: f64| (p - q).abs() <= 1e-8 * (1.0 + p.abs());
        prop_assert!(close(aff.nmae, base.nmae));
        prop_assert!(close(aff.nrmse, base.nrmse));
        prop_assert!(close(aff.r2, base.r2));

        let ym: Vec<f64> = y.iter().map(|v| a * v).collect();
        let yhm: Vec<f64> = yhat.iter().map(|v| a * v).collect();
        let mul = compute_metrics(&yhm, &ym).unwrap();
        prop_assert!(close(mul.mape.unwrap(), base.mape.unwrap()));
    }
}
