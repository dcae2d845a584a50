//! End-to-end training, inference modes, pseudo-labeling and sweeps.

use knn_calibrate::embedstore::Unlabeled;
use knn_calibrate::model::{forward, Architecture, ClassifierParams};
use knn_calibrate::pipeline::{evaluate_split, predict_store, sample_k_shot, SweepGrid};
use knn_calibrate::synthetic::{gaussian_classes, GaussianSpec};
use knn_calibrate::*;

fn separable() -> (EmbeddingStore, EmbeddingStore) {
    let spec = GaussianSpec {
        classes: 2,
        dim: 16,
        train_per_class: 32,
        dev_size: 200,
        separation: 1.0,
        spread: 0.05,
        label_noise: 0.0,
    };
    let split = gaussian_classes(&spec, 11).unwrap();
    (build_store(split.train).unwrap(), build_store(split.dev).unwrap())
}

fn quick(mode: Mode) -> RunConfig {
    RunConfig {
        mode,
        max_steps: 200,
        eval_every: 50,
        ..RunConfig::default()
    }
}

#[test]
fn separable_gaussians_reach_perfect_dev_accuracy() {
    let (train, dev) = separable();
    assert_eq!(train.len(), 64);
    for mode in [Mode::ModelOnly, Mode::UnionAll] {
        let config = RunConfig {
            mode,
            ..RunConfig::default()
        };
        let trained = train_calibrated(&config, &train, &dev).unwrap();
        let report = evaluate_split(&config, &trained.params, &train, &dev).unwrap();
        assert_eq!(report.accuracy, 1.0, "{mode}");
        assert_eq!(trained.log.records.len(), 10);
        assert_eq!(trained.log.records.last().unwrap().step, 1000);
    }
}

#[test]
fn model_only_equals_union_all_with_zero_weight_factor() {
    let split = gaussian_classes(&GaussianSpec::default(), 8).unwrap();
    let train = build_store(split.train).unwrap();
    let dev = build_store(split.dev).unwrap();
    let plain = train_calibrated(&quick(Mode::ModelOnly), &train, &dev).unwrap();
    let zeroed = RunConfig {
        factor: ModulatingFactor::Nll { alpha: 0.0 },
        // λ = 0 keeps checkpoint selection on the classifier alone.
        lambda: 0.0,
        ..quick(Mode::UnionAll)
    };
    let calibrated = train_calibrated(&zeroed, &train, &dev).unwrap();
    assert!(calibrated.priors.priors.iter().any(|&p| p < 1.0));
    assert_eq!(plain.params, calibrated.params);
    let strip = |log: &pipeline::TrainingLog| -> Vec<(u64, u64)> {
        log.records.iter().map(|r| (r.step, r.train_loss.to_bits())).collect()
    };
    assert_eq!(strip(&plain.log), strip(&calibrated.log));
}

#[test]
fn union_with_lambda_zero_is_model_only() {
    let split = gaussian_classes(&GaussianSpec::default(), 4).unwrap();
    let train = build_store(split.train).unwrap();
    let dev = build_store(split.dev).unwrap();
    let params = train_calibrated(&quick(Mode::ModelOnly), &train, &dev).unwrap().params;
    let model_only = predict_store(&quick(Mode::ModelOnly), &params, &train, &dev).unwrap();
    for mode in [Mode::UnionInf, Mode::UnionAll] {
        let cfg = RunConfig {
            lambda: 0.0,
            ..quick(mode)
        };
        assert_eq!(predict_store(&cfg, &params, &train, &dev).unwrap(), model_only);
    }

    // A zero-weight factor leaves plain cross-entropy, so training matches too.
    let end_to_end = RunConfig {
        lambda: 0.0,
        factor: ModulatingFactor::Nll { alpha: 0.0 },
        ..quick(Mode::UnionAll)
    };
    let trained = train_calibrated(&end_to_end, &train, &dev).unwrap();
    assert_eq!(trained.params, params);
    assert_eq!(
        predict_store(&end_to_end, &trained.params, &train, &dev).unwrap(),
        model_only
    );
}

#[test]
fn predict_composes_both_predictors() {
    let split = gaussian_classes(
        &GaussianSpec {
            dev_size: 20,
            ..GaussianSpec::default()
        },
        6,
    )
    .unwrap();
    let train = build_store(split.train).unwrap();
    let params = ClassifierParams::init(Architecture::OneHidden { hidden: 8 }, 16, 5, 3).unwrap();
    let cfg = RunConfig {
        k: 8,
        tau: 0.1,
        lambda: 0.3,
        mode: Mode::UnionInf,
        ..RunConfig::default()
    };
    for i in 0..split.dev.len() {
        let q = split.dev.row(i);
        let (dist, class) = predict(&cfg, &params, &train, q).unwrap();
        let unit = knn_calibrate::embedstore::normalize_vector(q).unwrap();
        let p_knn = knn_predict(&train, &unit, 8, 0.1, Metric::Euclidean, None).unwrap();
        let x: Vec<f64> = unit.iter().map(|&v| v as f64).collect();
        let (_, p_model) = forward(&params, &x).unwrap();
        for c in 0..5 {
            let expect = 0.3 * p_knn.probs()[c] + 0.7 * p_model.probs()[c];
            assert!((dist.probs()[c] - expect).abs() < 1e-12);
        }
        assert_eq!(class, dist.argmax());
        if p_knn.argmax() == p_model.argmax() {
            assert_eq!(class, p_knn.argmax());
        }
    }
    assert!(predict(&cfg, &params, &train, &[0.0; 16]).is_err());
    assert!(predict(&cfg, &params, &train, &[1.0; 3]).is_err());
}

#[test]
fn pseudo_labels_recover_separable_classes() {
    let spec = GaussianSpec {
        classes: 3,
        dim: 16,
        train_per_class: 20,
        dev_size: 90,
        separation: 1.0,
        spread: 0.05,
        label_noise: 0.0,
    };
    let split = gaussian_classes(&spec, 21).unwrap();
    let train = build_store(split.train.clone()).unwrap();
    let dev = build_store(split.dev.clone()).unwrap();
    let trained = train_calibrated(
        &RunConfig {
            mode: Mode::ModelOnly,
            ..RunConfig::default()
        },
        &train,
        &dev,
    )
    .unwrap();

    let labeled = pseudo_label(&trained.params, &Unlabeled::from(&split.dev)).unwrap();
    assert_eq!(labeled.store.labels(), split.dev.labels());
    assert!(labeled.confidences.iter().all(|&c| (1.0 / 3.0..=1.0).contains(&c)));

    // Zero-shot flow: the pseudo-labeled rows become the datastore.
    let zero_shot = RunConfig {
        mode: Mode::UnionInf,
        ..RunConfig::default()
    };
    let report = evaluate_split(&zero_shot, &trained.params, &labeled.store, &dev).unwrap();
    assert_eq!(report.accuracy, 1.0);
    let union_all = train_calibrated(
        &RunConfig {
            max_steps: 300,
            ..RunConfig::default()
        },
        &labeled.store,
        &dev,
    )
    .unwrap();
    assert!(union_all.log.records.iter().all(|r| r.dev_accuracy > 0.9));
}

#[test]
fn few_shot_with_leave_one_out_clamps_k() {
    let split = gaussian_classes(
        &GaussianSpec {
            train_per_class: 40,
            ..GaussianSpec::default()
        },
        2,
    )
    .unwrap();
    let full = build_store(split.train).unwrap();
    let dev = build_store(split.dev).unwrap();
    let idx = sample_k_shot(&full, 16, 13).unwrap();
    let train = full.subset(&idx).unwrap();
    assert_eq!(train.label_histogram(), vec![16; 5]);
    let cfg = RunConfig {
        k: 128,
        ..quick(Mode::UnionAll)
    };
    let trained = train_calibrated(&cfg, &train, &dev).unwrap();
    assert_eq!(trained.log.effective_k, 80);
    assert_eq!(trained.log.effective_prior_k, 79);
}

#[test]
fn singleton_sweep_equals_direct_run() {
    let (train, dev) = separable();
    let base = quick(Mode::UnionAll);
    let grid = SweepGrid {
        k: vec![base.k],
        tau: vec![base.tau],
        lambda: vec![base.lambda],
        ..SweepGrid::default()
    };
    let results = sweep(&base, &grid, &train, &dev).unwrap();
    assert_eq!(results.len(), 1);
    let direct = train_calibrated(&base, &train, &dev).unwrap();
    let report = evaluate_split(&base, &direct.params, &train, &dev).unwrap();
    assert_eq!(results[0].dev_accuracy, report.accuracy);
    assert_eq!(results[0].dev_macro_f1, report.macro_f1);
    assert_eq!(results[0].best_step, direct.log.best_step);
}

#[test]
fn sweep_prefers_the_model_when_knn_is_weak() {
    // k covers the whole store and τ = 10 flattens the weights, so on an
    // imbalanced store kNN is close to a majority vote while the classifier
    // still separates the classes.
    let (full, dev) = separable();
    let keep: Vec<usize> = (0..full.len())
        .filter(|&i| full.label(i) == 0)
        .chain((0..full.len()).filter(|&i| full.label(i) == 1).take(4))
        .collect();
    let train = full.subset(&keep).unwrap();
    let base = quick(Mode::UnionInf);
    let grid = SweepGrid {
        k: vec![128],
        tau: vec![10.0],
        lambda: vec![1.0, 0.0],
        ..SweepGrid::default()
    };
    let results = sweep(&base, &grid, &train, &dev).unwrap();
    assert_eq!(results[0].config.lambda, 0.0);
    assert!(results[0].dev_accuracy > results[1].dev_accuracy);
    assert_eq!(results[0].effective_k, 36);
}

#[test]
fn sweep_is_deterministic() {
    let (train, dev) = separable();
    let base = RunConfig {
        max_steps: 20,
        eval_every: 10,
        ..RunConfig::default()
    };
    let grid = SweepGrid {
        k: vec![4, 16],
        tau: vec![0.1, 1.0],
        lambda: vec![0.2, 0.8],
        gamma: vec![2.0],
        alpha: vec![1.0],
    };
    let a = sweep(&base, &grid, &train, &dev).unwrap();
    let b = sweep(&base, &grid, &train, &dev).unwrap();
    assert_eq!(a.len(), 16);
    assert_eq!(a, b);
    for w in a.windows(2) {
        assert!(w[0].dev_accuracy >= w[1].dev_accuracy);
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    let one = build_store(RawEmbeddings::new(vec![1.0, 0.0], 2, vec![0], 2).unwrap()).unwrap();
    assert!(train_calibrated(&RunConfig::default(), &one, &one).is_err());
    let (train, _) = separable();
    let other_dim = build_store(RawEmbeddings::new(vec![1.0, 0.0], 2, vec![0], 2).unwrap()).unwrap();
    assert!(train_calibrated(&RunConfig::default(), &train, &other_dim).is_err());
}
