//! Training pipelines at toy scale: the frozen-classifier contract, seeded
//! determinism, the reconstruction-to-inversion reduction and the garbage-class
//! bookkeeping.

use ndarray::Array4;
use netinv::conditioning::ConditioningMode;
use netinv::data::{gaussian_noise_set, ImageBatch, LabeledDataset, ValueRange};
use netinv::inversion::*;
use netinv::losses::ReconWeights;
use netinv::metrics::nearest_neighbors;
use netinv::nets::{param_hash, Classifier, ClassifierConfig, ConvBlockSpec, Generator, GeneratorConfig};
use netinv::nn::AdamConfig;
use netinv::ood::*;
use netinv::reconstruction::*;
use netinv::rng::stream_rng;
use netinv::train::{train_classifier, ClassifierTrainConfig};
use proptest::prelude::*;
use rand::Rng as _;

const N: usize = 4;

/// Class `c` is a bright horizontal bar at rows `6c+2..6c+6` over faint noise.
fn bars(per_class: usize, seed: u64) -> LabeledDataset {
    let mut rng = stream_rng(seed, 0);
    let n = per_class * N;
    let labels: Vec<usize> = (0..n).map(|i| i % N).collect();
    let values = Array4::from_shape_fn((n, 1, 28, 28), |(i, _, r, _)| {
        let on = (6 * labels[i] + 2..6 * labels[i] + 6).contains(&r);
        if on {
            0.9
        } else {
            0.1
        }
    });
    let values = values.mapv(|v: f32| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
    LabeledDataset::new(ImageBatch::new(values, ValueRange::Unit).unwrap(), labels, N).unwrap()
}

fn small_classifier_config(n_classes: usize) -> ClassifierConfig {
    ClassifierConfig {
        in_channels: 1,
        image_size: 28,
        conv_blocks: vec![ConvBlockSpec { out_channels: 4, kernel: 3, stride: 2 }],
        leaky_slope: 0.01,
        dropout_rate: 0.0,
        feature_dim: 16,
        n_classes,
    }
}

fn trained_classifier() -> Classifier<f32> {
    let mut c = Classifier::new(small_classifier_config(N), 1).unwrap();
    let cfg = ClassifierTrainConfig { epochs: 2, batch: 32, seed: 1, ..ClassifierTrainConfig::default() };
    train_classifier(&mut c, &bars(50, 0), &cfg).unwrap();
    c
}

fn small_generator(n_classes: usize, mode: ConditioningMode, seed: u64) -> Generator<f32> {
    let cfg = GeneratorConfig { latent_dim: 8, base_channels: 4, ..GeneratorConfig::new(n_classes, mode, 1, 28) };
    Generator::new(cfg, seed).unwrap()
}

fn inversion_config(mode: ConditioningMode, seed: u64) -> InversionRunConfig {
    InversionRunConfig {
        epochs: 2,
        steps_per_epoch: 4,
        batch: 8,
        eval_samples: 40,
        adam: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
        ..InversionRunConfig::new(mode, seed)
    }
}

#[test]
fn inversion_leaves_the_classifier_untouched_and_is_reproducible() {
    let classifier = trained_classifier();
    let before = param_hash(&classifier);
    for mode in [ConditioningMode::Label, ConditioningMode::Vector, ConditioningMode::VectorMatrix] {
        let cfg = inversion_config(mode, 3);
        let (g1, r1) = train_inversion(&classifier, small_generator(N, mode, 3), &cfg).unwrap();
        assert_eq!(param_hash(&classifier), before);
        assert_eq!(r1.classifier_hash, before);
        assert_eq!(r1.epochs.len(), 2);
        assert_eq!(r1.steps.len(), 8);
        if mode == ConditioningMode::Label {
            // no distributional condition: the KL term is skipped
            assert!(r1.steps.iter().all(|s| s.kl == 0.0));
        }
        let (g2, r2) = train_inversion(&classifier, small_generator(N, mode, 3), &cfg).unwrap();
        assert_eq!(param_hash(&g1), param_hash(&g2));
        let totals = |r: &TrainReport| r.steps.iter().map(|s| s.total).collect::<Vec<_>>();
        assert_eq!(totals(&r1), totals(&r2));
        assert_ne!(param_hash(&g1), param_hash(&small_generator(N, mode, 3)));
    }
}

#[test]
fn zeroed_reconstruction_terms_reduce_to_hot_inversion() {
    let classifier = trained_classifier();
    let mode = ConditioningMode::Vector;
    let weights = ReconWeights {
        alpha_pert: 0.0,
        beta_pert: 0.0,
        eta_var: 0.0,
        eta_pix: 0.0,
        eta_grad: 0.0,
        ..ReconWeights::default()
    };
    assert!(weights.is_pure_inversion());
    let base = inversion_config(mode, 8);
    let recon = ReconRunConfig {
        epochs: base.epochs,
        steps_per_epoch: base.steps_per_epoch,
        batch: base.batch,
        weights,
        conditioning_mode: mode,
        adam: base.adam,
        seed: base.seed,
        eval_samples: base.eval_samples,
    };
    let inv = InversionRunConfig { weights: weights.inversion_part(), hot_conditions: true, ..base };
    let (gr, rr) = train_reconstruction(&classifier, small_generator(N, mode, 8), &recon).unwrap();
    let (gi, ri) = train_inversion(&classifier, small_generator(N, mode, 8), &inv).unwrap();
    assert_eq!(rr.steps.len(), ri.steps.len());
    for (a, b) in rr.steps.iter().zip(&ri.steps) {
        assert!((a.total - b.total).abs() < 1e-9, "{} vs {}", a.total, b.total);
    }
    assert_eq!(param_hash(&gr), param_hash(&gi));
    let acc = |r: &TrainReport| r.epochs.iter().map(|e| e.accuracy).collect::<Vec<_>>();
    assert_eq!(acc(&rr), acc(&ri));
}

#[test]
fn reconstruction_training_keeps_pixels_in_range_and_the_classifier_frozen() {
    let classifier = trained_classifier();
    let before = param_hash(&classifier);
    let mode = ConditioningMode::VectorMatrix;
    let cfg = ReconRunConfig {
        epochs: 2,
        steps_per_epoch: 3,
        batch: 6,
        eval_samples: 20,
        ..ReconRunConfig::new(mode, 2)
    };
    let (g, report) = train_reconstruction(&classifier, small_generator(N, mode, 2), &cfg).unwrap();
    assert_eq!(param_hash(&classifier), before);
    // the generator output is a sigmoid, so the pixel prior never fires
    assert!(report.steps.iter().all(|s| s.pix < 1e-3));
    assert!(report.steps.iter().all(|s| s.grad > 0.0 && s.total.is_finite()));

    let data = bars(5, 4);
    let q = reconstruction_quality(&g, &data, 12, 5).unwrap();
    assert_eq!(q.classes.len(), N);
    assert!(q.classes.iter().all(|c| c.count == 3 && c.nn_l2_median.is_some()));
    for (i, nb) in q.neighbors.iter().enumerate() {
        assert_eq!(data.labels[nb.unwrap()], q.labels[i]);
    }
    let again = reconstruction_quality(&g, &data, 12, 5).unwrap();
    assert_eq!(again.samples, q.samples);
    assert_eq!(again.median_nn_l2, q.median_nn_l2);

    // a reference set lacking a class reports that class as absent
    let keep: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] != 2).collect();
    let partial = reconstruction_quality(&g, &data.subset(&keep), 12, 5).unwrap();
    assert!(partial.classes[2].nn_l2_median.is_none());
    assert!(partial.classes[0].nn_l2_median.is_some());
}

#[test]
fn training_images_are_their_own_nearest_neighbors() {
    let data = bars(5, 9);
    for (i, (j, d)) in nearest_neighbors(&data.images.values, &data.images.values).into_iter().enumerate() {
        assert_eq!(d, 0.0);
        assert_eq!(data.images.values.index_axis(ndarray::Axis(0), i), data.images.values.index_axis(ndarray::Axis(0), j));
    }
}

#[test]
fn perturbations_stay_in_the_ball() {
    let mut rng = stream_rng(0, 0);
    let x = Array4::from_shape_fn((4, 1, 28, 28), |_| rng.random_range(0.0f32..1.0));
    let p = perturb_linf(&x, 0.05, 1).unwrap();
    assert!(p.iter().zip(x.iter()).all(|(a, b)| (a - b).abs() <= 0.05 + 1e-7));
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(perturb_linf(&x, 0.05, 1).unwrap(), p);
    assert_ne!(perturb_linf(&x, 0.05, 2).unwrap(), p);
    let half = Array4::from_elem((2, 1, 28, 28), 0.5f32);
    assert!(perturb_linf(&half, 0.05, 3).unwrap().iter().all(|v| (0.45..=0.55).contains(v)));
    assert!(perturb_linf(&x, 0.0, 1).is_err());
    assert!(perturb_linf(&x, -0.1, 1).is_err());
}

#[test]
fn untrained_generators_hit_labels_at_chance() {
    let n = 10;
    let classifier = Classifier::new(small_classifier_config(n), 4).unwrap();
    let g = small_generator(n, ConditioningMode::Vector, 5);
    let acc = inversion_accuracy(&g, &classifier, 10_000, 6).unwrap();
    assert!((acc - 0.1).abs() <= 0.05, "accuracy {acc}");
    assert_eq!(inversion_accuracy(&g, &classifier, 500, 6).unwrap(), inversion_accuracy(&g, &classifier, 500, 6).unwrap());
    assert!(inversion_accuracy(&g, &classifier, 0, 6).is_err());
}

#[test]
fn class_grids_are_laid_out_by_row() {
    let g = small_generator(N, ConditioningMode::IntermediateMatrix, 1);
    let grid = generate_class_grid(&g, 8, 2).unwrap();
    assert_eq!((grid.rows, grid.cols), (N, 8));
    assert_eq!(grid.images.dim(), (N * 8, 1, 28, 28));
    for r in 0..N {
        assert!(grid.labels[r * 8..(r + 1) * 8].iter().all(|&l| l == r));
    }
    assert_eq!(generate_class_grid(&g, 8, 2).unwrap().images, grid.images);
    assert!(generate_class_grid(&g, 0, 2).is_err());
}

#[test]
fn diversity_statistics_are_absent_for_lonely_classes() {
    let classifier = trained_classifier();
    let g = small_generator(N, ConditioningMode::Vector, 7);
    let single = diversity_report(&g, &classifier, 1, 3, None).unwrap();
    assert!(single.classes.iter().all(|c| c.mean_cosine.is_none()));
    assert_eq!(single.classes.iter().map(|c| c.count).sum::<usize>(), 1);
    assert!(single.mean_intra_cosine.is_none());

    let data = bars(5, 2);
    let r1 = diversity_report(&g, &classifier, 60, 3, Some(&data)).unwrap();
    let r2 = diversity_report(&g, &classifier, 60, 3, Some(&data)).unwrap();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    assert!(r1.classes.iter().filter(|c| c.count >= 2).all(|c| c.mean_cosine.is_some() && c.nn_l2_median.is_some()));
}

proptest! {
    #[test]
    fn class_weights_balance_the_total(counts in prop::collection::vec(1usize..500, 2..12)) {
        let w = class_weights(&counts).unwrap();
        let total: usize = counts.iter().sum();
        let weighted: f64 = w.iter().zip(&counts).map(|(w, &n)| w * n as f64).sum();
        prop_assert!((weighted - total as f64).abs() < 1e-9 * total as f64);
        // every class carries the same weighted mass
        for (wi, &n) in w.iter().zip(&counts) {
            prop_assert!((wi * n as f64 - total as f64 / counts.len() as f64).abs() < 1e-9 * total as f64);
        }
    }
}

#[test]
fn garbage_hardening_bookkeeping() {
    let data = bars(40, 11);
    let inner = InversionRunConfig { epochs: 1, steps_per_epoch: 6, batch: 8, eval_samples: 20, ..InversionRunConfig::new(ConditioningMode::Vector, 0) };
    let cfg = OodRunConfig {
        epochs: 3,
        garbage_init: 30,
        per_class: 5,
        garbage_cap: 60,
        classifier: ClassifierTrainConfig { epochs: 1, batch: 32, seed: 0, ..ClassifierTrainConfig::default() },
        inversion: inner,
        seed: 12,
    };
    let in_test = bars(10, 12);
    let noise_test = gaussian_noise_set(50, (1, 28, 28), N, 99).unwrap().with_n_classes(N + 1).unwrap();
    let (classifier, history) =
        train_with_garbage(small_classifier_config(N + 1), &data, &cfg, Some((&in_test, &noise_test))).unwrap();
    assert_eq!(classifier.n_classes(), N + 1);
    assert_eq!(history.len(), 3);
    let mut expected = cfg.garbage_init;
    for e in &history {
        assert!(e.appended <= cfg.per_class * N);
        expected = (expected + e.appended).min(cfg.garbage_cap);
        assert_eq!(e.garbage_count, expected, "epoch {}", e.epoch);
        assert_eq!(e.class_weights.len(), N + 1);
        let r = e.report.as_ref().unwrap();
        assert!((0.0..=1.0).contains(&r.garbage_rate) && (0.0..=1.0).contains(&r.in_accuracy));
    }
    // epoch 0 weights come from the real counts plus the initial noise set
    let mut counts = data.class_counts();
    counts.push(cfg.garbage_init);
    assert_eq!(history[0].class_weights, class_weights(&counts).unwrap());

    // the noise the garbage class was seeded with is recognized as garbage
    let last = history.last().unwrap().report.as_ref().unwrap();
    assert!(last.garbage_rate > 0.9, "garbage rate {}", last.garbage_rate);

    // an identical run is identical
    let (again, _) = train_with_garbage(small_classifier_config(N + 1), &data, &cfg, None).unwrap();
    assert_eq!(param_hash(&again), param_hash(&classifier));
    assert!(ood_eval(&classifier, &in_test.subset(&[]), &noise_test).is_err());

    let wrong = small_classifier_config(N);
    assert!(train_with_garbage(wrong, &data, &cfg, None).is_err());
}
