//! Training a conditioned generator against a frozen classifier, and the
//! estimators evaluated on the result.

use std::time::Instant;

use ndarray::{s, Array2, Array4, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::conditioning::{make_condition, Condition, ConditioningMode, LabelSource};
use crate::data::LabeledDataset;
use crate::error::{arg_err, Error, Result};
use crate::losses::{inversion_loss, reconstruction_loss, InversionWeights, LossBreakdown, ReconWeights};
use crate::metrics::{mean_pairwise_cosine, median, nearest_neighbors};
use crate::nets::{param_hash, Classifier, Generator};
use crate::nn::{Adam, AdamConfig, Module};
use crate::reconstruction::perturb_linf_masked;
use crate::rng::{derive_seed, stream, stream_rng, Rng};

/// Chunk size for evaluation-mode passes.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionRunConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    pub weights: InversionWeights,
    pub conditioning_mode: ConditioningMode,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Draw one-hot conditions instead of soft vectors.
    #[serde(default)]
    pub hot_conditions: bool,
    /// Samples used for the accuracy estimate after each epoch.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

fn default_eval_samples() -> usize {
    1000
}

impl InversionRunConfig {
    pub fn new(mode: ConditioningMode, seed: u64) -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: 200,
            batch: 64,
            weights: InversionWeights::default(),
            conditioning_mode: mode,
            adam: AdamConfig::default(),
            seed,
            hot_conditions: false,
            eval_samples: default_eval_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config("batch must be at least 2".into()));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("epochs and steps_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean of the step breakdowns.
    pub loss: LossBreakdown,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    /// Every step's breakdown, in order.
    pub steps: Vec<LossBreakdown>,
    pub wall_time_s: f64,
    pub classifier_hash: String,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.accuracy)
    }
}

/// Called after each epoch with the generator in its current state.
pub type EpochObserver<'a> = dyn FnMut(&EpochReport, &Generator<f32>) -> Result<()> + 'a;

/// Objective selector for the shared training loop.
pub(crate) enum Objective<'a> {
    Inversion(&'a InversionWeights),
    Reconstruction(&'a ReconWeights),
}

/// Draws the conditions of one batch. Hot conditions pick labels uniformly
/// and use one-hot vectors; otherwise the mode's own sampler is used.
pub(crate) fn sample_conditions(
    mode: ConditioningMode,
    hot: bool,
    n_classes: usize,
    batch: usize,
    rng: &mut Rng,
) -> Result<Condition> {
    if hot {
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n_classes)).collect();
        make_condition(mode, LabelSource::Hot(&labels), n_classes, batch)
    } else {
        make_condition(mode, LabelSource::Sampled(rng), n_classes, batch)
    }
}

fn check_pair(classifier: &Classifier<f32>, generator: &Generator<f32>, mode: ConditioningMode) -> Result<()> {
    let g = &generator.config;
    if g.conditioning_mode != mode {
        return Err(Error::Config(format!(
            "run mode {mode:?} differs from generator mode {:?}",
            g.conditioning_mode
        )));
    }
    let c = &classifier.config;
    if (g.channels, g.image_size) != (c.in_channels, c.image_size) {
        return Err(Error::Config("generator output shape does not match the classifier input".into()));
    }
    if g.n_classes > c.n_classes {
        return Err(Error::Config(format!(
            "generator conditions on {} classes but the classifier has {}",
            g.n_classes, c.n_classes
        )));
    }
    Ok(())
}

fn pad_columns(p: &Array2<f64>, width: usize) -> Array2<f64> {
    if p.ncols() >= width {
        return p.clone();
    }
    let mut out = Array2::zeros((p.nrows(), width));
    out.slice_mut(s![.., ..p.ncols()]).assign(p);
    out
}

/// Loop shared by inversion and reconstruction.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_training(
    classifier: &Classifier<f32>,
    mut generator: Generator<f32>,
    objective: Objective<'_>,
    epochs: usize,
    steps_per_epoch: usize,
    batch: usize,
    hot: bool,
    adam: AdamConfig,
    seed: u64,
    eval_samples: usize,
    observer: &mut EpochObserver<'_>,
) -> Result<(Generator<f32>, TrainReport)> {
    let start = Instant::now();
    let hash_before = param_hash(classifier);
    let mode = generator.mode();
    let n = generator.config.n_classes;
    let mut latent_rng = stream_rng(seed, stream::LATENT);
    let mut cond_rng = stream_rng(seed, stream::CONDITION);
    let mut drop_rng = stream_rng(seed, stream::DROPOUT);
    let mut pert_rng = stream_rng(seed, stream::PERTURB);
    let mut opt = Adam::new(adam);
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..epochs {
        let first = report.steps.len();
        for _ in 0..steps_per_epoch {
            let z = generator.sample_latent(batch, &mut latent_rng);
            let cond = sample_conditions(mode, hot, n, batch, &mut cond_rng)?;
            let (x, gtape) = generator.forward_train(&z, &cond, &mut drop_rng)?;
            let (out, ctape) = classifier.forward(&x)?;
            // a classifier with extra outputs (the garbage class) sees zero target mass there
            let padded = cond.soft_vector.as_ref().map(|v| pad_columns(v, classifier.n_classes()));
            let p = padded.as_ref();
            let (breakdown, dx) = match &objective {
                Objective::Inversion(w) => {
                    let (b, g) = inversion_loss(w, p, &out, &cond.labels)?;
                    let dx = if b.total.is_finite() {
                        Some(classifier.backward(&ctape, Some(&g.logits), g.features.as_ref(), None))
                    } else {
                        None
                    };
                    (b, dx)
                }
                Objective::Reconstruction(w) => {
                    // the perturbed pass only matters when its terms are weighted
                    let perturbed = if w.alpha_pert > 0.0 || w.beta_pert > 0.0 {
                        let (xp, mask) = perturb_linf_masked(&x, w.eps_pert, &mut pert_rng)?;
                        let (pout, ptape) = classifier.forward(&xp)?;
                        Some((pout, ptape, mask))
                    } else {
                        None
                    };
                    let pout = perturbed.as_ref().map_or(&out, |p| &p.0);
                    let probe_seed = derive_seed(seed, step as u64);
                    let (b, g) = reconstruction_loss(w, p, &x, &out, pout, classifier, &cond.labels, probe_seed)?;
                    let dx = b.total.is_finite().then(|| {
                        let mut dx =
                            classifier.backward(&ctape, Some(&g.clean.logits), g.clean.features.as_ref(), None);
                        if let (Some(dl), Some((_, ptape, mask))) = (&g.perturbed_logits, &perturbed) {
                            dx = dx + classifier.backward(ptape, Some(dl), None, None) * mask;
                        }
                        dx + &g.images
                    });
                    (b, dx)
                }
            };
            let Some(dx) = dx.filter(|_| breakdown.is_finite()) else {
                return Err(Error::NonFinite { step, breakdown: breakdown.to_string() });
            };
            let mut grads = generator.zeros_like();
            generator.backward(&gtape, &dx, Some(&mut grads));
            opt.step(generator.params_mut(), grads.params());
            report.steps.push(breakdown);
            step += 1;
        }
        let accuracy = if eval_samples > 0 {
            inversion_accuracy_with(&generator, classifier, eval_samples, derive_seed(seed, 1 << 32), hot)?
        } else {
            f64::NAN
        };
        let epoch_report = EpochReport { epoch, loss: LossBreakdown::mean(&report.steps[first..]), accuracy };
        log::info!("epoch {epoch}: accuracy {accuracy:.4} loss {}", epoch_report.loss.total);
        observer(&epoch_report, &generator)?;
        report.epochs.push(epoch_report);
    }
    let hash_after = param_hash(classifier);
    assert_eq!(hash_before, hash_after, "classifier parameters changed during generator training");
    report.classifier_hash = hash_after;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((generator, report))
}

/// Trains the generator against the frozen classifier. Only the generator's
/// parameters change; the classifier is used in evaluation mode throughout.
pub fn train_inversion(
    classifier: &Classifier<f32>,
    generator: Generator<f32>,
    config: &InversionRunConfig,
) -> Result<(Generator<f32>, TrainReport)> {
    train_inversion_observed(classifier, generator, config, &mut |_, _| Ok(()))
}

pub fn train_inversion_observed(
    classifier: &Classifier<f32>,
    generator: Generator<f32>,
    config: &InversionRunConfig,
    observer: &mut EpochObserver<'_>,
) -> Result<(Generator<f32>, TrainReport)> {
    config.validate()?;
    if config.weights.has_label_signal() {
        config.weights.validate()?;
    } else {
        InversionWeights::label_free(config.weights.gamma, config.weights.delta)?;
        log::warn!("inversion weights carry no label signal (alpha = beta = 0)");
    }
    check_pair(classifier, &generator, config.conditioning_mode)?;
    run_training(
        classifier,
        generator,
        Objective::Inversion(&config.weights),
        config.epochs,
        config.steps_per_epoch,
        config.batch,
        config.hot_conditions,
        config.adam,
        config.seed,
        config.eval_samples,
        observer,
    )
}

/// Evaluation-mode samples: images, classifier outputs and condition labels.
pub struct GeneratedSamples {
    pub images: Array4<f32>,
    pub labels: Vec<usize>,
    pub probabilities: Array2<f32>,
    pub features: Array2<f32>,
}

impl GeneratedSamples {
    pub fn predictions(&self) -> Vec<usize> {
        self.probabilities
            .rows()
            .into_iter()
            .map(|r| crate::conditioning::argmax(r.iter().map(|&v| f64::from(v))))
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        let hits = self.predictions().iter().zip(&self.labels).filter(|(p, l)| p == l).count();
        hits as f64 / self.labels.len().max(1) as f64
    }
}

/// Generates `n` images in evaluation mode with freshly drawn latents and
/// conditions; `labels` fixes the condition labels when given.
pub fn generate_images(
    generator: &Generator<f32>,
    n: usize,
    seed: u64,
    hot: bool,
    labels: Option<&[usize]>,
) -> Result<(Array4<f32>, Vec<usize>)> {
    if labels.is_some_and(|l| l.len() != n) {
        return arg_err("label count differs from the sample count");
    }
    let mode = generator.mode();
    let n_classes = generator.config.n_classes;
    let mut latent_rng = stream_rng(seed, stream::LATENT);
    let mut cond_rng = stream_rng(seed, stream::CONDITION);
    let (c, side) = (generator.config.channels, generator.config.image_size);
    let mut images = Array4::<f32>::zeros((n, c, side, side));
    let mut all_labels = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let b = end - start;
        let z = generator.sample_latent(b, &mut latent_rng);
        let cond = match labels {
            Some(ls) if hot => make_condition(mode, LabelSource::Hot(&ls[start..end]), n_classes, b)?,
            Some(ls) => make_condition(mode, LabelSource::SoftFor(&ls[start..end], &mut cond_rng), n_classes, b)?,
            None => sample_conditions(mode, hot, n_classes, b, &mut cond_rng)?,
        };
        let (x, _) = generator.forward(&z, &cond)?;
        images.slice_mut(s![start..end, .., .., ..]).assign(&x);
        all_labels.extend_from_slice(&cond.labels);
    }
    Ok((images, all_labels))
}

/// [`generate_images`] followed by classification of every sample.
pub fn sample_generator(
    generator: &Generator<f32>,
    classifier: &Classifier<f32>,
    n: usize,
    seed: u64,
    hot: bool,
    labels: Option<&[usize]>,
) -> Result<GeneratedSamples> {
    let (images, labels) = generate_images(generator, n, seed, hot, labels)?;
    let mut probabilities = Array2::<f32>::zeros((n, classifier.n_classes()));
    let mut features = Array2::<f32>::zeros((n, classifier.feature_dim()));
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let (out, _) = classifier.forward(&images.slice(s![start..end, .., .., ..]).to_owned())?;
        probabilities.slice_mut(s![start..end, ..]).assign(&out.probabilities);
        features.slice_mut(s![start..end, ..]).assign(&out.features);
    }
    Ok(GeneratedSamples { images, labels, probabilities, features })
}

fn inversion_accuracy_with(
    generator: &Generator<f32>,
    classifier: &Classifier<f32>,
    n: usize,
    seed: u64,
    hot: bool,
) -> Result<f64> {
    Ok(sample_generator(generator, classifier, n, seed, hot, None)?.accuracy())
}

/// Fraction of fresh samples the classifier assigns to their condition label.
pub fn inversion_accuracy(
    generator: &Generator<f32>,
    classifier: &Classifier<f32>,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return arg_err("accuracy needs at least one sample");
    }
    inversion_accuracy_with(generator, classifier, n_samples, seed, false)
}

/// `N × per_class` images; row r is conditioned on label r.
#[derive(Clone, Debug)]
pub struct ClassGrid {
    pub images: Array4<f32>,
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<usize>,
}

pub fn generate_class_grid(generator: &Generator<f32>, per_class: usize, seed: u64) -> Result<ClassGrid> {
    if per_class == 0 {
        return arg_err("per_class must be positive");
    }
    let n = generator.config.n_classes;
    let labels: Vec<usize> = (0..n).flat_map(|r| std::iter::repeat_n(r, per_class)).collect();
    let mode = generator.mode();
    let mut latent_rng = stream_rng(seed, stream::LATENT);
    let mut cond_rng = stream_rng(seed, stream::CONDITION);
    let z = generator.sample_latent(labels.len(), &mut latent_rng);
    let cond = make_condition(mode, LabelSource::SoftFor(&labels, &mut cond_rng), n, labels.len())?;
    let (images, _) = generator.forward(&z, &cond)?;
    Ok(ClassGrid { images, rows: n, cols: per_class, labels })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassDiversity {
    pub label: usize,
    pub count: usize,
    /// Mean cosine over ordered pairs of distinct samples; absent below two.
    pub mean_cosine: Option<f64>,
    /// Median L2 distance to the nearest reference image; absent without a
    /// reference set.
    pub nn_l2_median: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiversityReport {
    pub classes: Vec<ClassDiversity>,
    /// Mean over classes of the intra-class cosine.
    pub mean_intra_cosine: Option<f64>,
    /// Mean cosine between samples of different classes.
    pub mean_inter_cosine: Option<f64>,
}

/// Feature-space diversity of generated samples per condition label, plus
/// nearest-reference distances when `reference` is given.
pub fn diversity_report(
    generator: &Generator<f32>,
    classifier: &Classifier<f32>,
    n_samples: usize,
    seed: u64,
    reference: Option<&LabeledDataset>,
) -> Result<DiversityReport> {
    let samples = sample_generator(generator, classifier, n_samples, seed, false, None)?;
    let n = generator.config.n_classes;
    let nn = match reference {
        Some(r) => Some(nearest_neighbors(&samples.images, &r.images.values)),
        None => None,
    };
    let mut classes = Vec::with_capacity(n);
    for label in 0..n {
        let idx: Vec<usize> = (0..samples.labels.len()).filter(|&i| samples.labels[i] == label).collect();
        let feats = samples.features.select(Axis(0), &idx);
        let nn_l2_median = nn.as_ref().and_then(|d| median(idx.iter().map(|&i| d[i].1).collect()));
        classes.push(ClassDiversity {
            label,
            count: idx.len(),
            mean_cosine: mean_pairwise_cosine(&feats, None),
            nn_l2_median,
        });
    }
    let per_class: Vec<f64> = classes.iter().filter_map(|c| c.mean_cosine).collect();
    let mean_intra_cosine = (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64);
    let mean_inter_cosine = mean_pairwise_cosine(&samples.features, Some(&samples.labels));
    Ok(DiversityReport { classes, mean_intra_cosine, mean_inter_cosine })
}
