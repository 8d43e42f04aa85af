//! Out-of-distribution hardening with an extra garbage class.
//!
//! The classifier gets `N + 1` outputs. The extra class starts as Gaussian
//! noise and is grown each epoch with inverted samples of the current
//! classifier, so regions the classifier maps to real labels without real data
//! behind them get routed to garbage instead.

use ndarray::{concatenate, s, Axis};
use serde::{Deserialize, Serialize};

use crate::conditioning::argmax;
use crate::data::{gaussian_noise_set, ImageBatch, LabeledDataset};
use crate::error::{arg_err, Error, Result};
use crate::inversion::{sample_generator, train_inversion, InversionRunConfig};
use crate::nets::{Classifier, ClassifierConfig, Generator, GeneratorConfig};
use crate::nn::Adam;
use crate::rng::derive_seed;
use crate::train::{train_epoch, ClassifierTrainConfig};

/// Inverse-frequency weights `w_c = T / ((N+1)·n_c)`, so every class carries
/// the same total weight.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return arg_err("no classes");
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return arg_err(format!("class {c} has no samples"));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodRunConfig {
    pub epochs: usize,
    /// Size of the initial noise garbage set.
    pub garbage_init: usize,
    /// Inverted samples appended per real class each epoch.
    pub per_class: usize,
    /// Oldest garbage samples are evicted beyond this size.
    pub garbage_cap: usize,
    /// Batch and optimizer of the classifier phase; `epochs` passes over the
    /// data are made per outer epoch.
    pub classifier: ClassifierTrainConfig,
    /// Inner inversion run, re-trained from a fresh generator each epoch. Its
    /// seed is replaced by one derived from the outer seed and epoch.
    pub inversion: InversionRunConfig,
    pub seed: u64,
}

impl OodRunConfig {
    pub fn new(inversion: InversionRunConfig, seed: u64) -> Self {
        Self {
            epochs: 5,
            garbage_init: 5000,
            per_class: 200,
            garbage_cap: 30000,
            classifier: ClassifierTrainConfig { epochs: 1, seed, ..ClassifierTrainConfig::default() },
            inversion: InversionRunConfig { epochs: 5, ..inversion },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.garbage_init == 0 || self.per_class == 0 {
            return Err(Error::Config("garbage_init and per_class must be positive".into()));
        }
        if self.garbage_cap < self.garbage_init {
            return Err(Error::Config("garbage_cap must be at least garbage_init".into()));
        }
        if self.epochs == 0 || self.classifier.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        self.inversion.validate()
    }
}

/// Headline OOD metrics of an `N + 1`-output classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    /// Fraction of OOD samples assigned to the garbage class.
    pub garbage_rate: f64,
    pub in_accuracy: f64,
    /// Smallest real-class confidence among in-distribution samples predicted
    /// as a real class; `None` if there is none.
    pub min_in_confidence: Option<f64>,
    /// Largest real-class confidence among OOD samples predicted as a real
    /// class; `None` if every OOD sample went to garbage.
    pub max_ood_confidence: Option<f64>,
    /// `min_in_confidence − max_ood_confidence`; positive means a single
    /// confidence threshold separates the two sets.
    pub threshold_gap: Option<f64>,
    /// Real-class confidences of the in-distribution and OOD samples that
    /// were predicted as a real class.
    pub in_confidences: Vec<f64>,
    pub ood_confidences: Vec<f64>,
}

impl OodReport {
    /// Counts of `confidences` in `bins` equal-width bins over `[0, 1]`.
    pub fn histogram(confidences: &[f64], bins: usize) -> Vec<usize> {
        let mut h = vec![0; bins];
        if bins == 0 {
            return h;
        }
        for &c in confidences {
            let i = ((c * bins as f64) as usize).min(bins - 1);
            h[i] += 1;
        }
        h
    }
}

/// Predictions and real-class confidences (max softmax probability over the
/// first `n_real` outputs).
fn predict_with_confidence(classifier: &Classifier<f32>, data: &LabeledDataset) -> Result<Vec<(usize, f64)>> {
    let n_real = classifier.n_classes() - 1;
    let probs = classifier.predict(&data.images.values, 256)?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|r| {
            let pred = argmax(r.iter().map(|&v| f64::from(v)));
            let conf = r.iter().take(n_real).fold(0.0f64, |m, &v| m.max(f64::from(v)));
            (pred, conf)
        })
        .collect())
}

pub fn ood_eval(classifier: &Classifier<f32>, in_test: &LabeledDataset, ood_test: &LabeledDataset) -> Result<OodReport> {
    if in_test.is_empty() || ood_test.is_empty() {
        return arg_err("OOD evaluation needs non-empty test sets");
    }
    if classifier.n_classes() < 2 {
        return arg_err("classifier needs a garbage output");
    }
    let garbage = classifier.n_classes() - 1;
    let inp = predict_with_confidence(classifier, in_test)?;
    let oodp = predict_with_confidence(classifier, ood_test)?;
    let in_accuracy = inp.iter().zip(&in_test.labels).filter(|((p, _), l)| p == *l).count() as f64 / inp.len() as f64;
    let garbage_rate = oodp.iter().filter(|(p, _)| *p == garbage).count() as f64 / oodp.len() as f64;
    let real = |v: &[(usize, f64)]| v.iter().filter(|(p, _)| *p != garbage).map(|&(_, c)| c).collect::<Vec<_>>();
    let in_confidences = real(&inp);
    let ood_confidences = real(&oodp);
    let min_in_confidence = in_confidences.iter().copied().reduce(f64::min);
    let max_ood_confidence = ood_confidences.iter().copied().reduce(f64::max);
    let threshold_gap = min_in_confidence.zip(max_ood_confidence).map(|(a, b)| a - b);
    Ok(OodReport {
        garbage_rate,
        in_accuracy,
        min_in_confidence,
        max_ood_confidence,
        threshold_gap,
        in_confidences,
        ood_confidences,
    })
}

/// Bookkeeping of one hardening epoch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OodEpoch {
    pub epoch: usize,
    /// Weights used by the classifier phase of this epoch.
    pub class_weights: Vec<f64>,
    pub train_loss: f64,
    pub inner_accuracy: f64,
    pub appended: usize,
    pub garbage_count: usize,
    /// Present when evaluation sets were supplied.
    pub report: Option<OodReport>,
}

/// Garbage images, oldest first.
struct GarbageSet {
    data: LabeledDataset,
    cap: usize,
}

impl GarbageSet {
    fn append(&mut self, images: ndarray::Array4<f32>) -> Result<()> {
        let n = images.dim().0;
        let values = concatenate(Axis(0), &[self.data.images.values.view(), images.view()]).expect("matching shapes");
        let excess = values.dim().0.saturating_sub(self.cap);
        let values = values.slice(s![excess.., .., .., ..]).to_owned();
        let label = self.data.n_classes - 1;
        let count = values.dim().0;
        self.data = LabeledDataset::new(ImageBatch::new(values, self.data.images.range)?, vec![label; count], label + 1)?;
        log::debug!("garbage set: appended {n}, evicted {excess}");
        Ok(())
    }
}

/// Hardens a fresh `N + 1`-output classifier on `data` (unit range, `N`
/// classes). Each epoch trains the classifier on real data plus garbage with
/// weighted cross-entropy, inverts the result, and relabels `per_class`
/// samples of every real class as garbage. `eval` is an optional
/// (in-distribution test, OOD test) pair evaluated after every epoch.
pub fn train_with_garbage(
    classifier_config: ClassifierConfig,
    data: &LabeledDataset,
    config: &OodRunConfig,
    eval: Option<(&LabeledDataset, &LabeledDataset)>,
) -> Result<(Classifier<f32>, Vec<OodEpoch>)> {
    config.validate()?;
    let n = data.n_classes;
    if classifier_config.n_classes != n + 1 {
        return Err(Error::Config(format!(
            "classifier has {} outputs, expected {} real classes plus garbage",
            classifier_config.n_classes, n
        )));
    }
    if data.is_empty() {
        return arg_err("empty training set");
    }
    let shape = data.images.image_shape();
    let mut classifier = Classifier::new(classifier_config, derive_seed(config.seed, 0))?;
    let mut opt = Adam::new(config.classifier.adam);
    let real = data.clone().with_n_classes(n + 1)?;
    let noise = gaussian_noise_set(config.garbage_init, shape, n, derive_seed(config.seed, 1))?;
    let mut garbage = GarbageSet { data: noise, cap: config.garbage_cap };
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let seed = derive_seed(config.seed, 100 + epoch as u64);
        let combined = real.concat(&garbage.data)?;
        let weights = class_weights(&combined.class_counts())?;
        let mut train_loss = 0.0;
        for pass in 0..config.classifier.epochs {
            train_loss = train_epoch(
                &mut classifier,
                &mut opt,
                &combined,
                config.classifier.batch,
                Some(&weights),
                derive_seed(seed, pass as u64),
            )?;
        }

        let inner = InversionRunConfig { seed: derive_seed(seed, 1 << 20), ..config.inversion.clone() };
        let gen_config = GeneratorConfig::new(n, inner.conditioning_mode, shape.0, shape.1);
        let generator = Generator::new(gen_config, inner.seed)?;
        let (generator, report) = train_inversion(&classifier, generator, &inner)?;
        let labels: Vec<usize> = (0..n).flat_map(|c| std::iter::repeat_n(c, config.per_class)).collect();
        let samples = sample_generator(&generator, &classifier, labels.len(), derive_seed(seed, 2), true, Some(&labels))?;
        let inner_accuracy = samples.accuracy();
        let images = if inner_accuracy > 1.0 / n as f64 {
            samples.images
        } else {
            // keep only the samples that did reach their label
            log::warn!(
                "epoch {epoch}: inner inversion accuracy {inner_accuracy:.3} is at chance (training estimate {:.3}); appending only successful samples",
                report.final_accuracy()
            );
            let hits: Vec<usize> = samples
                .predictions()
                .iter()
                .zip(&samples.labels)
                .enumerate()
                .filter(|(_, (p, l))| p == l)
                .map(|(i, _)| i)
                .collect();
            samples.images.select(Axis(0), &hits)
        };
        let appended = images.dim().0;
        if appended > 0 {
            garbage.append(images)?;
        }
        let report = match eval {
            Some((in_test, ood_test)) => Some(ood_eval(&classifier, in_test, ood_test)?),
            None => None,
        };
        if let Some(r) = &report {
            log::info!(
                "ood epoch {epoch}: garbage rate {:.3}, accuracy {:.4}, gap {:?}",
                r.garbage_rate,
                r.in_accuracy,
                r.threshold_gap
            );
        }
        history.push(OodEpoch {
            epoch,
            class_weights: weights,
            train_loss,
            inner_accuracy,
            appended,
            garbage_count: garbage.data.len(),
            report,
        });
    }
    Ok((classifier, history))
}
