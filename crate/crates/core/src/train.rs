//! Supervised classifier training and evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::conditioning::argmax;
use crate::data::LabeledDataset;
use crate::error::{arg_err, Error, Result};
use crate::losses::weighted_cross_entropy;
use crate::nets::Classifier;
use crate::nn::{Adam, AdamConfig, Module};
use crate::rng::{stream, stream_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch: 64,
            adam: AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            seed: 0,
        }
    }
}

/// One epoch of supervised training, optionally with per-class loss weights.
/// Returns the mean batch loss.
pub fn train_epoch(
    classifier: &mut Classifier<f32>,
    opt: &mut Adam<f32>,
    data: &LabeledDataset,
    batch: usize,
    class_weights: Option<&[f64]>,
    seed: u64,
) -> Result<f64> {
    if batch == 0 {
        return arg_err("batch must be positive");
    }
    if data.n_classes > classifier.n_classes() {
        return arg_err(format!(
            "dataset has {} classes, classifier {}",
            data.n_classes,
            classifier.n_classes()
        ));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(seed, stream::SHUFFLE));
    let mut drop_rng = stream_rng(seed, stream::DROPOUT);
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch) {
        // a single-sample batch has no batch statistics to normalize with
        if chunk.len() < 2 {
            continue;
        }
        let (x, y) = data.gather(chunk);
        let (out, tape) = classifier.forward_train(&x, &mut drop_rng)?;
        let (loss, dz) = weighted_cross_entropy(&out.logits, &y, class_weights)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step: batches, breakdown: format!("ce={loss}") });
        }
        let mut grads = classifier.zeros_like();
        classifier.backward(&tape, Some(&dz), None, Some(&mut grads));
        opt.step(classifier.params_mut(), grads.params());
        total += loss;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

/// Trains for `config.epochs` epochs; returns per-epoch mean losses.
pub fn train_classifier(
    classifier: &mut Classifier<f32>,
    data: &LabeledDataset,
    config: &ClassifierTrainConfig,
) -> Result<Vec<f64>> {
    let mut opt = Adam::new(config.adam);
    (0..config.epochs)
        .map(|e| {
            let loss = train_epoch(classifier, &mut opt, data, config.batch, None, crate::rng::derive_seed(config.seed, e as u64))?;
            log::info!("classifier epoch {e}: loss {loss:.4}");
            Ok(loss)
        })
        .collect()
}

/// Evaluation-mode argmax predictions.
pub fn predict(classifier: &Classifier<f32>, data: &LabeledDataset) -> Result<Vec<usize>> {
    let probs = classifier.predict(&data.images.values, 256)?;
    Ok(probs.rows().into_iter().map(|r| argmax(r.iter().map(|&v| f64::from(v)))).collect())
}

/// Fraction of correctly classified items.
pub fn accuracy(classifier: &Classifier<f32>, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return arg_err("accuracy of an empty dataset");
    }
    let pred = predict(classifier, data)?;
    Ok(pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count() as f64 / data.len() as f64)
}
