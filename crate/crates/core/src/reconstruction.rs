//! Steering inversion toward training-like samples: one-hot conditions,
//! consistency under random L∞ perturbations, image priors and the
//! gradient-norm penalty.

use ndarray::{Array4, Axis, Zip};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::conditioning::ConditioningMode;
use crate::data::LabeledDataset;
use crate::error::{arg_err, Error, Result};
use crate::inversion::{generate_images, run_training, EpochObserver, Objective, TrainReport};
use crate::losses::ReconWeights;
use crate::metrics::{median, ncc, nearest_neighbors};
use crate::nets::{Classifier, Generator};
use crate::nn::AdamConfig;
use crate::rng::{stream, stream_rng, Rng};

/// `clamp(I + U(−ε, ε), 0, 1)` with noise from the given stream, plus the
/// mask of entries the clamp left untouched (the pass-through gradient).
pub(crate) fn perturb_linf_masked(images: &Array4<f32>, eps: f64, rng: &mut Rng) -> Result<(Array4<f32>, Array4<f32>)> {
    if !(eps > 0.0) {
        return arg_err(format!("perturbation radius {eps} must be positive"));
    }
    let u = Uniform::new_inclusive(-eps, eps).expect("finite radius");
    let mut out = images.clone();
    let mut mask = Array4::<f32>::ones(images.raw_dim());
    Zip::from(&mut out).and(&mut mask).for_each(|x, m| {
        let v = f64::from(*x) + u.sample(rng);
        if !(0.0..=1.0).contains(&v) {
            *m = 0.0;
        }
        *x = v.clamp(0.0, 1.0) as f32;
    });
    Ok((out, mask))
}

/// Uniform L∞-ball perturbation clamped to `[0, 1]`.
pub fn perturb_linf(images: &Array4<f32>, eps: f64, seed: u64) -> Result<Array4<f32>> {
    let mut rng = stream_rng(seed, stream::PERTURB);
    Ok(perturb_linf_masked(images, eps, &mut rng)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconRunConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    pub weights: ReconWeights,
    pub conditioning_mode: ConditioningMode,
    pub adam: AdamConfig,
    pub seed: u64,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

fn default_eval_samples() -> usize {
    1000
}

impl ReconRunConfig {
    pub fn new(mode: ConditioningMode, seed: u64) -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: 200,
            batch: 64,
            weights: ReconWeights::default(),
            conditioning_mode: mode,
            adam: AdamConfig::default(),
            seed,
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
        self.weights.validate()
    }
}

/// Trains the generator with one-hot conditions against the frozen classifier
/// under the reconstruction objective.
pub fn train_reconstruction(
    classifier: &Classifier<f32>,
    generator: Generator<f32>,
    config: &ReconRunConfig,
) -> Result<(Generator<f32>, TrainReport)> {
    train_reconstruction_observed(classifier, generator, config, &mut |_, _| Ok(()))
}

pub fn train_reconstruction_observed(
    classifier: &Classifier<f32>,
    generator: Generator<f32>,
    config: &ReconRunConfig,
    observer: &mut EpochObserver<'_>,
) -> Result<(Generator<f32>, TrainReport)> {
    config.validate()?;
    if generator.mode() != config.conditioning_mode {
        return Err(Error::Config("run mode differs from the generator mode".into()));
    }
    run_training(
        classifier,
        generator,
        Objective::Reconstruction(&config.weights),
        config.epochs,
        config.steps_per_epoch,
        config.batch,
        true,
        config.adam,
        config.seed,
        config.eval_samples,
        observer,
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassQuality {
    pub label: usize,
    pub count: usize,
    /// `None` when the reference set has no image of this class.
    pub nn_l2_median: Option<f64>,
    pub nn_ncc_median: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ReconQuality {
    pub classes: Vec<ClassQuality>,
    pub median_nn_l2: Option<f64>,
    pub median_nn_ncc: Option<f64>,
    /// Generated images, their labels and their nearest same-class reference
    /// image (row index into the reference set) for side-by-side grids.
    pub samples: Array4<f32>,
    pub labels: Vec<usize>,
    pub neighbors: Vec<Option<usize>>,
}

/// Nearest same-class reference image of each generated sample, with L2
/// distance and normalized cross-correlation. Labels cycle over the classes so
/// every class receives `n_samples / N` samples (±1).
pub fn reconstruction_quality(
    generator: &Generator<f32>,
    dataset: &LabeledDataset,
    n_samples: usize,
    seed: u64,
) -> Result<ReconQuality> {
    let n = generator.config.n_classes;
    if n_samples == 0 {
        return arg_err("quality needs at least one sample");
    }
    let labels: Vec<usize> = (0..n_samples).map(|i| i % n).collect();
    let (images, labels) = generate_images(generator, n_samples, seed, true, Some(&labels))?;
    let reference = &dataset.images.values;
    let flat = |x: &Array4<f32>, i: usize| x.index_axis(Axis(0), i).iter().copied().collect::<ndarray::Array1<f32>>();
    let mut neighbors = vec![None; n_samples];
    let mut dists = vec![f64::NAN; n_samples];
    let mut nccs = vec![f64::NAN; n_samples];
    let mut classes = Vec::with_capacity(n);
    for label in 0..n {
        let members: Vec<usize> = (0..n_samples).filter(|&i| labels[i] == label).collect();
        let ref_idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == label).collect();
        if ref_idx.is_empty() || members.is_empty() {
            classes.push(ClassQuality { label, count: members.len(), nn_l2_median: None, nn_ncc_median: None });
            continue;
        }
        let refs = reference.select(Axis(0), &ref_idx);
        let queries = images.select(Axis(0), &members);
        let nn = nearest_neighbors(&queries, &refs);
        for (k, &(j, d)) in nn.iter().enumerate() {
            let i = members[k];
            neighbors[i] = Some(ref_idx[j]);
            dists[i] = d;
            nccs[i] = ncc(flat(&images, i).view(), flat(&refs, j).view()).unwrap_or(f64::NAN);
        }
        classes.push(ClassQuality {
            label,
            count: members.len(),
            nn_l2_median: median(members.iter().map(|&i| dists[i]).collect()),
            nn_ncc_median: median(members.iter().map(|&i| nccs[i]).collect()),
        });
    }
    Ok(ReconQuality {
        classes,
        median_nn_l2: median(dists),
        median_nn_ncc: median(nccs),
        samples: images,
        labels,
        neighbors,
    })
}
