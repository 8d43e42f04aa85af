//! Run configuration file. Every section is optional in the input; the
//! resolved form written to each run directory spells out every value.

use std::path::{Path, PathBuf};

use netinv::conditioning::ConditioningMode;
use netinv::data::{DatasetName, DatasetSpec};
use netinv::interpret::TsneConfig;
use netinv::inversion::InversionRunConfig;
use netinv::losses::{InversionWeights, ReconWeights};
use netinv::nets::ClassifierConfig;
use netinv::nn::AdamConfig;
use netinv::reconstruction::ReconRunConfig;
use netinv::train::ClassifierTrainConfig;
use netinv::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Root under which run directories are created.
    pub out: PathBuf,
    pub dataset_root: PathBuf,
    /// Input checkpoint of the subcommand (a classifier for every pipeline
    /// except train-classifier, which ignores it).
    pub checkpoint: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub classifier: ClassifierSection,
    pub inversion: InversionSection,
    pub reconstruction: ReconSection,
    pub ood: OodSection,
    pub interpret: InterpretSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            dataset_root: PathBuf::from("data"),
            checkpoint: None,
            dataset: DatasetSpec::named(DatasetName::Mnist),
            classifier: ClassifierSection::default(),
            inversion: InversionSection::default(),
            reconstruction: ReconSection::default(),
            ood: OodSection::default(),
            interpret: InterpretSection::default(),
        }
    }
}

fn classifier_adam() -> AdamConfig {
    ClassifierTrainConfig::default().adam
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    /// Architecture; filled from the dataset's preset when absent.
    pub arch: Option<ClassifierConfig>,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Train on a stratified subset of this size instead of the full split.
    pub train_subset: Option<usize>,
    /// Minimum test accuracy; a miss fails the command. Defaults to 0.97 on
    /// MNIST and to no gate elsewhere.
    pub accuracy_gate: Option<f64>,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self { arch: None, epochs: 2, batch: 64, adam: classifier_adam(), train_subset: None, accuracy_gate: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionSection {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    pub weights: InversionWeights,
    pub conditioning_mode: ConditioningMode,
    pub adam: AdamConfig,
    pub hot_conditions: bool,
    /// Samples behind the per-epoch accuracy estimate.
    pub eval_samples: usize,
    /// Samples behind the final accuracy and diversity figures.
    pub final_samples: usize,
    pub grid_per_class: usize,
}

impl Default for InversionSection {
    fn default() -> Self {
        let base = InversionRunConfig::new(ConditioningMode::Vector, 0);
        Self {
            epochs: base.epochs,
            steps_per_epoch: base.steps_per_epoch,
            batch: base.batch,
            weights: base.weights,
            conditioning_mode: base.conditioning_mode,
            adam: base.adam,
            hot_conditions: base.hot_conditions,
            eval_samples: base.eval_samples,
            final_samples: 10_000,
            grid_per_class: 8,
        }
    }
}

impl InversionSection {
    pub fn run_config(&self, seed: u64) -> InversionRunConfig {
        InversionRunConfig {
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            batch: self.batch,
            weights: self.weights,
            conditioning_mode: self.conditioning_mode,
            adam: self.adam,
            seed,
            hot_conditions: self.hot_conditions,
            eval_samples: self.eval_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSection {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    pub weights: ReconWeights,
    pub conditioning_mode: ConditioningMode,
    pub adam: AdamConfig,
    pub eval_samples: usize,
    /// Nearest-neighbor reference: the stratified training subset of this
    /// size drawn with the run seed (match the classifier's `train_subset`),
    /// or the full training split when absent.
    pub reference_subset: Option<usize>,
    pub quality_samples: usize,
    pub grid_per_class: usize,
}

impl Default for ReconSection {
    fn default() -> Self {
        let base = ReconRunConfig::new(ConditioningMode::Vector, 0);
        Self {
            epochs: base.epochs,
            steps_per_epoch: base.steps_per_epoch,
            batch: base.batch,
            weights: base.weights,
            conditioning_mode: base.conditioning_mode,
            adam: base.adam,
            eval_samples: base.eval_samples,
            reference_subset: None,
            quality_samples: 1000,
            grid_per_class: 4,
        }
    }
}

impl ReconSection {
    pub fn run_config(&self, seed: u64) -> ReconRunConfig {
        ReconRunConfig {
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            batch: self.batch,
            weights: self.weights,
            conditioning_mode: self.conditioning_mode,
            adam: self.adam,
            seed,
            eval_samples: self.eval_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodSection {
    pub epochs: usize,
    pub garbage_init: usize,
    pub per_class: usize,
    pub garbage_cap: usize,
    /// Passes over real data plus garbage per hardening epoch.
    pub classifier_passes: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub train_subset: Option<usize>,
    /// Inner inversion run of every hardening epoch.
    pub inner: InnerInversionSection,
    /// Out-of-distribution test set (its test split is used).
    pub ood_dataset: DatasetSpec,
    pub histogram_bins: usize,
    /// Unhardened classifier to compare in-distribution accuracy against.
    pub baseline_checkpoint: Option<PathBuf>,
}

impl Default for OodSection {
    fn default() -> Self {
        Self {
            epochs: 5,
            garbage_init: 5000,
            per_class: 200,
            garbage_cap: 30_000,
            classifier_passes: 1,
            batch: 64,
            adam: classifier_adam(),
            train_subset: None,
            inner: InnerInversionSection::default(),
            ood_dataset: DatasetSpec::named(DatasetName::FashionMnist),
            histogram_bins: 20,
            baseline_checkpoint: None,
        }
    }
}

/// Inversion settings of the short runs inside OOD hardening; a separate type
/// so that its defaults (5 epochs) also apply to partially given tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerInversionSection {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    pub weights: InversionWeights,
    pub conditioning_mode: ConditioningMode,
    pub adam: AdamConfig,
    pub hot_conditions: bool,
    pub eval_samples: usize,
}

impl Default for InnerInversionSection {
    fn default() -> Self {
        let base = InversionSection::default();
        Self {
            epochs: 5,
            steps_per_epoch: base.steps_per_epoch,
            batch: base.batch,
            weights: base.weights,
            conditioning_mode: base.conditioning_mode,
            adam: base.adam,
            hot_conditions: base.hot_conditions,
            eval_samples: 200,
        }
    }
}

impl InnerInversionSection {
    pub fn run_config(&self, seed: u64) -> InversionRunConfig {
        InversionRunConfig {
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            batch: self.batch,
            weights: self.weights,
            conditioning_mode: self.conditioning_mode,
            adam: self.adam,
            seed,
            hot_conditions: self.hot_conditions,
            eval_samples: self.eval_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeSection {
    /// Hidden width; four times the feature width when absent.
    pub hidden: Option<usize>,
    /// Active units per row; an eighth of the feature width when absent.
    pub k_active: Option<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for SaeSection {
    fn default() -> Self {
        Self { hidden: None, k_active: None, epochs: 30, batch: 64, lr: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneSection {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
}

impl Default for TsneSection {
    fn default() -> Self {
        let t = TsneConfig::default();
        Self {
            perplexity: t.perplexity,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            early_exaggeration: t.early_exaggeration,
            exaggeration_iters: t.exaggeration_iters,
            initial_momentum: t.initial_momentum,
            final_momentum: t.final_momentum,
        }
    }
}

impl TsneSection {
    pub fn config(&self, seed: u64) -> TsneConfig {
        TsneConfig {
            perplexity: self.perplexity,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            early_exaggeration: self.early_exaggeration,
            exaggeration_iters: self.exaggeration_iters,
            initial_momentum: self.initial_momentum,
            final_momentum: self.final_momentum,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretSection {
    /// Trained generator supplying the inverted samples.
    pub generator_checkpoint: Option<PathBuf>,
    /// Rows drawn from each source (training, holdout, inverted, noise).
    pub samples_per_source: usize,
    pub map_resolution: usize,
    pub tsne: TsneSection,
    pub sae: SaeSection,
}

impl Default for InterpretSection {
    fn default() -> Self {
        Self {
            generator_checkpoint: None,
            samples_per_source: 250,
            map_resolution: 200,
            tsne: TsneSection::default(),
            sae: SaeSection::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; a missing path yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    /// Fills values that depend on the dataset: the classifier architecture
    /// preset and the accuracy gate.
    pub fn resolve(&mut self, n_classes: usize, channels: usize) {
        if self.classifier.arch.is_none() {
            self.classifier.arch =
                Some(if channels == 3 { ClassifierConfig::cifar(n_classes) } else { ClassifierConfig::mnist(n_classes) });
        }
        if self.classifier.accuracy_gate.is_none() && self.dataset.name == DatasetName::Mnist {
            self.classifier.accuracy_gate = Some(0.97);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let mut c = RunConfig::default();
        c.resolve(10, 1);
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.classifier.accuracy_gate, Some(0.97));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 1\nsneed = 2\n").is_err());
        assert!(toml::from_str::<RunConfig>("[inversion]\nepochz = 2\n").is_err());
        let c: RunConfig = toml::from_str("[inversion]\nepochs = 2\n").unwrap();
        assert_eq!(c.inversion.epochs, 2);
        assert_eq!(c.inversion.steps_per_epoch, 200);
        let c: RunConfig = toml::from_str("[ood.inner]\nsteps_per_epoch = 20\n").unwrap();
        assert_eq!((c.ood.inner.epochs, c.ood.inner.steps_per_epoch), (5, 20));
    }
}
