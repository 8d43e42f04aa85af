//! One function per subcommand. Each resolves its config, creates the run
//! directory, runs its pipeline and writes artifacts plus `summary.txt`.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, Axis};
use netinv::data::{gaussian_noise_set, normalize, subsample, DatasetSpec, LabeledDataset, Split};
use netinv::interpret::{
    decision_boundary_map, extract_features, pca_fit, pca_transform, sae_activation_report, sae_train, silhouette,
    tsne, two_means, Bounds, FeatureMatrix, FeatureSource, SaeConfig,
};
use netinv::inversion::{diversity_report, generate_class_grid, sample_generator, train_inversion_observed, TrainReport};
use netinv::losses::LossBreakdown;
use netinv::nets::{param_hash, Checkpoint, Classifier, Generator, GeneratorConfig};
use netinv::nn::Adam;
use netinv::ood::{ood_eval, train_with_garbage, OodReport, OodRunConfig};
use netinv::reconstruction::{reconstruction_quality, train_reconstruction_observed};
use netinv::render::{join, save_class_map, save_heatmap, save_image_grid, save_scatter, write_csv};
use netinv::rng::{derive_seed, stream};
use netinv::train::{accuracy, train_epoch, ClassifierTrainConfig};
use netinv::{Error, Result};

use crate::config::RunConfig;
use crate::run::{read_summary, RunDir};

/// Salt of the seed behind stratified training subsets; shared by every
/// command so equal sizes and seeds select the same images.
const SUBSET_SALT: u64 = 0x5eb5e7;
/// Samples behind the diversity statistics (quadratic in this number).
const DIVERSITY_SAMPLES: usize = 1000;

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Gate { accuracy: f64, gate: f64 },
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Gate { accuracy, gate } => write!(f, "test accuracy {accuracy:.4} is below the gate {gate}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

pub type Outcome = std::result::Result<(), Failure>;

fn load_split(config: &RunConfig, spec: &DatasetSpec, split: Split) -> Result<LabeledDataset> {
    normalize(&spec.load(&config.dataset_root, split)?, None)
}

fn training_set(config: &RunConfig, subset: Option<usize>) -> Result<LabeledDataset> {
    let train = load_split(config, &config.dataset, Split::Train)?;
    match subset {
        Some(n) => subsample(&train, n, derive_seed(config.seed, SUBSET_SALT)),
        None => Ok(train),
    }
}

fn require_file<'a>(path: Option<&'a Path>, what: &str, hint: &str) -> Result<&'a Path> {
    let path = path.ok_or_else(|| Error::Precondition(format!("no {what} given; {hint}")))?;
    if !path.exists() {
        return Err(Error::Precondition(format!("{what} {} does not exist; {hint}", path.display())));
    }
    Ok(path)
}

fn load_classifier(config: &RunConfig) -> Result<Classifier<f32>> {
    let path = require_file(config.checkpoint.as_deref(), "classifier checkpoint", "pass --checkpoint from train-classifier")?;
    Checkpoint::load(path)?.to_classifier()
}

fn save_classifier(model: &Classifier<f32>, seed: u64, path: &Path) -> Result<()> {
    Checkpoint::from_classifier(model, seed).save(path)
}

fn write_training_curves(run: &RunDir, report: &TrainReport) -> Result<()> {
    write_csv(
        &run.file("loss.csv"),
        LossBreakdown::CSV_HEADER,
        report.steps.iter().enumerate().map(|(i, b)| b.csv_row(i)),
    )?;
    write_csv(
        &run.file("accuracy.csv"),
        "epoch,accuracy,mean_loss",
        report.epochs.iter().map(|e| join([e.epoch.to_string(), e.accuracy.to_string(), e.loss.total.to_string()])),
    )
}

/// Observer that writes a class grid and the current generator checkpoint
/// after every epoch.
fn epoch_artifacts(
    dir: PathBuf,
    seed: u64,
    per_class: usize,
) -> impl FnMut(&netinv::inversion::EpochReport, &Generator<f32>) -> Result<()> {
    move |report, generator| {
        if per_class > 0 {
            let grid = generate_class_grid(generator, per_class, derive_seed(seed, stream::EVAL))?;
            save_image_grid(&grid.images, grid.cols, &dir.join(format!("grid-epoch-{:02}.png", report.epoch)))?;
        }
        Checkpoint::from_generator(generator, seed).save(&dir.join("generator.ckpt"))
    }
}

pub fn train_classifier(mut config: RunConfig) -> Outcome {
    let train = training_set(&config, config.classifier.train_subset)?;
    let test = load_split(&config, &config.dataset, Split::Test)?;
    config.resolve(train.n_classes, train.images.image_shape().0);
    let mut run = RunDir::create("train-classifier", &config)?;
    let section = &config.classifier;
    let arch = section.arch.clone().expect("resolved");
    let mut classifier = Classifier::new(arch, config.seed)?;
    let tc = ClassifierTrainConfig { epochs: section.epochs, batch: section.batch, adam: section.adam, seed: config.seed };
    let mut opt = Adam::new(tc.adam);
    let mut rows = Vec::new();
    let mut test_accuracy = 0.0;
    for epoch in 0..tc.epochs {
        let loss = train_epoch(&mut classifier, &mut opt, &train, tc.batch, None, derive_seed(tc.seed, epoch as u64))?;
        test_accuracy = accuracy(&classifier, &test)?;
        log::info!("epoch {epoch}: loss {loss:.4}, test accuracy {test_accuracy:.4}");
        rows.push(join([epoch.to_string(), loss.to_string(), test_accuracy.to_string()]));
    }
    write_csv(&run.file("metrics.csv"), "epoch,train_loss,test_accuracy", rows)?;
    save_classifier(&classifier, config.seed, &run.file("classifier.ckpt"))?;
    run.record("train_size", train.len());
    run.record("test_accuracy", test_accuracy);
    run.record("param_hash", param_hash(&classifier));
    run.record("checkpoint", run.file("classifier.ckpt").display());
    if let Some(gate) = section.accuracy_gate {
        run.record("accuracy_gate", gate);
        run.record("gate_passed", test_accuracy >= gate);
    }
    let summary = run.finish()?;
    println!("{}", summary.display());
    match section.accuracy_gate {
        Some(gate) if test_accuracy < gate => Err(Failure::Gate { accuracy: test_accuracy, gate }),
        _ => Ok(()),
    }
}

fn generator_for(classifier: &Classifier<f32>, mode: netinv::conditioning::ConditioningMode, seed: u64) -> Result<Generator<f32>> {
    let c = &classifier.config;
    Generator::new(GeneratorConfig::new(c.n_classes, mode, c.in_channels, c.image_size), seed)
}

pub fn invert(mut config: RunConfig) -> Outcome {
    let classifier = load_classifier(&config)?;
    config.resolve(classifier.n_classes(), classifier.config.in_channels);
    let mut run = RunDir::create("invert", &config)?;
    let section = config.inversion.clone();
    let rc = section.run_config(config.seed);
    let generator = generator_for(&classifier, rc.conditioning_mode, config.seed)?;
    let mut observer = epoch_artifacts(run.path.clone(), config.seed, section.grid_per_class);
    let (generator, report) = train_inversion_observed(&classifier, generator, &rc, &mut observer)?;
    write_training_curves(&run, &report)?;

    let eval_seed = derive_seed(config.seed, stream::EVAL);
    if section.final_samples > 0 {
        let samples = sample_generator(&generator, &classifier, section.final_samples, eval_seed, rc.hot_conditions, None)?;
        run.record("inversion_accuracy", samples.accuracy());
    }
    run.record("final_epoch_accuracy", report.final_accuracy());
    let diversity = diversity_report(&generator, &classifier, DIVERSITY_SAMPLES, eval_seed, None)?;
    write_csv(
        &run.file("diversity.csv"),
        "class,count,mean_cosine",
        diversity.classes.iter().map(|c| join([c.label.to_string(), c.count.to_string(), opt(c.mean_cosine)])),
    )?;
    run.record_opt("mean_intra_cosine", diversity.mean_intra_cosine);
    run.record_opt("mean_inter_cosine", diversity.mean_inter_cosine);
    if section.grid_per_class > 0 {
        let grid = generate_class_grid(&generator, section.grid_per_class, eval_seed)?;
        save_image_grid(&grid.images, grid.cols, &run.file("grid.png"))?;
        let preds = classifier.predict(&grid.images, 256)?;
        let agree = preds
            .rows()
            .into_iter()
            .zip(&grid.labels)
            .filter(|(r, l)| netinv::conditioning::argmax(r.iter().map(|&v| f64::from(v))) == **l)
            .count();
        run.record("grid_agreement", agree as f64 / grid.labels.len() as f64);
    }
    run.record("classifier_hash", &report.classifier_hash);
    println!("{}", run.finish()?.display());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn reconstruct(mut config: RunConfig) -> Outcome {
    let classifier = load_classifier(&config)?;
    let reference = training_set(&config, config.reconstruction.reference_subset)?;
    config.resolve(classifier.n_classes(), classifier.config.in_channels);
    let mut run = RunDir::create("reconstruct", &config)?;
    let section = config.reconstruction.clone();
    let rc = section.run_config(config.seed);
    let generator = generator_for(&classifier, rc.conditioning_mode, config.seed)?;
    let mut observer = epoch_artifacts(run.path.clone(), config.seed, section.grid_per_class);
    let (generator, report) = train_reconstruction_observed(&classifier, generator, &rc, &mut observer)?;
    write_training_curves(&run, &report)?;

    let eval_seed = derive_seed(config.seed, stream::EVAL);
    let samples = sample_generator(&generator, &classifier, section.quality_samples.max(1), eval_seed, true, None)?;
    run.record("inversion_accuracy", samples.accuracy());
    let quality = reconstruction_quality(&generator, &reference, section.quality_samples, eval_seed)?;
    write_csv(
        &run.file("quality.csv"),
        "class,count,nn_l2,nn_ncc",
        quality.classes.iter().map(|c| join([c.label.to_string(), c.count.to_string(), opt(c.nn_l2_median), opt(c.nn_ncc_median)])),
    )?;
    // reconstruction | nearest neighbor, per class
    let per = section.grid_per_class.max(1);
    let mut pairs = Vec::new();
    for label in 0..classifier.n_classes() {
        for i in (0..quality.labels.len()).filter(|&i| quality.labels[i] == label).take(per) {
            if let Some(j) = quality.neighbors[i] {
                pairs.push(quality.samples.index_axis(Axis(0), i).to_owned());
                pairs.push(reference.images.values.index_axis(Axis(0), j).to_owned());
            }
        }
    }
    if !pairs.is_empty() {
        let views: Vec<_> = pairs.iter().map(|p| p.view().insert_axis(Axis(0))).collect();
        let grid: Array4<f32> = ndarray::concatenate(Axis(0), &views).expect("same shapes");
        save_image_grid(&grid, 2 * per, &run.file("nn-grid.png"))?;
    }
    run.record("reference_size", reference.len());
    run.record_opt("nn_l2_median", quality.median_nn_l2);
    run.record_opt("nn_ncc_median", quality.median_nn_ncc);
    run.record("classifier_hash", &report.classifier_hash);
    println!("{}", run.finish()?.display());
    Ok(())
}

fn write_ood_report(run: &mut RunDir, report: &OodReport, bins: usize) -> Result<()> {
    for (name, values) in [("in-confidence.csv", &report.in_confidences), ("ood-confidence.csv", &report.ood_confidences)] {
        let counts = OodReport::histogram(values, bins);
        write_csv(
            &run.file(name),
            "bin_low,bin_high,count",
            counts.iter().enumerate().map(|(i, c)| {
                join([(i as f64 / bins as f64).to_string(), ((i + 1) as f64 / bins as f64).to_string(), c.to_string()])
            }),
        )?;
    }
    run.record("garbage_rate", report.garbage_rate);
    run.record("in_accuracy", report.in_accuracy);
    run.record_opt("min_in_confidence", report.min_in_confidence);
    run.record_opt("max_ood_confidence", report.max_ood_confidence);
    run.record_opt("threshold_gap", report.threshold_gap);
    Ok(())
}

fn record_baseline(run: &mut RunDir, config: &RunConfig, in_test: &LabeledDataset, hardened_accuracy: f64) -> Result<()> {
    let Some(path) = config.ood.baseline_checkpoint.as_deref() else { return Ok(()) };
    let path = require_file(Some(path), "baseline checkpoint", "train one with train-classifier")?;
    let baseline = Checkpoint::load(path)?.to_classifier()?;
    let base_acc = accuracy(&baseline, in_test)?;
    run.record("baseline_accuracy", base_acc);
    run.record("accuracy_drop", base_acc - hardened_accuracy);
    Ok(())
}

fn ood_test_sets(config: &RunConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let in_test = load_split(config, &config.dataset, Split::Test)?;
    let ood_test = load_split(config, &config.ood.ood_dataset, Split::Test)?;
    Ok((in_test, ood_test))
}

pub fn ood_train(mut config: RunConfig) -> Outcome {
    let train = training_set(&config, config.ood.train_subset)?;
    let (in_test, ood_test) = ood_test_sets(&config)?;
    config.resolve(train.n_classes, train.images.image_shape().0);
    let mut run = RunDir::create("ood-train", &config)?;
    let s = config.ood.clone();
    let mut arch = config.classifier.arch.clone().expect("resolved");
    arch.n_classes = train.n_classes + 1;
    let oc = OodRunConfig {
        epochs: s.epochs,
        garbage_init: s.garbage_init,
        per_class: s.per_class,
        garbage_cap: s.garbage_cap,
        classifier: ClassifierTrainConfig { epochs: s.classifier_passes, batch: s.batch, adam: s.adam, seed: config.seed },
        inversion: s.inner.run_config(config.seed),
        seed: config.seed,
    };
    let (classifier, history) = train_with_garbage(arch, &train, &oc, Some((&in_test, &ood_test)))?;
    save_classifier(&classifier, config.seed, &run.file("hardened.ckpt"))?;
    write_csv(
        &run.file("ood-epochs.csv"),
        "epoch,train_loss,inner_accuracy,appended,garbage_count,garbage_rate,in_accuracy,threshold_gap",
        history.iter().map(|e| {
            let r = e.report.as_ref();
            join([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.inner_accuracy.to_string(),
                e.appended.to_string(),
                e.garbage_count.to_string(),
                r.map_or_else(String::new, |r| r.garbage_rate.to_string()),
                r.map_or_else(String::new, |r| r.in_accuracy.to_string()),
                opt(r.and_then(|r| r.threshold_gap)),
            ])
        }),
    )?;
    let report = history.last().and_then(|e| e.report.clone()).expect("evaluated every epoch");
    write_ood_report(&mut run, &report, s.histogram_bins)?;
    record_baseline(&mut run, &config, &in_test, report.in_accuracy)?;
    run.record("checkpoint", run.file("hardened.ckpt").display());
    println!("{}", run.finish()?.display());
    Ok(())
}

pub fn ood_evaluate(mut config: RunConfig) -> Outcome {
    let classifier = load_classifier(&config)?;
    let (in_test, ood_test) = ood_test_sets(&config)?;
    config.resolve(classifier.n_classes() - 1, classifier.config.in_channels);
    let mut run = RunDir::create("ood-eval", &config)?;
    let report = ood_eval(&classifier, &in_test, &ood_test)?;
    write_ood_report(&mut run, &report, config.ood.histogram_bins)?;
    record_baseline(&mut run, &config, &in_test, report.in_accuracy)?;
    println!("{}", run.finish()?.display());
    Ok(())
}

pub fn interpret(mut config: RunConfig) -> Outcome {
    let classifier = load_classifier(&config)?;
    let gen_path = require_file(
        config.interpret.generator_checkpoint.as_deref(),
        "generator checkpoint",
        "set interpret.generator_checkpoint to the generator.ckpt of an invert run",
    )?;
    let generator = Checkpoint::load(gen_path)?.to_generator()?;
    let train = load_split(&config, &config.dataset, Split::Train)?;
    let test = load_split(&config, &config.dataset, Split::Test)?;
    config.resolve(classifier.n_classes(), classifier.config.in_channels);
    let mut run = RunDir::create("interpret", &config)?;
    let s = config.interpret.clone();
    let seed = config.seed;
    let n = s.samples_per_source;

    let training = subsample(&train, n, derive_seed(seed, 1))?;
    let holdout = subsample(&test, n, derive_seed(seed, 2))?;
    let inverted = sample_generator(&generator, &classifier, n, derive_seed(seed, 3), false, None)?;
    let noise = gaussian_noise_set(n, training.images.image_shape(), classifier.n_classes(), derive_seed(seed, 4))?;
    let feats = extract_features(&classifier, &training.images.values, Some(&training.labels), FeatureSource::Training)?
        .concat(&extract_features(&classifier, &holdout.images.values, Some(&holdout.labels), FeatureSource::Holdout)?)?
        .concat(&extract_features(&classifier, &inverted.images, Some(&inverted.labels), FeatureSource::Inverted)?)?
        .concat(&extract_features(&classifier, &noise.images.values, None, FeatureSource::Noise)?)?;
    let x = feats.to_f64();
    let source_index = |f: FeatureSource| f as usize;
    let class_colors: Vec<usize> = feats.labels.iter().map(|l| l.unwrap_or(usize::MAX)).collect();
    let source_colors: Vec<usize> = feats.sources.iter().map(|&f| source_index(f)).collect();
    let tagged = |points: &Array2<f64>, feats: &FeatureMatrix| {
        points
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let label = feats.labels[i].map_or_else(String::new, |l| l.to_string());
                join([feats.sources[i].name().to_string(), label, p[0].to_string(), p[1].to_string()])
            })
            .collect::<Vec<_>>()
    };

    // PCA spread and decision-boundary map
    let pca = pca_fit(&x, 2)?;
    let projected = pca_transform(&pca, &x)?;
    write_csv(&run.file("pca.csv"), "source,label,pc1,pc2", tagged(&projected, &feats))?;
    write_csv(
        &run.file("pca-variance.csv"),
        "component,explained_variance_ratio",
        pca.explained_variance_ratio.iter().enumerate().map(|(i, r)| join([(i + 1).to_string(), r.to_string()])),
    )?;
    save_scatter(&projected, &class_colors, 600, &run.file("pca-classes.png"))?;
    save_scatter(&projected, &source_colors, 600, &run.file("pca-sources.png"))?;
    let bounds = Bounds::covering(&projected, 0.1)?;
    let map = decision_boundary_map(&classifier, &pca, bounds, s.map_resolution)?;
    save_class_map(&map.classes, &run.file("class-map.png"))?;
    write_csv(
        &run.file("class-map.csv"),
        "row,col,pc1,pc2,class",
        map.classes.indexed_iter().map(|((i, j), c)| {
            let (px, py) = map.point(i, j);
            join([i.to_string(), j.to_string(), px.to_string(), py.to_string(), c.to_string()])
        }),
    )?;
    let present = map.present_classes();
    let mut feature_classes: Vec<usize> = training.labels.clone();
    feature_classes.sort_unstable();
    feature_classes.dedup();
    run.record("pca_variance_1", pca.explained_variance_ratio[0]);
    run.record("pca_variance_2", pca.explained_variance_ratio[1]);
    run.record("map_classes", present.len());
    run.record("map_covers_feature_classes", feature_classes.iter().all(|c| present.contains(c)));

    // t-SNE
    let emb = tsne(&x, &s.tsne.config(seed))?;
    write_csv(&run.file("tsne.csv"), "source,label,x,y", tagged(&emb.embedding, &feats))?;
    write_csv(
        &run.file("tsne-kl.csv"),
        "iteration,kl",
        emb.kl_history.iter().map(|(i, kl)| join([i.to_string(), kl.to_string()])),
    )?;
    save_scatter(&emb.embedding, &source_colors, 600, &run.file("tsne-sources.png"))?;
    save_scatter(&emb.embedding, &class_colors, 600, &run.file("tsne-classes.png"))?;
    let mut cluster_rows = Vec::new();
    for label in 0..classifier.n_classes() {
        let idx: Vec<usize> = (0..feats.len())
            .filter(|&i| feats.sources[i] == FeatureSource::Inverted && feats.labels[i] == Some(label))
            .collect();
        let pts = emb.embedding.select(Axis(0), &idx);
        let sil = silhouette(&pts, &two_means(&pts));
        cluster_rows.push(join([label.to_string(), idx.len().to_string(), opt(sil)]));
    }
    write_csv(&run.file("tsne-inverted-clusters.csv"), "class,count,two_means_silhouette", cluster_rows)?;
    run.record_opt("tsne_final_kl", emb.kl_history.last().map(|p| p.1));

    // sparse autoencoder audit
    let d = classifier.feature_dim();
    let defaults = SaeConfig::for_dim(d, seed);
    let sc = SaeConfig {
        hidden: s.sae.hidden.unwrap_or(defaults.hidden),
        k_active: s.sae.k_active.unwrap_or(defaults.k_active),
        epochs: s.sae.epochs,
        batch: s.sae.batch,
        lr: s.sae.lr,
        seed,
    };
    let (sae, losses) = sae_train(&x, &sc)?;
    write_csv(
        &run.file("sae-loss.csv"),
        "epoch,median_batch_loss",
        losses.iter().enumerate().map(|(i, l)| join([i.to_string(), l.to_string()])),
    )?;
    let groups: Vec<(FeatureSource, Array2<f64>)> =
        [FeatureSource::Training, FeatureSource::Holdout, FeatureSource::Inverted, FeatureSource::Noise]
            .into_iter()
            .map(|f| (f, feats.rows_from(f)))
            .collect();
    let named: Vec<(&str, &Array2<f64>)> = groups.iter().map(|(f, x)| (f.name(), x)).collect();
    let report = sae_activation_report(&sae, &named)?;
    let mut act_rows = Vec::new();
    let mut heat = Array2::<f64>::from_elem((report.groups.len(), sae.hidden()), f64::NAN);
    for (gi, g) in report.groups.iter().enumerate() {
        if let (Some(mean), Some(support)) = (&g.mean_activation, &g.support) {
            for (u, m) in mean.iter().enumerate() {
                heat[[gi, u]] = *m;
                act_rows.push(join([g.name.clone(), u.to_string(), m.to_string(), support.contains(&u).to_string()]));
            }
        }
    }
    write_csv(&run.file("sae-activations.csv"), "group,unit,mean_activation,in_support", act_rows)?;
    let names: Vec<&str> = report.groups.iter().map(|g| g.name.as_str()).collect();
    write_csv(
        &run.file("sae-jaccard.csv"),
        &format!("group,{}", names.join(",")),
        report.jaccard.iter().zip(&names).map(|(row, name)| format!("{name},{}", join(row.iter().map(|v| opt(*v))))),
    )?;
    save_heatmap(&heat, 4, &run.file("sae-heatmap.png"))?;
    run.record("sae_hidden", sc.hidden);
    run.record("sae_k_active", sc.k_active);
    for other in ["holdout", "inverted", "noise"] {
        run.record_opt(&format!("jaccard_training_{other}"), report.jaccard_between("training", other));
    }
    println!("{}", run.finish()?.display());
    Ok(())
}

/// Collects the summaries of every run under the output root into
/// `report.csv` and prints them.
pub fn report(config: RunConfig) -> Outcome {
    let mut dirs: Vec<_> = std::fs::read_dir(&config.out).map_err(Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.txt").is_file())
        .collect();
    dirs.sort();
    let mut rows = Vec::new();
    for dir in &dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        println!("[{name}]");
        for (k, v) in read_summary(&dir.join("summary.txt"))? {
            println!("  {k} = {v}");
            rows.push(join([name.clone(), k, v]));
        }
    }
    write_csv(&config.out.join("report.csv"), "run,key,value", rows)?;
    Ok(())
}
