//! Mini-batch SGD training, evaluation and cross-validation.

mod metrics;
mod sgd;

pub use metrics::{evaluate, moving_average, predict, trend_violations, ConfusionMatrix, EpochMetrics, Metrics};
pub use sgd::{sgd_step, Sgd};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use crate::data::{kfold_partition, Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::model::{save_model_file, ModelConfig, Network};
use crate::nn::softmax_xent_batch;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Per-epoch metrics log.
    pub log_path: Option<PathBuf>,
    /// Save the model to `checkpoint_path` every this many epochs.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 35,
            epochs: 200,
            momentum: 0.0,
            seed: 0,
            shuffle: true,
            log_path: None,
            checkpoint_every: None,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted: it freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Argument("checkpoint cadence must be positive".into()));
        }
        Ok(())
    }

    /// Header lines echoed at the top of the metrics log.
    pub fn log_header(&self) -> String {
        format!(
            "# lr={} batch={} epochs={} momentum={} seed={} shuffle={}\n# epoch\ttrain_loss\ttrain_acc\tval_acc\n",
            self.lr, self.batch, self.epochs, self.momentum, self.seed, self.shuffle
        )
    }
}

/// Stacks sample images into an `N x C x H x W` batch.
pub fn batch_tensor<T: Scalar>(samples: &[&Sample]) -> Result<Tensor<T>> {
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    Ok(Tensor::stack(&images)?.cast())
}

/// Trains on `train`, reporting accuracy on `val` after every epoch.
pub fn train_loop<T: Scalar>(
    network: &mut Network<T>,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
) -> Result<Metrics> {
    train_loop_with(network, train, val, cfg, |_| {})
}

/// [`train_loop`] with a callback invoked after each epoch.
pub fn train_loop_with<T: Scalar>(
    network: &mut Network<T>,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Metrics> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("training split is empty".into()));
    }
    let classes = network.num_classes();
    if let Some(s) = train.iter().chain(val).find(|s| s.label >= classes) {
        return Err(Error::Argument(format!(
            "{}: label {} but the model has {classes} classes",
            s.source, s.label
        )));
    }
    let mut log = match &cfg.log_path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
            w.write_all(cfg.log_header().as_bytes()).map_err(|e| Error::io(p, e))?;
            Some((p.clone(), w))
        }
        None => None,
    };

    let mut rng = SeededRng::new(cfg.seed);
    let mut sgd = Sgd::new(network, cfg.lr, cfg.momentum);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Metrics::default();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let x = batch_tensor::<T>(&batch)?;
            let cache = network.forward_cached(&x)?;
            let loss = softmax_xent_batch(cache.logits(), &labels)?;
            let mean = loss.mean.to_f64_lossy();
            if !mean.is_finite() {
                return Err(Error::Numeric(format!("loss became {mean} at epoch {epoch}, batch {}", b + 1)));
            }
            loss_sum += loss.losses.iter().map(|l| l.to_f64_lossy()).sum::<f64>();
            correct += metrics::argmax_rows(cache.logits())
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            let grads = network.backward(&cache, &loss.grad)?;
            sgd.step(network, &grads)?;
        }
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(evaluate(network, val)?.0)
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64 * 100.0,
            val_acc,
        };
        if let Some((p, w)) = log.as_mut() {
            writeln!(w, "{}", m.log_line())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p.as_path(), e))?;
        }
        if let (Some(k), Some(path)) = (cfg.checkpoint_every, &cfg.checkpoint_path) {
            if epoch % k == 0 {
                save_model_file(network, path)?;
            }
        }
        on_epoch(&m);
        metrics.epochs.push(m);
    }
    Ok(metrics)
}

/// Trains on the dataset's train split, validates on its val split and
/// fills in test accuracy from its test split (when present).
pub fn train_dataset<T: Scalar>(network: &mut Network<T>, dataset: &Dataset, cfg: &TrainConfig) -> Result<Metrics> {
    let mut m = train_loop(network, &dataset.split(Split::Train), &dataset.split(Split::Val), cfg)?;
    let test = dataset.split(Split::Test);
    if !test.is_empty() {
        m.test_acc = Some(evaluate(network, &test)?.0);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub stddev: f64,
}

/// N-fold cross-validation; fold `i` trains a fresh network seeded with
/// `cfg.seed + i` on the other folds and tests on fold `i`.
pub fn crossvalidate(model: &ModelConfig, dataset: &Dataset, folds: usize, cfg: &TrainConfig) -> Result<CrossValidation> {
    cfg.validate()?;
    let parts = kfold_partition(dataset, folds, cfg.seed)?;
    let mut results = Vec::with_capacity(folds);
    for (i, part) in parts.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        let mut net = Network::<f32>::build(model.clone(), &mut SeededRng::new(seed))?;
        let fold_cfg = TrainConfig {
            seed,
            log_path: None,
            checkpoint_every: None,
            checkpoint_path: None,
            ..cfg.clone()
        };
        let train = dataset.subset(&part.train);
        let test = dataset.subset(&part.test);
        let metrics = train_loop(&mut net, &train, &[], &fold_cfg)?;
        let (accuracy, confusion) = evaluate(&net, &test)?;
        results.push(FoldResult {
            fold: i,
            seed,
            metrics,
            accuracy,
            confusion,
            test_size: test.len(),
        });
    }
    let n = results.len() as f64;
    let mean = results.iter().map(|r| r.accuracy).sum::<f64>() / n;
    let var = results.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(CrossValidation {
        folds: results,
        mean,
        stddev: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_dataset, synth_dataset, SynthSpec};

    fn tiny_config(classes: usize) -> ModelConfig {
        format!(
            "input c=3 h=16 w=16\nconv name=Conv1 k=3 out=4 stride=2 act=relu\nexfeat name=ExFeat1\nadd name=Add1 skip=Conv1\nconv name=Conv2 k=3 out=4 stride=2 act=relu\nfc name=FC1 out=8 act=relu\nclassifier classes={classes}\n"
        )
        .parse()
        .unwrap()
    }

    fn tiny_data(per_class: usize, seed: u64) -> Dataset {
        synth_dataset(&SynthSpec::new(2, per_class, 16, seed)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { batch: 0, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
            TrainConfig { lr: f64::NAN, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Argument(_))));
        }
        assert!(TrainConfig::default().log_header().contains("lr=0.001 batch=35 epochs=200"));
    }

    #[test]
    fn empty_train_split_is_usage_error() {
        let mut net = Network::<f32>::build(tiny_config(2), &mut SeededRng::new(0)).unwrap();
        assert!(matches!(
            train_loop(&mut net, &[], &[], &TrainConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = tiny_data(4, 1);
        let samples: Vec<&Sample> = data.samples.iter().collect();
        let mut net = Network::<f32>::build(tiny_config(2), &mut SeededRng::new(3)).unwrap();
        let before = net.clone();
        let cfg = TrainConfig { lr: 0.0, epochs: 3, batch: 3, momentum: 0.5, ..Default::default() };
        train_loop(&mut net, &samples, &[], &cfg).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn same_seed_same_losses_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(5, 2);
        let samples: Vec<&Sample> = data.samples.iter().collect();
        let run = |name: &str| {
            let mut net = Network::<f32>::build(tiny_config(2), &mut SeededRng::new(4)).unwrap();
            let cfg = TrainConfig {
                lr: 0.01,
                batch: 4,
                epochs: 3,
                seed: 9,
                log_path: Some(dir.path().join(name)),
                ..Default::default()
            };
            let m = train_loop(&mut net, &samples, &samples[..2], &cfg).unwrap();
            (m, std::fs::read(dir.path().join(name)).unwrap(), net)
        };
        let (m1, log1, n1) = run("a.log");
        let (m2, log2, n2) = run("b.log");
        assert_eq!(m1, m2);
        assert_eq!(log1, log2);
        assert_eq!(n1, n2);
        let text = String::from_utf8(log1).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split('\t').count(), 4);
    }

    #[test]
    fn checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(3, 2);
        let samples: Vec<&Sample> = data.samples.iter().collect();
        let mut net = Network::<f32>::build(tiny_config(2), &mut SeededRng::new(4)).unwrap();
        let path = dir.path().join("ck.bin");
        let cfg = TrainConfig {
            epochs: 2,
            checkpoint_every: Some(2),
            checkpoint_path: Some(path.clone()),
            ..Default::default()
        };
        train_loop(&mut net, &samples, &[], &cfg).unwrap();
        let loaded = crate::model::load_model_file::<f32>(&path).unwrap();
        assert_eq!(loaded, net);
    }

    #[test]
    fn label_out_of_range() {
        let data = tiny_data(3, 2);
        let samples: Vec<&Sample> = data.samples.iter().collect();
        let mut net = Network::<f32>::build(tiny_config(2), &mut SeededRng::new(0)).unwrap();
        let mut bad = samples[0].clone();
        bad.label = 5;
        assert!(matches!(
            train_loop(&mut net, &[&bad], &[], &TrainConfig::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn crossvalidation_is_reproducible() {
        let data = tiny_data(4, 3);
        let cfg = TrainConfig { epochs: 2, batch: 4, lr: 0.01, seed: 5, ..Default::default() };
        let a = crossvalidate(&tiny_config(2), &data, 2, &cfg).unwrap();
        assert_eq!(a.folds.len(), 2);
        assert!(a.folds.iter().all(|f| f.test_size == 4 && f.confusion.total() == 4));
        assert_eq!(a.folds[1].seed, 6);
        assert_eq!(a, crossvalidate(&tiny_config(2), &data, 2, &cfg).unwrap());
        assert!(matches!(
            crossvalidate(&tiny_config(2), &data, 5, &cfg),
            Err(Error::Partition(_))
        ));
    }

    #[test]
    fn train_dataset_reports_test_accuracy() {
        let mut data = tiny_data(5, 3);
        split_dataset(&mut data, 0).unwrap();
        let mut net = Network::<f32>::build(tiny_config(2), &mut SeededRng::new(0)).unwrap();
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let m = train_dataset(&mut net, &data, &cfg).unwrap();
        assert!(m.test_acc.is_some());
        assert!(m.epochs[0].val_acc.is_some());
    }
}
