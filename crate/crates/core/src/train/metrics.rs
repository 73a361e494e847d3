use std::fmt;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::batch_tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    /// Accuracy (%) of the in-epoch predictions, before each update.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

impl EpochMetrics {
    /// `epoch\ttrain_loss\ttrain_acc\tval_acc`; `-` when there is no
    /// validation split.
    pub fn log_line(&self) -> String {
        let val = self.val_acc.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        format!("{}\t{:.8}\t{:.2}\t{}", self.epoch, self.train_loss, self.train_acc, val)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub epochs: Vec<EpochMetrics>,
    pub test_acc: Option<f64>,
}

impl Metrics {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row_sum(&self, truth: usize) -> usize {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Correct predictions over all predictions, in percent.
    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64 * 100.0
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.counts.iter().max().copied().unwrap_or(0).to_string().len().max(4);
        write!(f, "{:>9}", "true\\pred")?;
        for c in 0..self.classes {
            write!(f, " {c:>width$}")?;
        }
        writeln!(f)?;
        for t in 0..self.classes {
            write!(f, "{t:>9}")?;
            for p in 0..self.classes {
                write!(f, " {:>width$}", self.get(t, p))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Row-wise argmax of a `batch x classes` tensor; ties go to the lowest
/// index.
pub(crate) fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = logits.dims()[1];
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

const EVAL_BATCH: usize = 64;

pub fn predict<T: Scalar>(network: &Network<T>, samples: &[&Sample]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let (logits, _) = network.forward(&batch_tensor::<T>(chunk)?, &[])?;
        out.extend(argmax_rows(&logits));
    }
    Ok(out)
}

/// Accuracy in percent and the confusion matrix.
pub fn evaluate<T: Scalar>(network: &Network<T>, samples: &[&Sample]) -> Result<(f64, ConfusionMatrix)> {
    if samples.is_empty() {
        return Err(Error::Usage("no samples to evaluate".into()));
    }
    let classes = network.num_classes();
    if let Some(s) = samples.iter().find(|s| s.label >= classes) {
        return Err(Error::Argument(format!(
            "{}: label {} but the model has {classes} classes",
            s.source, s.label
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (s, p) in samples.iter().zip(predict(network, samples)?) {
        cm.record(s.label, p);
    }
    Ok((cm.accuracy(), cm))
}

/// Trailing moving average; entry `i` averages `values[i + 1 - window..=i]`
/// (shorter windows at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Relative increases `(a[i] - a[i-1]) / a[i-1]` of a sequence, for every
/// step that goes up.
pub fn trend_violations(values: &[f64]) -> Vec<(usize, f64)> {
    values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0])
        .map(|(i, w)| (i + 1, (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE)))
        .collect()
}
