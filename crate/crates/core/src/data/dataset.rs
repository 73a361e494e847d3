use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::netpbm::{read_netpbm, resize_nearest};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// One labelled image, `C x H x W` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split `{other}`"))),
        }
    }
}

/// Labelled samples with a split tag each (everything starts as `Train`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>) -> Result<Self> {
        let mut names = class_names.clone();
        names.sort();
        names.dedup();
        if names.len() != class_names.len() {
            return Err(Error::Ingestion("class names are not unique".into()));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= class_names.len()) {
            return Err(Error::Ingestion(format!(
                "{}: label {} out of range for {} classes",
                s.source,
                s.label,
                class_names.len()
            )));
        }
        let splits = vec![Split::Train; samples.len()];
        Ok(Dataset {
            samples,
            class_names,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, which: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == which)
            .map(|(x, _)| x)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&Sample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }

    /// Sample indices grouped by class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes()];
        for (i, s) in self.samples.iter().enumerate() {
            by[s.label].push(i);
        }
        by
    }

    /// `<source>\t<class>\t<split>` per sample.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (s, tag) in self.samples.iter().zip(&self.splits) {
            out.push_str(&format!("{}\t{}\t{}\n", s.source, self.class_names[s.label], tag));
        }
        out
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        fs::write(path, self.manifest()).map_err(|e| Error::io(path, e))
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

fn is_netpbm(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("pgm" | "ppm")
    )
}

/// Reads `root/<class>/*.pgm|*.ppm`. Classes are the sorted subdirectory
/// names; images are resized (nearest neighbour) to `size = (H, W)` when
/// given.
pub fn ingest_dataset(root: &Path, size: Option<(usize, usize)>) -> Result<Dataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Ingestion(format!("{}: no class subdirectories", root.display())));
    }
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut files = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let images: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| is_netpbm(p)).collect();
        if images.is_empty() {
            return Err(Error::Ingestion(format!("class directory {} has no images", dir.display())));
        }
        files.extend(images.into_iter().map(|p| (label, p)));
        class_names.push(name);
    }
    let decoded: Vec<Result<Sample>> = files
        .par_iter()
        .map(|(label, path)| {
            let mut image = read_netpbm(path)?;
            if let Some((h, w)) = size {
                image = resize_nearest(&image, h, w)?;
            }
            let source = path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned();
            Ok(Sample {
                image,
                label: *label,
                source,
            })
        })
        .collect();
    let mut samples = Vec::with_capacity(decoded.len());
    let mut failures = Vec::new();
    for r in decoded {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Ingestion(format!(
            "{} undecodable file(s):\n  {}",
            failures.len(),
            failures.join("\n  ")
        )));
    }
    Dataset::new(samples, class_names)
}

/// `round(n * pct / 100)` with halves rounded up, in integers.
fn round_half_up_pct(n: usize, pct: usize) -> usize {
    (n * pct * 2 + 100) / 200
}

/// Per-class counts `(test, val, train)`: 20 % test, then 30 % of the rest
/// for validation.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let test = round_half_up_pct(n, 20);
    let rest = n - test;
    let val = round_half_up_pct(rest, 30);
    (test, val, rest - val)
}

/// Stratified, seeded 80:20 train/test split with a further 70:30
/// train/validation split of the training part.
pub fn split_dataset(dataset: &mut Dataset, seed: u64) -> Result<()> {
    let mut rng = SeededRng::new(seed);
    for (class, mut idx) in dataset.indices_by_class().into_iter().enumerate() {
        if idx.len() < 3 {
            return Err(Error::Split(format!(
                "class `{}` has {} samples; at least 3 are needed",
                dataset.class_names[class],
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let (test, val, _) = split_counts(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            dataset.splits[i] = if k < test {
                Split::Test
            } else if k < test + val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    Ok(())
}

/// Train/test index lists of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified N-fold partition. Within each class, fold sizes differ by at
/// most one; remainders are dealt round-robin continuing across classes so
/// overall fold sizes stay balanced too.
pub fn kfold_partition(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(Error::Partition(format!("need at least 2 folds, got {folds}")));
    }
    let by_class = dataset.indices_by_class();
    if let Some((c, idx)) = by_class.iter().enumerate().find(|(_, v)| v.len() < folds) {
        return Err(Error::Partition(format!(
            "class `{}` has {} samples, fewer than {folds} folds",
            dataset.class_names[c],
            idx.len()
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut fold_of = vec![0usize; dataset.len()];
    let mut next = 0usize;
    for mut idx in by_class {
        rng.shuffle(&mut idx);
        for i in idx {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    Ok((0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| fold_of[i] == f);
            Fold { train, test }
        })
        .collect())
}
