//! Oriented sinusoidal gratings: class `c` of `K` has its stripes at
//! `c * 180 / K` degrees.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;

use super::dataset::{Dataset, Sample};
use super::netpbm::GrayImage;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Square image side in pixels.
    pub size: usize,
    pub seed: u64,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(classes: usize, per_class: usize, size: usize, seed: u64) -> Self {
        SynthSpec {
            classes,
            per_class,
            size,
            seed,
            noise: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Argument(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.size < 16 {
            return Err(Error::Argument(format!("image size must be at least 16, got {}", self.size)));
        }
        if self.per_class == 0 {
            return Err(Error::Argument("per-class count must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Argument(format!("invalid noise level {}", self.noise)));
        }
        Ok(())
    }

    pub fn orientation(&self, class: usize) -> f64 {
        class as f64 * 180.0 / self.classes as f64
    }

    pub fn class_name(&self, class: usize) -> String {
        format!("c{class:02}_{:03}", self.orientation(class).round() as usize)
    }

    fn file_name(&self, index: usize) -> String {
        let width = self.per_class.saturating_sub(1).to_string().len().max(4);
        format!("img_{index:0width$}.pgm")
    }
}

fn grating(spec: &SynthSpec, class: usize, rng: &mut SeededRng) -> GrayImage {
    let s = spec.size;
    let theta = spec.orientation(class).to_radians();
    let (sin, cos) = theta.sin_cos();
    let omega = 2.0 * PI / (s as f64 / 4.0);
    let phase = rng.uniform_range(0.0, FRAC_PI_2);
    let c = (s as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let u = (x as f64 - c) * cos + (y as f64 - c) * sin;
            let mut v = 0.5 + 0.5 * (omega * u + phase).sin();
            if spec.noise > 0.0 {
                v += spec.noise * rng.normal();
            }
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    GrayImage::new(s, s, pixels).expect("square image")
}

/// `(class, image)` pairs in class-major order.
pub fn synth_images(spec: &SynthSpec) -> Result<Vec<(usize, GrayImage)>> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let mut out = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        for _ in 0..spec.per_class {
            out.push((class, grating(spec, class, &mut rng)));
        }
    }
    Ok(out)
}

/// The in-memory dataset that [`write_synth`] followed by ingestion yields.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    let images = synth_images(spec)?;
    let mut samples = Vec::with_capacity(images.len());
    for (i, (class, img)) in images.into_iter().enumerate() {
        samples.push(Sample {
            image: img.to_tensor(),
            label: class,
            source: format!("{}/{}", spec.class_name(class), spec.file_name(i % spec.per_class)),
        });
    }
    Dataset::new(samples, (0..spec.classes).map(|c| spec.class_name(c)).collect())
}

/// Writes `out/<class>/img_NNNN.pgm`; returns the number of files.
pub fn write_synth(spec: &SynthSpec, out: &Path) -> Result<usize> {
    let images = synth_images(spec)?;
    for class in 0..spec.classes {
        let dir = out.join(spec.class_name(class));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, (class, img)) in images.iter().enumerate() {
        img.write(&out.join(spec.class_name(*class)).join(spec.file_name(i % spec.per_class)))?;
    }
    Ok(images.len())
}
