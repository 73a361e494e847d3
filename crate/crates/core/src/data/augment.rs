use rayon::prelude::*;

use super::dataset::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Random rotations (and optional translations) applied to training images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    /// Rotation range in degrees, drawn uniformly.
    pub lo: f64,
    pub hi: f64,
    pub copies: usize,
    pub seed: u64,
    /// Also shift by up to 10 % of width/height.
    pub translate: bool,
}

impl AugmentSpec {
    pub fn new(copies: usize, seed: u64) -> Self {
        AugmentSpec {
            lo: -30.0,
            hi: 30.0,
            copies,
            seed,
            translate: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo <= self.hi) || self.lo < -180.0 || self.hi > 180.0 {
            return Err(Error::Argument(format!(
                "rotation range [{}, {}] must satisfy -180 <= lo <= hi <= 180",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-12 {
        r
    } else {
        v
    }
}

fn rotate_shift(image: &Tensor<f32>, angle: f64, dx: f64, dy: f64) -> Result<Tensor<f32>> {
    if !(angle.abs() <= 180.0) {
        return Err(Error::Argument(format!("rotation angle {angle} outside [-180, 180]")));
    }
    if angle == 0.0 && dx == 0.0 && dy == 0.0 {
        return Ok(image.clone());
    }
    let (_, c, h, w) = image.shape().as_nchw();
    let (sin, cos) = angle.to_radians().sin_cos();
    let (sin, cos) = (snap(sin), snap(cos));
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = image.data();
    let mut out = vec![0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = x as f64 - cx - dx;
            let py = y as f64 - cy - dy;
            let sx = cx + px * cos - py * sin;
            let sy = cy + px * sin + py * cos;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let mut acc = 0.0f64;
                for &(tx, ty, wt) in &taps {
                    if wt != 0.0 && tx >= 0.0 && ty >= 0.0 && tx < w as f64 && ty < h as f64 {
                        acc += wt * plane[ty as usize * w + tx as usize] as f64;
                    }
                }
                out[(ch * h + y) * w + x] = acc as f32;
            }
        }
    }
    Tensor::from_vec(image.dims(), out)
}

/// Rotates a `C x H x W` image counter-clockwise (as displayed, rows top
/// to bottom) by `angle` degrees about its centre, bilinear, zero fill.
pub fn rotate_image(image: &Tensor<f32>, angle: f64) -> Result<Tensor<f32>> {
    rotate_shift(image, angle, 0.0, 0.0)
}

pub fn rotate_augment(sample: &Sample, angle: f64) -> Result<Sample> {
    Ok(Sample {
        image: rotate_image(&sample.image, angle)?,
        label: sample.label,
        source: sample.source.clone(),
    })
}

/// Appends `copies` augmented versions of every training-split sample
/// (tagged `Train`). Angles are drawn sequentially from the seed, so the
/// result does not depend on the thread count.
pub fn augment_dataset(dataset: &Dataset, spec: &AugmentSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let mut jobs = Vec::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        if dataset.splits[i] != Split::Train {
            continue;
        }
        let (_, _, h, w) = s.image.shape().as_nchw();
        for k in 0..spec.copies {
            let angle = rng.uniform_range(spec.lo, spec.hi);
            let (dx, dy) = if spec.translate {
                (
                    rng.uniform_range(-0.1, 0.1) * w as f64,
                    rng.uniform_range(-0.1, 0.1) * h as f64,
                )
            } else {
                (0.0, 0.0)
            };
            jobs.push((i, k, angle, dx, dy));
        }
    }
    let extra: Vec<Sample> = jobs
        .par_iter()
        .map(|&(i, k, angle, dx, dy)| {
            let s = &dataset.samples[i];
            Ok(Sample {
                image: rotate_shift(&s.image, angle, dx, dy)?,
                label: s.label,
                source: format!("{}#aug{k}", s.source),
            })
        })
        .collect::<Result<_>>()?;
    let mut out = dataset.clone();
    out.splits.extend(std::iter::repeat_n(Split::Train, extra.len()));
    out.samples.extend(extra);
    Ok(out)
}
