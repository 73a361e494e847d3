//! Grayscale renderings of captured feature maps.

use std::path::{Path, PathBuf};

use super::network::FeatureCapture;
use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One image per channel of batch item 0, each linearly mapped from its own
/// `[min, max]` to `[0, 255]`. Constant channels become all-zero images.
pub fn dump_feature_maps<T: Scalar>(captures: &FeatureCapture<T>, layer: &str) -> Result<Vec<GrayImage>> {
    let t = captures.get(layer).ok_or_else(|| Error::Lookup {
        name: layer.to_string(),
        valid: captures.keys().cloned().collect::<Vec<_>>().join(", "),
    })?;
    let (_, c, h, w) = t.shape().as_nchw();
    let plane = h * w;
    let item = t.item(0);
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> = item[ch * plane..(ch + 1) * plane].iter().map(|v| v.to_f64_lossy()).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            let pixels = vals
                .iter()
                .map(|&v| {
                    if span > 0.0 && span.is_finite() {
                        ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                    } else {
                        0
                    }
                })
                .collect();
            GrayImage::new(w, h, pixels)
        })
        .collect()
}

/// Writes `<layer>_<channel>.pgm` files under `dir`, returning their paths.
pub fn write_feature_maps<T: Scalar>(captures: &FeatureCapture<T>, layer: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let images = dump_feature_maps(captures, layer)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    images
        .iter()
        .enumerate()
        .map(|(ch, img)| {
            let path = dir.join(format!("{layer}_{ch}.pgm"));
            img.write(&path)?;
            Ok(path)
        })
        .collect()
}
