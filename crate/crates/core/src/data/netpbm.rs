//! Binary PGM (P5) and PPM (P6) images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Format(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    /// P5 encoding with maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    /// `1 x H x W` in `[0, 1]` replicated to three channels.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let plane: Vec<f32> = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        let mut data = Vec::with_capacity(plane.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Tensor::from_vec(&[3, self.height, self.width], data).expect("consistent dims")
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::Format("truncated netpbm header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" && &magic != b"P6" {
        return Err(Error::Format(format!(
            "unsupported netpbm magic {:?} (need P5 or P6)",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated netpbm header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("expected a number in header at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("header number out of range".into()))?;
    }
    // exactly one whitespace byte before the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("degenerate image size {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos,
    })
}

/// Decodes P5/P6 to a `3 x H x W` tensor scaled to `[0, 1]`; grayscale is
/// replicated across the three channels.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = parse_header(bytes)?;
    let channels = if &h.magic == b"P5" { 1 } else { 3 };
    let sample_bytes = if h.maxval > 255 { 2 } else { 1 };
    let plane = h.width * h.height;
    let need = plane * channels * sample_bytes;
    let raster = &bytes[h.data_start..];
    if raster.len() < need {
        return Err(Error::Format(format!(
            "truncated raster: need {need} bytes, have {}",
            raster.len()
        )));
    }
    let maxval = h.maxval as f32;
    let sample = |i: usize| -> f32 {
        let v = if sample_bytes == 2 {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
        } else {
            raster[i] as usize
        };
        v.min(h.maxval) as f32 / maxval
    };
    let mut data = vec![0f32; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            let src = if channels == 1 { p } else { p * 3 + c };
            data[c * plane + p] = sample(src);
        }
    }
    Tensor::from_vec(&[3, h.height, h.width], data)
}

/// Encodes a `C x H x W` (or `N x C x H x W`, first item) tensor in `[0, 1]`
/// as P5 (one channel) or P6 (three channels), maxval 255.
pub fn encode_netpbm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (_, c, h, w) = image.shape().as_nchw();
    let plane = h * w;
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let d = image.data();
    match c {
        1 => {
            let pixels = d[..plane].iter().map(|&v| q(v)).collect();
            Ok(GrayImage::new(w, h, pixels)?.to_pgm())
        }
        3 => {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            for p in 0..plane {
                for ch in 0..3 {
                    out.push(q(d[ch * plane + p]));
                }
            }
            Ok(out)
        }
        _ => Err(Error::Format(format!("cannot encode {c} channels as netpbm"))),
    }
}

pub fn read_netpbm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Nearest-neighbour resize of a `C x H x W` image.
pub fn resize_nearest(image: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    let (_, c, h, w) = image.shape().as_nchw();
    if h == height && w == width {
        return Ok(image.clone());
    }
    let src = image.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for y in 0..height {
            // source pixel whose centre is nearest: floor((y + 0.5) * h / height)
            let sy = ((2 * y + 1) * h / (2 * height)).min(h - 1);
            for x in 0..width {
                let sx = ((2 * x + 1) * w / (2 * width)).min(w - 1);
                out.push(src[(ch * h + sy) * w + sx]);
            }
        }
    }
    Tensor::from_vec(&[c, height, width], out)
}
