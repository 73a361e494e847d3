//! Binary model files.
//!
//! Layout: magic `XPNM0001`, version (u32 LE), config text (u32 LE length +
//! UTF-8), precision tag (u8: 32 or 64), then every parameter tensor in
//! declaration order as a raw tensor dump.

use std::path::Path;

use super::config::ModelConfig;
use super::network::Network;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::{ByteReader, Tensor};

pub const MODEL_MAGIC: &[u8; 8] = b"XPNM0001";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model<T: Scalar>(network: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let text = network.config().to_string();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.push(T::PRECISION_TAG);
    for p in network.params() {
        p.write_dump(&mut out);
    }
    out
}

pub fn load_model<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let mut cur = ByteReader::new(bytes);
    let magic = cur.take(8)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!(
            "not a model file (magic {:?})",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let len = cur.u32()? as usize;
    let text = std::str::from_utf8(cur.take(len)?)
        .map_err(|e| Error::Format(format!("config block is not UTF-8: {e}")))?;
    let config: ModelConfig = text
        .parse()
        .map_err(|e| Error::Format(format!("embedded config: {e}")))?;
    let tag = cur.u8()?;
    if tag != T::PRECISION_TAG {
        return Err(Error::Format(format!(
            "model stored in {tag}-bit precision, loading as {}-bit",
            T::PRECISION_TAG
        )));
    }
    // Shapes come from the config; values are overwritten below.
    let mut network = Network::<T>::build(config, &mut SeededRng::new(0))?;
    let mut values = Vec::with_capacity(network.params().len());
    for _ in 0..network.params().len() {
        let (t, used) = Tensor::<T>::read_dump(cur.rest())?;
        cur.take(used)?;
        values.push(t);
    }
    if !cur.rest().is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after parameters", cur.rest().len())));
    }
    network.set_params(values)?;
    Ok(network)
}

pub fn save_model_file<T: Scalar>(network: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, save_model(network)).map_err(|e| Error::io(path, e))
}

pub fn load_model_file<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model(&bytes)
}
