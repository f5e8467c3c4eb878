//! `GNVAE1` checkpoint container.
//!
//! Layout (little-endian):
//! ```text
//! "GNVAE1"            6 bytes
//! latent_dim          u32
//! layer_count         u32
//! encoder_depth       u32   hidden encoder layers before the two heads
//! layer × layer_count out_dim u32, in_dim u32, weights f64[out·in], bias f64[out]
//! ```
//! Layers are stored encoder hidden layers, mu head, logvar head, decoder.

use std::path::Path;

use crate::codec::{put_affine, put_u32, read_file, write_atomic, ByteReader};
use crate::error::Result;
use crate::scalar::Scalar;

use super::VaeModel;

pub const VAE_MAGIC: &[u8; 6] = b"GNVAE1";

pub fn encode_vae<T: Scalar>(model: &VaeModel<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + model.param_count() * 8 + 8 * 16);
    buf.extend_from_slice(VAE_MAGIC);
    put_u32(&mut buf, model.latent_dim() as u32);
    put_u32(&mut buf, model.layers().count() as u32);
    put_u32(&mut buf, model.encoder_layers().len() as u32);
    for layer in model.layers() {
        put_affine(&mut buf, layer);
    }
    buf
}

pub fn decode_vae<T: Scalar>(bytes: &[u8]) -> Result<VaeModel<T>> {
    let mut r = ByteReader::new(bytes, "VAE checkpoint");
    r.expect_magic(VAE_MAGIC)?;
    let latent_dim = r.u32_le()? as usize;
    let layer_count = r.u32_le()? as usize;
    let encoder_depth = r.u32_le()? as usize;
    if layer_count < encoder_depth.saturating_add(3) {
        return Err(r.error(format!(
            "layer count {layer_count} too small for encoder depth {encoder_depth}"
        )));
    }
    // every layer needs at least its 8-byte header
    if layer_count.saturating_mul(8) > r.remaining() {
        return Err(r.error(format!("truncated: {layer_count} layers declared")));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        layers.push(r.affine()?);
    }
    r.finish()?;
    let decoder = layers.split_off(encoder_depth + 2);
    let logvar = layers.pop().unwrap();
    let mu = layers.pop().unwrap();
    let model = VaeModel::from_layers(layers, mu, logvar, decoder)?;
    if model.latent_dim() != latent_dim {
        return Err(r.error(format!(
            "header latent_dim {latent_dim} disagrees with head width {}",
            model.latent_dim()
        )));
    }
    Ok(model)
}

pub fn save_vae<T: Scalar>(model: &VaeModel<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_vae(model))
}

pub fn load_vae<T: Scalar>(path: &Path) -> Result<VaeModel<T>> {
    decode_vae(&read_file(path)?)
}
