//! Autoencoder parameters, Glorot initialization and the binary checkpoint.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "AECK"  u16 version  u64 config_digest  u32 blob_count
//! blob_count x { u64 len, len x f64 }
//! ```
//!
//! Blobs are each layer's weight then bias, encoder layers first, in declaration order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::AEConfig;
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AECK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros(spec: &ConvSpec) -> Self {
        Self {
            weight: Tensor::zeros(&spec.weight_shape()),
            bias: Tensor::zeros(&[spec.out_channels]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AEParams {
    pub encoder: Vec<LayerParams>,
    pub decoder: Vec<LayerParams>,
}

impl AEParams {
    pub fn zeros(config: &AEConfig) -> Self {
        Self {
            encoder: config.encoder_layers.iter().map(LayerParams::zeros).collect(),
            decoder: config.decoder_layers.iter().map(LayerParams::zeros).collect(),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.encoder.iter_mut().chain(&mut self.decoder)
    }

    /// Weight and bias tensors in checkpoint order.
    pub fn blobs(&self) -> impl Iterator<Item = &Tensor> {
        self.layers().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn blobs_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.blobs().map(Tensor::len).sum()
    }

    /// Flattened copy of every parameter in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blobs().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut offset = 0;
        for t in self.blobs_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blobs().all(Tensor::is_finite)
    }

    pub fn check_shapes(&self, config: &AEConfig) -> Result<()> {
        if self.encoder.len() != config.encoder_layers.len() || self.decoder.len() != config.decoder_layers.len() {
            return Err(Error::Config("parameter layer count does not match config".into()));
        }
        for (p, spec) in self.layers().zip(config.layers()) {
            p.weight.expect_shape("layer weight", &spec.weight_shape())?;
            p.bias.expect_shape("layer bias", &[spec.out_channels])?;
        }
        Ok(())
    }
}

/// Uniform(-a, a) weights with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params(config: &AEConfig) -> Result<AEParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = AEParams::zeros(config);
    for (p, spec) in params.layers_mut().zip(config.layers()) {
        let receptive = spec.kernel_h * spec.kernel_w;
        let fan_in = spec.in_channels * receptive;
        let fan_out = spec.out_channels * receptive;
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        p.weight.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-a..a));
    }
    Ok(params)
}

pub fn checkpoint_bytes(config: &AEConfig, params: &AEParams) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let mut buf = Vec::with_capacity(18 + params.num_params() * 8 + 16 * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&config.digest().to_le_bytes());
    let count = params.blobs().count() as u32;
    buf.extend_from_slice(&count.to_le_bytes());
    for blob in params.blobs() {
        buf.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        for v in blob.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_checkpoint(path: impl AsRef<Path>, config: &AEConfig, params: &AEParams) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(config, params)?;
    let mut f = fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(&bytes).map_err(Error::io(path))
}

/// Reads the digest stored in a checkpoint header.
pub fn checkpoint_digest(bytes: &[u8], path: &Path) -> Result<u64> {
    let bad = |m: &str| Error::Format {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    if bytes.len() < 18 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic, expected AECK"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    Ok(u64::from_le_bytes(bytes[6..14].try_into().unwrap()))
}

/// Loads a checkpoint, refusing it unless its digest matches `config`.
pub fn read_checkpoint(path: impl AsRef<Path>, config: &AEConfig) -> Result<AEParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let bad = |m: String| Error::Format {
        path: path.to_path_buf(),
        message: m,
    };
    let digest = checkpoint_digest(&bytes, path)?;
    if digest != config.digest() {
        return Err(Error::DigestMismatch {
            checkpoint: digest,
            current: config.digest(),
        });
    }
    let mut params = AEParams::zeros(config);
    let count = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    if count != params.blobs().count() {
        return Err(bad(format!("expected {} blobs, found {count}", params.blobs().count())));
    }
    let mut pos = 18;
    for blob in params.blobs_mut() {
        if pos + 8 > bytes.len() {
            return Err(bad("truncated blob header".into()));
        }
        let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if len != blob.len() {
            return Err(bad(format!("blob of length {len}, expected {}", blob.len())));
        }
        let end = pos + len * 8;
        if end > bytes.len() {
            return Err(bad("truncated blob".into()));
        }
        for (v, chunk) in blob.data_mut().iter_mut().zip(bytes[pos..end].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        pos = end;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite(format!("parameters in {}", path.display())));
    }
    Ok(params)
}
