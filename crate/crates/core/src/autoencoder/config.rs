use serde::{Deserialize, Serialize};

use crate::digest::config_digest;
use crate::embedding::REPR_DIM;
use crate::error::{Error, Result};
use crate::tensor::{Activation, ConvSpec};

/// User-facing training settings; the layer stack is derived from these plus
/// the input shape by [`AEConfig::build`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeSettings {
    pub latent_dim: usize,
    /// Channels after encoder layers 1-3. `None` picks `C/2, C/4, C/8`, each at least 32.
    pub hidden_channels: Option<[usize; 3]>,
    pub stage1_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_epochs: usize,
    pub stage2_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for AeSettings {
    fn default() -> Self {
        Self {
            latent_dim: REPR_DIM,
            hidden_channels: None,
            stage1_epochs: 12,
            stage1_lr: 1e-3,
            stage2_epochs: 6,
            stage2_lr: 1e-4,
            batch_size: 128,
            momentum: 0.0,
        }
    }
}

pub const MIN_AUTO_HIDDEN: usize = 32;

/// Full, resolved autoencoder configuration. Its digest identifies checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AEConfig {
    /// Per-view input `[C, H, W]`; image features run each camera through separately.
    pub input_shape: [usize; 3],
    pub encoder_layers: Vec<ConvSpec>,
    pub decoder_layers: Vec<ConvSpec>,
    pub latent_dim: usize,
    pub stage1_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_epochs: usize,
    pub stage2_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

fn halve(n: usize) -> usize {
    n.div_ceil(2)
}

impl AEConfig {
    /// Four stride-2 convolutions down to `latent_dim x 1 x 1`, mirrored by four
    /// transposed convolutions whose output paddings restore the input exactly.
    pub fn build(input_shape: [usize; 3], settings: &AeSettings, seed: u64) -> Result<Self> {
        let [c, h, w] = input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("input shape {input_shape:?} has a zero dimension")));
        }
        if settings.latent_dim == 0 || settings.batch_size == 0 {
            return Err(Error::Config("latent_dim and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&settings.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", settings.momentum)));
        }
        for lr in [settings.stage1_lr, settings.stage2_lr] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("learning rate {lr} must be finite and non-negative")));
            }
        }
        let hidden = settings
            .hidden_channels
            .unwrap_or([c / 2, c / 4, c / 8].map(|k| k.max(MIN_AUTO_HIDDEN)));
        if hidden.contains(&0) {
            return Err(Error::Config("hidden channel counts must be positive".into()));
        }
        let hs = [h, halve(h), halve(halve(h)), halve(halve(halve(h)))];
        let ws = [w, halve(w), halve(halve(w)), halve(halve(halve(w)))];
        let chans = [c, hidden[0], hidden[1], hidden[2]];

        let mut encoder = Vec::with_capacity(4);
        for i in 0..3 {
            encoder.push(ConvSpec::conv(chans[i], chans[i + 1], 3, 2, 1).with_activation(Activation::Relu));
        }
        encoder.push(ConvSpec::conv(hidden[2], settings.latent_dim, 1, 1, 0).with_kernel(hs[3], ws[3]));

        let mut decoder = Vec::with_capacity(4);
        decoder.push(
            ConvSpec::deconv(settings.latent_dim, hidden[2], 1, 1, 0, 0)
                .with_kernel(hs[3], ws[3])
                .with_activation(Activation::Relu),
        );
        for i in (0..3).rev() {
            // a stride-2 pad-1 k3 deconv maps n to 2n - 1 + out_pad
            let op_h = hs[i] + 1 - 2 * hs[i + 1];
            let op_w = ws[i] + 1 - 2 * ws[i + 1];
            let act = if i == 0 { Activation::Identity } else { Activation::Relu };
            decoder.push(
                ConvSpec::deconv(chans[i + 1], chans[i], 3, 2, 1, 0)
                    .with_out_pad(op_h, op_w)
                    .with_activation(act),
            );
        }

        let config = Self {
            input_shape,
            encoder_layers: encoder,
            decoder_layers: decoder,
            latent_dim: settings.latent_dim,
            stage1_epochs: settings.stage1_epochs,
            stage1_lr: settings.stage1_lr,
            stage2_epochs: settings.stage2_epochs,
            stage2_lr: settings.stage2_lr,
            batch_size: settings.batch_size,
            momentum: settings.momentum,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Settings this config was built from, for rebuilding against another shape.
    pub fn settings(&self) -> AeSettings {
        AeSettings {
            latent_dim: self.latent_dim,
            hidden_channels: Some([
                self.encoder_layers[0].out_channels,
                self.encoder_layers[1].out_channels,
                self.encoder_layers[2].out_channels,
            ]),
            stage1_epochs: self.stage1_epochs,
            stage1_lr: self.stage1_lr,
            stage2_epochs: self.stage2_epochs,
            stage2_lr: self.stage2_lr,
            batch_size: self.batch_size,
            momentum: self.momentum,
        }
    }

    /// Checks that the encoder ends at `latent_dim x 1 x 1` and the decoder
    /// reproduces the input shape.
    pub fn validate(&self) -> Result<()> {
        if self.encoder_layers.len() != 4 || self.decoder_layers.len() != 4 {
            return Err(Error::Config("expected four encoder and four decoder layers".into()));
        }
        let mut shape = self.input_shape;
        for spec in &self.encoder_layers {
            spec.validate()?;
            shape = spec.output_shape(&shape)?;
        }
        if shape != [self.latent_dim, 1, 1] {
            return Err(Error::shape("encoder output", &[self.latent_dim, 1, 1], &shape));
        }
        for spec in &self.decoder_layers {
            spec.validate()?;
            shape = spec.output_shape(&shape)?;
        }
        if shape != self.input_shape {
            return Err(Error::shape("decoder output", &self.input_shape, &shape));
        }
        Ok(())
    }

    pub fn digest(&self) -> u64 {
        config_digest(self)
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvSpec> {
        self.encoder_layers.iter().chain(&self.decoder_layers)
    }
}
