//! Forward and backward passes of the autoencoder for one sample.

use super::config::AEConfig;
use super::params::{AEParams, LayerParams};
use crate::embedding::{EmbeddingSource, Representation, Space};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_forward, cosine_sim_with_grad, deconv2d_backward, deconv2d_forward, mse_loss,
    ConvSpec, Tensor,
};

/// Model name recorded on encoder-produced representations.
pub const ENCODER_MODEL_NAME: &str = "alignment-autoencoder";

fn layer_forward(x: &Tensor, spec: &ConvSpec, p: &LayerParams) -> Result<Tensor> {
    if spec.transposed {
        deconv2d_forward(x, spec, &p.weight, &p.bias)
    } else {
        conv2d_forward(x, spec, &p.weight, &p.bias)
    }
}

/// Returns the gradient wrt the layer input and accumulates parameter grads.
fn layer_backward(
    x: &Tensor,
    spec: &ConvSpec,
    p: &LayerParams,
    y: &Tensor,
    grad_out: &Tensor,
    acc: &mut LayerParams,
) -> Result<Tensor> {
    let g = if spec.transposed {
        deconv2d_backward(x, spec, &p.weight, y, grad_out)?
    } else {
        conv2d_backward(x, spec, &p.weight, y, grad_out)?
    };
    acc.weight.axpy(1.0, &g.grad_w)?;
    acc.bias.axpy(1.0, &g.grad_b)?;
    Ok(g.grad_x)
}

/// Activations of one view: `acts[0]` is the input, `acts[4]` the latent,
/// `acts[8]` the reconstruction.
struct Trace {
    acts: Vec<Tensor>,
}

fn forward_view(config: &AEConfig, params: &AEParams, x: &Tensor) -> Result<Trace> {
    let mut acts = Vec::with_capacity(9);
    acts.push(x.clone());
    for (spec, p) in config.layers().zip(params.layers()) {
        let y = layer_forward(acts.last().unwrap(), spec, p)?;
        acts.push(y);
    }
    Ok(Trace { acts })
}

/// Backpropagates a reconstruction gradient plus an optional direct latent
/// gradient through one view.
fn backward_view(
    config: &AEConfig,
    params: &AEParams,
    trace: &Trace,
    grad_recon: &Tensor,
    grad_latent: Option<&[f64]>,
    grads: &mut AEParams,
) -> Result<()> {
    let specs: Vec<&ConvSpec> = config.layers().collect();
    let layer_params: Vec<&LayerParams> = params.layers().collect();
    let mut acc: Vec<&mut LayerParams> = grads.layers_mut().collect();
    let mut g = grad_recon.clone();
    for i in (0..8).rev() {
        if i == 3 {
            if let Some(gl) = grad_latent {
                for (a, b) in g.data_mut().iter_mut().zip(gl) {
                    *a += b;
                }
            }
        }
        g = layer_backward(&trace.acts[i], specs[i], layer_params[i], &trace.acts[i + 1], &g, acc[i])?;
    }
    Ok(())
}

/// Splits a sample into per-view `[C, H, W]` tensors.
pub fn views(config: &AEConfig, sample: &Tensor) -> Result<Vec<Tensor>> {
    let shape = sample.shape();
    match shape.len() {
        3 if shape == config.input_shape => Ok(vec![sample.clone()]),
        4 if shape[1..] == config.input_shape => Ok(sample.unstack()),
        _ => {
            let [c, h, w] = config.input_shape;
            Err(Error::shape("autoencoder input ([C,H,W] or [Cam,C,H,W])", &[c, h, w], shape))
        }
    }
}

/// Encodes every view of a sample; returns `[views, latent_dim]`.
pub fn encode_tensor(config: &AEConfig, params: &AEParams, sample: &Tensor) -> Result<Tensor> {
    let mut rows = Vec::new();
    let mut count = 0;
    for v in views(config, sample)? {
        let mut h = v;
        for (spec, p) in config.encoder_layers.iter().zip(&params.encoder) {
            h = layer_forward(&h, spec, p)?;
        }
        rows.extend_from_slice(h.data());
        count += 1;
    }
    Tensor::new(vec![count, config.latent_dim], rows)
}

/// Encodes a feature map into a representation. 3d features give one row,
/// image features one row per camera.
pub fn encode(
    config: &AEConfig,
    params: &AEParams,
    sample_id: &str,
    space: Space,
    sample: &Tensor,
) -> Result<Representation> {
    let expected_rank = match space {
        Space::Bev => 3,
        Space::Image => 4,
    };
    if sample.shape().len() != expected_rank {
        return Err(Error::shape(
            format!("{space} feature map {sample_id}"),
            &config.input_shape,
            sample.shape(),
        ));
    }
    let latents = encode_tensor(config, params, sample)?;
    Representation::new(sample_id, space, EmbeddingSource::Encoder, ENCODER_MODEL_NAME, latents)
}

/// Decodes `[latent_dim]` or `[views, latent_dim]` latents back to feature shape.
pub fn decode(config: &AEConfig, params: &AEParams, latent: &Tensor) -> Result<Tensor> {
    let d = config.latent_dim;
    let (rows, stacked) = match latent.shape() {
        [n] if *n == d => (1, false),
        [k, n] if *n == d => (*k, true),
        other => return Err(Error::shape("latent", &[d], other)),
    };
    let mut outs = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut h = Tensor::new(vec![d, 1, 1], latent.data()[r * d..(r + 1) * d].to_vec())?;
        for (spec, p) in config.decoder_layers.iter().zip(&params.decoder) {
            h = layer_forward(&h, spec, p)?;
        }
        outs.push(h);
    }
    if stacked {
        Tensor::stack(&outs)
    } else {
        Ok(outs.pop().unwrap())
    }
}

/// Per-sample loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleLoss {
    pub recon: f64,
    /// `1 - S`, present when a GT representation was supplied.
    pub align: Option<f64>,
}

impl SampleLoss {
    pub fn total(&self) -> f64 {
        self.recon + self.align.unwrap_or(0.0)
    }
}

/// Loss of one sample and its parameter gradient, accumulated into `grads`.
///
/// The reconstruction term is the MSE over the whole sample (all cameras). The
/// alignment term is `1 - mean_c cos(z_c, r_c)` over camera rows; it reaches
/// only encoder parameters.
pub fn sample_loss_and_grad(
    config: &AEConfig,
    params: &AEParams,
    sample_id: &str,
    sample: &Tensor,
    gt: Option<&Representation>,
    grads: &mut AEParams,
) -> Result<SampleLoss> {
    let views = views(config, sample)?;
    let n_views = views.len();
    if let Some(gt) = gt {
        if gt.rows() != n_views || gt.dim() != config.latent_dim {
            return Err(Error::shape(
                format!("GT representation of {sample_id}"),
                &[n_views, config.latent_dim],
                gt.vectors().shape(),
            ));
        }
    }
    let total_elems = sample.len() as f64;
    let mut recon = 0.0;
    let mut sim_sum = 0.0;
    for (c, x) in views.iter().enumerate() {
        let trace = forward_view(config, params, x)?;
        let (mse, mut g_recon) = mse_loss(x, &trace.acts[8])?;
        // rescale the per-view MSE so the sum over views is the MSE over the whole sample
        let w = x.len() as f64 / total_elems;
        recon += w * mse;
        g_recon.scale(w);

        let g_latent = match gt {
            Some(gt) => {
                let z = trace.acts[4].data();
                let (cos, mut g) = cosine_sim_with_grad(z, gt.row(c)).map_err(|e| match e {
                    Error::DegenerateVector { norm, eps, .. } => Error::DegenerateVector {
                        context: format!("latent of sample {sample_id}, camera {c}"),
                        norm,
                        eps,
                    },
                    other => other,
                })?;
                sim_sum += cos;
                g.iter_mut().for_each(|v| *v *= -1.0 / n_views as f64);
                Some(g)
            }
            None => None,
        };
        backward_view(config, params, &trace, &g_recon, g_latent.as_deref(), grads)?;
    }
    Ok(SampleLoss {
        recon,
        align: gt.map(|_| 1.0 - sim_sum / n_views as f64),
    })
}

/// Loss only, without gradients.
pub fn sample_loss(
    config: &AEConfig,
    params: &AEParams,
    sample: &Tensor,
    gt: Option<&Representation>,
) -> Result<SampleLoss> {
    let views = views(config, sample)?;
    let n_views = views.len();
    let total_elems = sample.len() as f64;
    let mut recon = 0.0;
    let mut sim_sum = 0.0;
    for (c, x) in views.iter().enumerate() {
        let trace = forward_view(config, params, x)?;
        recon += x.len() as f64 / total_elems * mse_loss(x, &trace.acts[8])?.0;
        if let Some(gt) = gt {
            sim_sum += cosine_sim_with_grad(trace.acts[4].data(), gt.row(c))?.0;
        }
    }
    Ok(SampleLoss {
        recon,
        align: gt.map(|_| 1.0 - sim_sum / n_views as f64),
    })
}
