//! Feature-map maturity evaluation.
//!
//! Feature maps from a perception module and the scene ground truth are
//! projected into one 768-dimensional representation space: GT through a
//! text embedding of its annotations, feature maps through the latent of a
//! two-stage alignment autoencoder. The cosine similarity between the two,
//! averaged per training phase, tracks how much GT information the module's
//! features carry; its Pearson correlation with detection metrics checks that
//! the score follows real progress.

pub mod autoencoder;
pub mod dataset;
pub mod digest;
pub mod embedding;
pub mod error;
pub mod gt;
pub mod pipeline;
pub mod scoring;
pub mod synthetic;
pub mod tensor;

pub use autoencoder::{AEConfig, AEParams, AeSettings, TrainReport};
pub use dataset::{FeatureDataset, FeatureMap};
pub use embedding::{Representation, RepresentationMap, Space, REPR_DIM};
pub use error::{Error, Result};
pub use gt::{Box2D, Box3D, GtScene};
pub use pipeline::PipelineConfig;
pub use scoring::{MetricSeries, SeriesReport, SimilaritySeries};
pub use synthetic::SynthConfig;
pub use tensor::{ConvSpec, Tensor};
