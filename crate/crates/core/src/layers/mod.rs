//! Network layers: lifting convolution, sampled group convolution, residual
//! blocks and the invariant max head, plus the assembled model.

mod equivariance;
mod group_conv;
mod head;
mod lifting;
mod mlp;
mod model;

use thiserror::Error;

use crate::autodiff::AdError;
use crate::data::DataError;
use crate::haar::SamplerError;
use crate::lie::LieError;

pub use equivariance::{
    certified_radius, group_conv_equivariance, lifting_equivariance, max_relative_deviation,
    summarize_equivariance, EquivarianceReport,
};
pub use group_conv::{
    group_conv, group_conv_forward, AlgebraFilter, FeatureField, FnField, LiftedImage, Translated,
};
pub use head::{invariant_max_head, MaxHead, ResidualBlock};
pub use lifting::{
    lifting_forward, lifting_reference, lifting_values, support_mask, GridShape, LiftingFilter,
    LiftingPlan,
};
pub use mlp::Mlp;
pub use model::{ConvSampling, ForwardSamples, Model, ModelConfig};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("group mismatch: {0}")]
    GroupMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[cfg(test)]
mod tests;
