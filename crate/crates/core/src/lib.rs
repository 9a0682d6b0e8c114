//! Convolutional layers equivariant to matrix Lie groups acting on the plane,
//! with Monte-Carlo group convolutions driven by Haar-measure MCMC sampling.
//!
//! The affine and homography groups are supported end to end.

pub mod lie;
pub mod autodiff;
pub mod data;
pub mod haar;
pub mod layers;
pub mod harness;
