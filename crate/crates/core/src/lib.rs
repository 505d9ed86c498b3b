//! Sparse-angle CT reconstruction toolkit.
//!
//! Parallel-beam projector and adjoint, angle-subset sampling with density
//! weights, FBP and TV baselines, a spectrally normalized convolutional
//! denoiser with exact reverse-mode gradients, the nonnegative deep
//! equilibrium operator with an accelerated fixed-point solver, the
//! self-supervised / supervised training losses with Jacobian-free
//! backpropagation, and an exact-enumeration harness that certifies the
//! self-supervised / supervised gradient equivalence on small instances.

pub mod classical;
pub mod denoiser;
pub mod deq;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod phantom;
pub mod plot;
pub mod radon;
pub mod sampling;
pub mod training;
pub mod verify;

pub use error::{Result, TomoError};
pub use geometry::{Geometry, Image, Sinogram};
pub use sampling::{AngleMask, MaskDistribution, MaskKind, WeightDiagonal};
