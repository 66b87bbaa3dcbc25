//! Self-supervised conformal calibration for linear inverse imaging.
//!
//! The crate provides the building blocks for per-image uncertainty
//! quantification on FFT-based linear inverse problems, demonstrated on a
//! simulated weak-lensing mass-mapping task:
//!
//! * [`operators`] - the Fourier-domain lensing operator with adjoint and
//!   pseudoinverse, plus an identity operator used as a test double.
//! * [`reconstruct`] - the Kaiser-Squires reconstructor (pseudoinverse
//!   followed by Gaussian smoothing) behind a pluggable trait.
//! * [`transforms`] - the invertible transformation group (flips, rotations,
//!   cyclic shifts, frequency shelving filters) used for equivariant
//!   bootstrapping.
//! * [`bootstrap`] - parametric and equivariant bootstrap engines producing
//!   per-image non-conformity score samples and heuristic quantiles.
//! * [`scores`] - measurement-space and projector non-conformity scores and
//!   their unbiased risk estimates computed from the observation alone.
//! * [`rcps`] - risk-controlling prediction sets: exact binomial upper
//!   confidence bounds and the monotone lambda search.
//! * [`simdata`] - Gaussian-random-field ground truth simulation, mock
//!   observations and the on-disk dataset store.
//! * [`harness`] - end-to-end calibration and coverage experiments.

pub mod bootstrap;
pub mod error;
pub mod field;
pub mod fft;
pub mod harness;
pub mod operators;
pub mod rcps;
pub mod reconstruct;
pub mod rng;
pub mod scores;
pub mod simdata;
pub mod transforms;

pub use bootstrap::{BootstrapConfig, BootstrapMode, BootstrapSummary};
pub use error::{Error, Result};
pub use field::{ComplexField, Field, Measurement, RealField};
pub use operators::{
    ForwardOperator, FrequencyGrid, GaussianNoiseModel, IdentityOperator, MassMappingOperator,
};
pub use rcps::{CalibrationResult, RcpsConfig};
pub use reconstruct::{KaiserSquires, KaiserSquiresConfig, Reconstructor};
pub use rng::StreamKey;
pub use scores::{JacobianMode, ScoreKind, SureConfig};
pub use simdata::{Dataset, DatasetManifest, GrfConfig, Split};
pub use transforms::{TransformSamplerConfig, TransformSpec};
