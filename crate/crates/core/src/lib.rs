//! Likelihood-based inference for satellite conjunction assessment.
//!
//! The crate models the relative position and velocity of two space objects
//! at close approach as a six-dimensional Gaussian observation whose mean is
//! parametrized by the miss distance `psi` and five nuisance angles/speeds.
//! On top of that model it provides:
//!
//! * [`geometry`]: spherical-polar parametrization, miss distance and the
//!   encounter-plane projection used when the relative velocity is known.
//! * [`collision_probability`]: the Gaussian disk integral `p_c` and the
//!   plug-in estimator bias study.
//! * [`likelihood`]: log-likelihoods, profile fits and observed information.
//! * [`pivots`]: Wald statistic, likelihood root, modified likelihood root
//!   (frequentist and Jeffreys-prior Bayesian), closed planar forms and the
//!   Rayleigh validation example.
//! * [`inference`]: grids, pivot curves, spline inversion, confidence
//!   intervals, significance probabilities and loss-based thresholds.
//! * [`calibration`]: reproducible parallel Monte Carlo coverage studies.
//!
//! All lengths are meters and all speeds meters per second internally; see
//! [`units`] for the conversions used at the edges.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Config enums are built once per run; boxing buys nothing.
#![allow(clippy::large_enum_variant)]

pub mod calibration;
pub mod collision_probability;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod likelihood;
pub mod normal;
pub mod optimize;
pub mod pivots;
pub mod spline;
pub mod units;

pub use error::{Error, Result};
pub use geometry::{ConjunctionParams, DispersionSpec, EncounterFrame, PlanarParams, RelativeState};
pub use inference::{AssessmentReport, ConfidenceInterval, LossTable, PivotCurve};
pub use likelihood::{LikelihoodContext, ProfileFit};
pub use pivots::{PivotKind, PivotSet};
