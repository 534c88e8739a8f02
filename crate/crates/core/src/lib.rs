//! Numerical laboratory for linear classification under directed attacks.
//!
//! The crate studies what happens to the robust error of interpolating
//! linear classifiers when the training procedure itself is made robust.
//! It provides:
//!
//! - [`lin_data`]: the synthetic signal-plus-Gaussian distribution, seeded
//!   sampling, and dataset containers.
//! - [`maxmargin`]: an exact hard-margin solver (minimum-norm point over
//!   the convex hull of signed samples) and the closed-form robust
//!   max-margin classifier.
//! - [`theory`]: closed-form error, susceptibility, and high-probability
//!   bound formulas for those classifiers.
//! - [`adv_train`]: adversarial logistic regression with exact inner
//!   maximization for interval and l1-ball perturbation sets.
//! - [`eval`]: exact and Monte Carlo evaluation of standard error, robust
//!   error, and attack susceptibility.
//! - [`img_attacks`] / [`img_lab`]: desk-scale directed image attacks
//!   (square masks, motion blur, illumination) and a logistic-regression
//!   image pipeline with exact mask adversarial training.
//!
//! All randomized operations are deterministic functions of an explicit
//! [`rng::RngSeed`]; identical seeds reproduce results bit for bit.

// Validation uses negated comparisons so that NaN fails the checks, and the
// math constants keep their full published precision.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod adv_train;
pub mod error;
pub mod eval;
pub mod img_attacks;
pub mod img_lab;
pub mod lin_data;
pub mod maxmargin;
pub mod pnm;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use rng::RngSeed;
