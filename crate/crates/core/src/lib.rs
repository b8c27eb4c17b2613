//! # distlab
//!
//! A desk-scale laboratory for the training dynamics of distribution learning
//! models. Three ways of representing a learned distribution are covered:
//!
//! - **potential**: `P = e^{-V} base / Z` with a trainable potential `V`
//!   ([`potential`]);
//! - **fixed generator**: a velocity or score field regressed onto a target
//!   built from a stochastic interpolant or a diffusion process
//!   ([`interpolant`]);
//! - **free generator**: GAN-style dynamics, reduced here to a density trained
//!   against a fixed RKHS discriminator ([`mmd_gan`]) and a handful of toy
//!   games and 1-D transport flows ([`collapse`]).
//!
//! All trainable functions are random feature models ([`rfm`]): a frozen
//! first layer of `m` features `σ(w·x + b)` and a trainable coefficient matrix.
//! Test errors (KL, W2, MMD) live in [`metrics`]; probability measures on
//! grids, particles and Gaussians live in [`measures`].
//!
//! Every stochastic operation takes an explicit seed, and all randomness is
//! drawn from [`rng::stream`].

#![forbid(unsafe_code)]

pub mod collapse;
pub mod error;
pub mod harness;
pub mod interpolant;
pub mod measures;
pub mod metrics;
pub mod mmd_gan;
pub mod potential;
pub mod rfm;
pub mod rng;
pub mod trajectory;

pub use error::{Error, Result};
pub use measures::{GaussianMeasure, GridDensity, ParticleMeasure, Quadrature};
pub use rfm::{Activation, FeatureBank, FeatureLaw, RfmFunction, TimeVelocityField};
pub use trajectory::TrajectoryLog;
