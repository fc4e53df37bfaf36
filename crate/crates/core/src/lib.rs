//! Rank-based mean field games.
//!
//! A continuum of players each control `dX = a dt + σ dB (+ σ₀ dW)` on
//! `[0, T]`, pay `c a²` per unit time, and receive `R(X_T, F_μ(X_T))` where
//! `F_μ` is the cumulative distribution of the population's terminal states.
//! The crate computes the closed-form best response to any terminal law,
//! solves for the equilibrium law by a Wasserstein fixed-point iteration,
//! and checks the approximate Nash property of the resulting strategies in
//! finite-player games, with and without common noise.

// `!(x > 0.0)` is how NaN gets rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod common_noise;
pub mod drift;
pub mod error;
pub mod experiment;
pub mod fixed_point;
pub mod measure;
pub mod model;
pub mod nash;
pub mod rng;
pub mod sde;
pub mod special;
pub mod value;

pub use error::{Error, Result};
pub use measure::{CdfConvention, EmpiricalMeasure};
pub use model::{ModelParams, RewardKind, RewardSpec};
pub use rng::Seed;
pub use value::{QuadratureConfig, QuadratureMethod, ValueField};
