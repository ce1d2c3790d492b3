//! Optimal fishing-quota feedback policies for a stochastic multi-species
//! logistic model.
//!
//! Three independent solvers produce a [`Policy`] for the same controlled
//! SDE: backward dynamic programming with quantization quadrature
//! ([`sdp`]), a semi-Lagrangian implicit HJB scheme ([`hjb`]) and a neural
//! feedback policy trained through the simulator ([`nn`]). [`assess`]
//! cross-checks them, including an exact construction that lifts a scalar
//! policy to `d` species.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod assess;
pub mod cli;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod load;
pub mod model;
pub mod nn;
pub mod policy;
pub mod quantization;
pub mod sdp;

pub use error::{Error, Result};
pub use model::{ModelConfig, NoiseKind, NoisePath, Trajectory};
pub use policy::{Backing, ConstantPolicy, Policy};
