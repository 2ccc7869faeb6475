//! Service availability prediction from location traces: hotspot clustering,
//! a feedforward classifier for which services are available at a place and
//! time, and a dual-pathway residual network that forecasts the next steps of
//! a service's presence from Gramian angular field images.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64` and
//! `*32` aliases below name the common instantiations.

// NaN must fail these range checks, which a plain `<=` would not do.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod availability;
pub mod duration;
pub mod error;
pub mod features;
pub mod geo_cluster;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod series_gaf;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

pub type Tensor64 = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type Stage1Model64 = availability::Stage1Model<f64>;
pub type Stage1Model32 = availability::Stage1Model<f32>;
pub type Stage2Model64 = duration::Stage2Model<f64>;
pub type Stage2Model32 = duration::Stage2Model<f32>;
