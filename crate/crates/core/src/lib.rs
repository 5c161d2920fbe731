//! Monotone reshaping of trained prediction rules.
//!
//! Given a fitted model and a set of features that the prediction should
//! never decrease (or never increase) in, this crate adjusts the model by
//! the smallest squared change that enforces those constraints everywhere,
//! and audits the result.
//!
//! Two families of models are covered:
//!
//! * Tree ensembles ([`tree::ForestModel`]): leaf values are re-solved
//!   directly, either exactly per tree ([`forest_reshape::ReshapeMethod::Exact`])
//!   or with a cheaper per-split scheme that implies the exact constraints
//!   ([`forest_reshape::ReshapeMethod::OverConstrained`]).
//! * Arbitrary black-box predictors ([`blackbox`]): the predictor is sampled
//!   on a grid built from observed data and the monotone projection is
//!   solved on that grid, one fiber of intersecting univariate problems per
//!   evaluation point.
//!
//! The univariate building blocks ([`isotonic`], [`iiso`]) and the
//! monotonicity audit ([`audit`]) are exposed on their own.

pub mod audit;
pub mod blackbox;
pub mod error;
pub mod forest_reshape;
pub mod iiso;
pub mod io;
pub mod isotonic;
mod maxflow;
pub mod shape;
pub mod tree;

pub use error::{Error, Result};
pub use shape::{Direction, ShapeSpec};
