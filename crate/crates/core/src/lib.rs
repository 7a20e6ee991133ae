//! Quadrature-free isogeometric assembly for steady heat conduction on
//! multi-block trivariate B-spline volumes.

pub mod approx;
pub mod assembly;
pub mod bernstein;
pub mod cache;
pub mod collocation;
pub mod csrbf;
pub mod domains;
pub mod binomial;
pub mod element;
pub mod error;
pub mod expr;
pub mod export;
pub mod geometry;
pub mod problem;
pub mod quadrature;
pub mod sparse;
pub mod spline;
pub mod workflow;

pub use bernstein::BernsteinTensor;
pub use error::{Error, Result};
