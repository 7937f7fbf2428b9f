//! Cumulants of the quartic U(N) vector model, computed three independent ways.
//!
//! The model is a complex N-vector with a (|phi|^2)^2 coupling. After integrating
//! out the vector, every moment of interest becomes a one-dimensional integral
//! over a Hubbard-Stratonovich field sigma; [`oracle`] evaluates those integrals
//! by adaptive quadrature and serves as the ground truth. [`series`] builds the
//! formal perturbation series with exact rational arithmetic and resums it by
//! Borel-Pade. [`lve`] assembles the multi-scale loop vertex expansion, a sum
//! over two-level forests of interpolated Gaussian expectations, whose partial
//! sums converge inside a cardioid of the complex coupling plane. Agreement of
//! the three routes, checked term by term in the integration tests, is the
//! point of the crate.

pub mod error;
pub mod forest;
pub mod grassmann;
pub mod jet;
pub mod lve;
pub mod model;
pub mod oracle;
pub mod partitions;
pub mod quad;
pub mod replica;
pub mod series;

pub use error::{Error, Result};
pub use model::{CouplingPoint, SliceConfig};

/// Crate version, re-exported so downstream tools can log provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
