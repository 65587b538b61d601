//! Simulation and excursion-set geometry of stable and Gaussian random fields.
//!
//! The crate samples sub-Gaussian, harmonisable and concatenated-harmonisable
//! stable fields (and Gaussian baselines) on rectangular grids, measures the
//! Euler characteristic and Lipschitz–Killing curvatures of their excursion
//! sets, and evaluates exact and asymptotic predictions for their means.

pub mod error;
pub mod excursion;
pub mod fields;
pub mod geomcore;
pub mod harness;
pub mod quad;
pub mod sampling;
pub mod scalar;
pub mod special;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Rectangle = geomcore::Rectangle<f64>;
pub type Facet = geomcore::Facet<f64>;
pub type ConvexPolytope = geomcore::ConvexPolytope<f64>;
pub type StableConstants = special::StableConstants<f64>;
