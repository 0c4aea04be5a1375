//! Simulation and verification lab for the vector-valued stochastic heat equation
//!
//! ```text
//! ∂u/∂t = ∂²u/∂x² + σ(u) Ẇ,   u(0, x) = u₀(x),   (t, x) ∈ ℝ₊ × ℝ,   u ∈ ℝ^d
//! ```
//!
//! driven by d-dimensional space-time white noise. The crate provides the
//! discretized solution operators, the parabolic geometry used in the
//! chaining and covering arguments for polarity of points, the local
//! frozen-coefficient decomposition, good-rectangle covers of the range and
//! the Monte Carlo machinery that measures their finite-sample behaviour.

pub mod constants;
pub mod covering;
pub mod decomposition;
pub mod error;
pub mod experiments;
pub mod field;
pub mod gaussian;
pub mod geometry;
pub mod heat_kernel;
pub mod noise;
pub mod quadrature;
pub mod solver;
pub mod stats;
pub mod stopping;

pub use error::{Error, Result};
pub use field::FieldPath;
pub use geometry::{AxisRect, ParabolicPoint, ParabolicRect};
pub use noise::{NoiseRealization, NoiseSource, SpaceTimeGrid};
