//! Geometry kernel for the 4D wire: a single clamped cubic B-spline in
//! `(x, y, z, width)` that is projected to variable-width strokes,
//! rasterized with analytic gradients and optimized against image losses.

// `!(x > 0)` is the intended NaN-rejecting form throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod export;
pub mod fixtures;
pub mod guidance;
pub mod image;
pub mod init;
pub mod metrics;
pub mod optimize;
pub mod projection;
pub mod raster;
pub mod scalar;
pub mod scene;
pub mod spline;
pub mod topology;

pub use error::{Error, Result};
pub use image::ImageBuffer;
pub use projection::{Camera, Stroke2D, StrokeBatch};
pub use raster::{rasterize, rasterize_backward, CompositeMode, RasterSettings};
pub use scalar::Real;
pub use spline::{BSpline, BezierSegment, ControlPoint4, KnotVector, WidthClamp, Wire};

/// Wire in double precision.
pub type Wire4D = Wire<f64>;
/// Wire in single precision.
pub type Wire4F = Wire<f32>;
/// Double-precision raster.
pub type Image64 = ImageBuffer<f64>;
