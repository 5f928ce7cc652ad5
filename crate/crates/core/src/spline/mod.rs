//! Exact cubic B-spline algebra for the 4D wire.

mod bezier;
mod bspline;
mod conversion;
mod fit;
mod knots;
mod wire;

pub use bezier::{
    apply_mat4, bernstein, identity4, mat4_mul, subdivision_depth, subdivision_stack, BezierSegment, Mat4, HALVE_LEFT,
    HALVE_RIGHT,
};
pub use bspline::{BSpline, Insertion};
pub use conversion::{dense_conversion_matrix, DenseConversion, UNIFORM_BSPLINE_TO_BEZIER};
pub use fit::{fit_bspline, FitOptions};
pub use knots::{KnotVector, Span};
pub use wire::{fit_to_polyline, ControlPoint4, Polyline, PolylineFit, WidthClamp, Wire, WireFile};

/// Polynomial degree of every wire.
pub const DEGREE: usize = 3;
