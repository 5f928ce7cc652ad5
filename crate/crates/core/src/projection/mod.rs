//! Perspective projection of a wire into screen-space strokes, the exact
//! reference projection and the arc-length error metric.

mod camera;
mod pipeline;
mod stroke;

pub use camera::{Camera, CameraFile};
pub use pipeline::{
    adaptive_subdivision, arclength_matched_error, backprop_projection, bbox_diagonal, error_constant,
    measure_error_constant, polyline_distance, project_wire, project_wire_with_counts, reference_projection,
    resample_arclength, screen_space_error, screen_space_error_px, SubdivisionPlan, DEFAULT_EPSILON_PX,
    MAX_SUBDIVISION, METRIC_SAMPLES,
};
pub use stroke::{BatchGrad, Stroke2D, StrokeBatch};
