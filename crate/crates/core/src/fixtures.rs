//! Canonical test wires, cameras and a two-view target scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::projection::Camera;
use crate::scalar::Real;
use crate::spline::{BSpline, ControlPoint4, KnotVector, WidthClamp, Wire};

/// Axis-aligned bounds of a sampled curve.
pub fn curve_bounds<T: Real>(wire: &Wire<T>, samples: usize) -> ([T; 3], [T; 3]) {
    let curve = wire.spatial_curve();
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    let n = samples.max(2);
    for i in 0..n {
        let t = T::from_count(i) / T::from_count(n - 1);
        let p = curve.evaluate(t, 0).expect("t in domain");
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Wire rescaled about its bounding-box center to unit diagonal and
/// centered at the origin. Widths are left untouched.
pub fn normalize_unit_diagonal<T: Real>(wire: &Wire<T>) -> Wire<T> {
    let (lo, hi) = curve_bounds(wire, 2049);
    let center: [T; 3] = std::array::from_fn(|k| (lo[k] + hi[k]) * T::lit(0.5));
    let diag = (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<T>().sqrt();
    let scale = if diag > T::zero() { diag.recip() } else { T::one() };
    let mut out = wire.clone();
    for c in out.controls_mut() {
        c.x = (c.x - center[0]) * scale;
        c.y = (c.y - center[1]) * scale;
        c.z = (c.z - center[2]) * scale;
    }
    out
}

/// Unit-diagonal helix with eight spans (11 controls), two turns about the
/// `y` axis, constant rendered width 0.01.
pub fn canonical_helix<T: Real>() -> Wire<T> {
    let n = 11;
    let knots = KnotVector::<f64>::clamped_uniform(n).expect("valid count");
    let u = knots.as_slice();
    let turns = 2.0;
    let pitch = 0.5;
    let controls = (0..n)
        .map(|i| {
            // Greville abscissa
            let g = (u[i + 1] + u[i + 2] + u[i + 3]) / 3.0;
            let th = g * turns * std::f64::consts::TAU;
            [th.cos(), pitch * (g - 0.5) * 2.0, th.sin(), 0.01]
        })
        .map(|c| c.map(T::lit))
        .collect::<Vec<_>>();
    let curve = BSpline::new(knots.cast(), controls).expect("valid");
    let clamp = WidthClamp::new(T::zero(), T::lit(0.05)).expect("valid clamp");
    normalize_unit_diagonal(&Wire::from_curve(&curve, clamp).expect("valid"))
}

/// 512×512 camera two units from the origin along `+z`, looking back at it.
pub fn canonical_camera<T: Real>() -> Camera<T> {
    Camera::look_at(
        [T::zero(), T::zero(), T::lit(2.0)],
        [T::zero(); 3],
        [T::zero(), T::one(), T::zero()],
        T::lit(40.0),
        512,
        512,
        T::lit(0.05),
    )
    .expect("valid camera")
}

/// Random unit-diagonal wire with `control_count` controls whose positions
/// follow a smooth random walk.
pub fn random_wire<T: Real>(control_count: usize, seed: u64) -> Wire<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = [0.0f64; 3];
    let mut v = [0.0f64; 3];
    let controls = (0..control_count)
        .map(|_| {
            for k in 0..3 {
                v[k] = 0.6 * v[k] + rng.gen_range(-1.0..1.0);
                p[k] += v[k];
            }
            let w: f64 = rng.gen_range(-1.0..1.0);
            ControlPoint4::from_array([p[0], p[1], p[2], w].map(T::lit))
        })
        .collect();
    let clamp = WidthClamp::new(T::lit(0.001), T::lit(0.02)).expect("valid clamp");
    let wire = Wire::uniform(controls, clamp).expect("valid count");
    normalize_unit_diagonal(&wire)
}

/// Two orthographic-like views of a vertical cylinder: a circle seen from the
/// top and a square seen from the side. Returns cameras and target silhouettes.
pub fn cylinder_views(size: usize) -> Result<Vec<(Camera<f64>, crate::image::ImageBuffer<f64>)>> {
    let dist = 4.0;
    let fov = 20.0;
    let near = 0.1;
    let top = Camera::look_at([0.0, dist, 0.0], [0.0; 3], [0.0, 0.0, -1.0], fov, size, size, near)?;
    let side = Camera::look_at([0.0, 0.0, dist], [0.0; 3], [0.0, 1.0, 0.0], fov, size, size, near)?;
    let radius = 0.5;
    let half_height = 0.5;
    let target = |cam: &Camera<f64>, inside: &dyn Fn(f64, f64, f64) -> bool| {
        // ray-cast the solid cylinder at each pixel center
        crate::image::ImageBuffer::from_fn(size, size, |x, y| {
            let px = (x as f64 + 0.5 - cam.cx) / cam.fx;
            let py = (y as f64 + 0.5 - cam.cy) / cam.fy;
            let o = cam.center();
            let d = cam.rotate_to_world(&[px, py, 1.0]);
            let steps = 400;
            let hit = (0..steps).any(|i| {
                let s = dist - 1.0 + 2.0 * i as f64 / steps as f64;
                inside(o[0] + s * d[0], o[1] + s * d[1], o[2] + s * d[2])
            });
            if hit {
                1.0
            } else {
                0.0
            }
        })
    };
    let solid = |x: f64, y: f64, z: f64| x * x + z * z <= radius * radius && y.abs() <= half_height;
    let top_img = target(&top, &solid);
    let side_img = target(&side, &solid);
    Ok(vec![(top, top_img), (side, side_img)])
}

/// Two-view cylinder silhouette fit: MMSE only, 500 iterations at `size`².
pub fn silhouette_fit(size: usize) -> Result<(crate::optimize::RunConfig, Vec<crate::optimize::ViewTarget<f64>>)> {
    use crate::optimize::{InitSpec, RunConfig, ViewTarget};
    let views = cylinder_views(size)?
        .into_iter()
        .map(|(camera, mask)| ViewTarget {
            camera,
            mask: Some(mask),
            depth: None,
            guidance_id: None,
        })
        .collect();
    let config = RunConfig {
        iterations: 500,
        refine_iter: 400,
        lambda_g: 0.0,
        init: InitSpec::Sphere { radius: 0.5 },
        ..RunConfig::default()
    };
    Ok((config, views))
}
