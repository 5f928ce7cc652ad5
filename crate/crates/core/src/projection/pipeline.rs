use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::fixtures::{canonical_camera, canonical_helix};
use crate::scalar::{dist, Real};
use crate::spline::{BezierSegment, DenseConversion, Wire};

use super::camera::Camera;
use super::stroke::{BatchGrad, Stroke2D, StrokeBatch};

/// Largest subdivision count chosen for a single span.
pub const MAX_SUBDIVISION: u32 = 64;
/// Default screen-space tolerance in pixels.
pub const DEFAULT_EPSILON_PX: f64 = 0.5;
/// Arc-length resampling density of the error metric.
pub const METRIC_SAMPLES: usize = 2048;
/// Samples per calibration sub-segment.
const CALIBRATION_SAMPLES: usize = 32;
/// Subdivision count used to measure the calibration constant.
const CALIBRATION_COUNT: u32 = 8;

/// Per-span subdivision counts and the spans that hit the cap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubdivisionPlan {
    pub counts: Vec<u32>,
    pub capped: Vec<usize>,
}

/// Estimated screen error of a span with Bézier polygon length `h` and
/// minimum depth `z_min` at subdivision count `s`.
#[inline]
fn estimated_error(c: f64, focal: f64, h: f64, z_min: f64, s: u32) -> f64 {
    let r = h / (f64::from(s) * z_min);
    c * focal * r * r
}

fn focal<T: Real>(camera: &Camera<T>) -> f64 {
    camera.fx.max(camera.fy).as_f64()
}

/// Bézier points of every span of the rendered curve in camera space.
fn span_beziers<T: Real>(wire: &Wire<T>, camera: &Camera<T>) -> Result<Vec<[[T; 3]; 4]>> {
    let segs = wire.to_bezier_segments(1)?;
    segs.iter()
        .map(|seg| {
            let pts: [[T; 3]; 4] =
                std::array::from_fn(|j| camera.to_camera(&[seg.points[j][0], seg.points[j][1], seg.points[j][2]]));
            for p in &pts {
                if !(p[2] > camera.near) {
                    return Err(Error::Clipped {
                        depth: p[2].as_f64(),
                        near: camera.near.as_f64(),
                    });
                }
            }
            Ok(pts)
        })
        .collect()
}

fn polygon_and_depth<T: Real>(pts: &[[T; 3]; 4]) -> (f64, f64) {
    let h = (0..3).map(|i| dist(&pts[i], &pts[i + 1]).as_f64()).sum();
    let z = pts.iter().map(|p| p[2].as_f64()).fold(f64::INFINITY, f64::min);
    (h, z)
}

/// Calibrated constant of the error estimate `c · f · (h / (s · z_min))²`.
///
/// Measured once per process as the largest ratio of true parametric screen
/// deviation to the uncalibrated estimate over the spans of the canonical
/// helix.
pub fn error_constant() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let wire: Wire<f64> = canonical_helix();
        let camera: Camera<f64> = canonical_camera();
        let c = measure_error_constant(&wire, &camera, CALIBRATION_COUNT).expect("canonical scene is valid");
        log::debug!("projection error constant calibrated to {c:.6}");
        c
    })
}

/// Largest ratio of measured deviation to `f · (h / (s · z_min))²` over spans.
pub fn measure_error_constant(wire: &Wire<f64>, camera: &Camera<f64>, count: u32) -> Result<f64> {
    let spans = span_beziers(wire, camera)?;
    let counts = vec![count; spans.len()];
    let batch = project_wire_with_counts(wire, camera, &counts)?;
    let conv = DenseConversion::new(wire.knots(), &counts)?;
    let params = conv.segment_parameters();
    let curve = wire.spatial_curve();
    let f = focal(camera);
    let mut worst = vec![0.0f64; spans.len()];
    for ((stroke, &(span, _)), &(t0, t1)) in batch.strokes.iter().zip(&batch.provenance).zip(&params) {
        for m in 0..=CALIBRATION_SAMPLES {
            let tau = m as f64 / CALIBRATION_SAMPLES as f64;
            let p = curve.evaluate(t0 + (t1 - t0) * tau, 0)?;
            let (exact, _) = camera.project_point(&p)?;
            worst[span] = worst[span].max(dist(&exact, &stroke.eval(tau)));
        }
    }
    let mut c = 0.0f64;
    for (pts, dev) in spans.iter().zip(worst) {
        let (h, z) = polygon_and_depth(pts);
        if h > 0.0 {
            c = c.max(dev / estimated_error(1.0, f, h, z, count));
        }
    }
    Ok(c)
}

/// Smallest power-of-two count per span meeting `epsilon_px`, capped at
/// [`MAX_SUBDIVISION`].
pub fn adaptive_subdivision<T: Real>(wire: &Wire<T>, camera: &Camera<T>, epsilon_px: T) -> Result<SubdivisionPlan> {
    let eps = epsilon_px.as_f64();
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("epsilon_px must be finite and >= 0, got {eps}")));
    }
    let c = error_constant();
    let f = focal(camera);
    let mut plan = SubdivisionPlan {
        counts: Vec::new(),
        capped: Vec::new(),
    };
    for (j, pts) in span_beziers(wire, camera)?.iter().enumerate() {
        let (h, z) = polygon_and_depth(pts);
        let mut s = 1;
        if h > 0.0 {
            while s < MAX_SUBDIVISION && estimated_error(c, f, h, z, s) > eps {
                s *= 2;
            }
            if estimated_error(c, f, h, z, s) > eps {
                plan.capped.push(j);
            }
        }
        plan.counts.push(s);
    }
    if !plan.capped.is_empty() {
        log::warn!(
            "{} span(s) capped at {MAX_SUBDIVISION} segments; screen error may exceed {eps} px",
            plan.capped.len()
        );
    }
    Ok(plan)
}

/// Dense 4D segments of the rendered curve for the given counts.
fn dense_segments<T: Real>(wire: &Wire<T>, counts: &[u32]) -> Result<(DenseConversion<T>, Vec<BezierSegment<T, 4>>)> {
    let conv = DenseConversion::new(wire.knots(), counts)?;
    let curve = wire.curve();
    let segs = conv.apply(curve.controls());
    Ok((conv, segs))
}

/// Project the wire with explicit per-span subdivision counts.
pub fn project_wire_with_counts<T: Real>(wire: &Wire<T>, camera: &Camera<T>, counts: &[u32]) -> Result<StrokeBatch<T>> {
    let (conv, segs) = dense_segments(wire, counts)?;
    let mut strokes = Vec::with_capacity(segs.len());
    let mut depths = Vec::with_capacity(segs.len());
    for seg in &segs {
        let mut q = [[T::zero(); 2]; 4];
        let mut z = [T::zero(); 4];
        for j in 0..4 {
            let p = &seg.points[j];
            let c = camera.to_camera(&[p[0], p[1], p[2]]);
            q[j] = camera.project_camera(&c)?;
            z[j] = c[2];
        }
        let w_start = camera.fx * seg.points[0][3] / z[0];
        let w_end = camera.fx * seg.points[3][3] / z[3];
        strokes.push(Stroke2D::new(q, w_start, w_end));
        depths.push([z[0], z[3]]);
    }
    Ok(StrokeBatch {
        strokes,
        provenance: conv.provenance(),
        depths,
        params: conv.segment_parameters().into_iter().map(|(a, b)| [a, b]).collect(),
        counts: counts.to_vec(),
    })
}

/// Adaptive subdivision followed by projection of every dense segment.
pub fn project_wire<T: Real>(wire: &Wire<T>, camera: &Camera<T>, epsilon_px: T) -> Result<StrokeBatch<T>> {
    let plan = adaptive_subdivision(wire, camera, epsilon_px)?;
    project_wire_with_counts(wire, camera, &plan.counts)
}

/// Exact perspective projection of `samples` uniform-in-`t` curve points.
pub fn reference_projection<T: Real>(wire: &Wire<T>, camera: &Camera<T>, samples: usize) -> Result<Vec<[T; 2]>> {
    if samples < 1000 {
        return Err(Error::InvalidSize(format!(
            "reference needs >= 1000 samples, got {samples}"
        )));
    }
    let curve = wire.spatial_curve();
    (0..samples)
        .map(|i| {
            let t = T::from_count(i) / T::from_count(samples - 1);
            let p = curve.evaluate(t, 0)?;
            Ok(camera.project_point(&p)?.0)
        })
        .collect()
}

/// `count` points spaced uniformly by arc length along a polyline.
pub fn resample_arclength<T: Real>(poly: &[[T; 2]], count: usize) -> Result<Vec<[T; 2]>> {
    let mut cum = Vec::with_capacity(poly.len());
    let mut acc = T::zero();
    cum.push(acc);
    for w in poly.windows(2) {
        acc += dist(&w[0], &w[1]);
        cum.push(acc);
    }
    if !(acc > T::zero()) || count < 2 {
        return Err(Error::Degenerate("zero-length curve cannot be resampled".into()));
    }
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let target = acc * T::from_count(k) / T::from_count(count - 1);
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let a = if len > T::zero() {
            ((target - cum[seg]) / len).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
        let (p, q) = (poly[seg], poly[seg + 1]);
        out.push([p[0] + (q[0] - p[0]) * a, p[1] + (q[1] - p[1]) * a]);
    }
    Ok(out)
}

/// Diagonal of the axis-aligned bounding box of a polyline.
pub fn bbox_diagonal<T: Real>(poly: &[[T; 2]]) -> T {
    let mut lo = [T::infinity(); 2];
    let mut hi = [T::neg_infinity(); 2];
    for p in poly {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if poly.is_empty() {
        return T::zero();
    }
    dist(&lo, &hi)
}

/// Mean distance between arc-length corresponding points of two polylines,
/// in the polylines' units.
pub fn polyline_distance<T: Real>(a: &[[T; 2]], b: &[[T; 2]]) -> Result<T> {
    let ra = resample_arclength(a, METRIC_SAMPLES)?;
    let rb = resample_arclength(b, METRIC_SAMPLES)?;
    Ok(ra.iter().zip(&rb).map(|(p, q)| dist(p, q)).sum::<T>() / T::from_count(METRIC_SAMPLES))
}

/// Samples per stroke used when flattening a batch for the metric.
fn flatten_density(strokes: usize) -> usize {
    (16384 / strokes.max(1)).max(16) + 1
}

fn check_inputs<T: Real>(approx: &StrokeBatch<T>, reference: &[[T; 2]]) -> Result<T> {
    let diag = bbox_diagonal(reference);
    if !(diag > T::zero()) {
        return Err(Error::Degenerate("reference curve has an empty bounding box".into()));
    }
    if approx.is_empty() {
        return Err(Error::Degenerate("approximation has no strokes".into()));
    }
    Ok(diag)
}

/// Screen error in pixels and normalized by the reference bbox diagonal.
///
/// `reference` must be sampled uniformly in the curve parameter over
/// `[0, 1]`, as produced by [`reference_projection`]. [`METRIC_SAMPLES`]
/// points are placed uniformly by arc length along the reference; each is
/// compared with the approximation at the same curve parameter.
pub fn screen_space_error_px<T: Real>(approx: &StrokeBatch<T>, reference: &[[T; 2]]) -> Result<(T, T)> {
    let diag = check_inputs(approx, reference)?;
    if approx.params.len() != approx.len() {
        return Err(Error::Provenance("batch lacks stroke parameter intervals".into()));
    }
    let mut cum = Vec::with_capacity(reference.len());
    let mut acc = T::zero();
    cum.push(acc);
    for w in reference.windows(2) {
        acc += dist(&w[0], &w[1]);
        cum.push(acc);
    }
    if !(acc > T::zero()) {
        return Err(Error::Degenerate("zero-length reference curve".into()));
    }
    let last = T::from_count(reference.len() - 1);
    let mut seg = 0;
    let mut total = T::zero();
    for k in 0..METRIC_SAMPLES {
        let target = acc * T::from_count(k) / T::from_count(METRIC_SAMPLES - 1);
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let a = if len > T::zero() {
            ((target - cum[seg]) / len).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
        let (p, q) = (reference[seg], reference[seg + 1]);
        let r = [p[0] + (q[0] - p[0]) * a, p[1] + (q[1] - p[1]) * a];
        let t = (T::from_count(seg) + a) / last;
        let (i, tau) = approx.locate(t).expect("non-empty batch");
        total += dist(&r, &approx.strokes[i].eval(tau));
    }
    let px = total / T::from_count(METRIC_SAMPLES);
    Ok((px, px / diag))
}

/// Normalized screen error between a projected batch and the reference
/// polyline of the same curve; see [`screen_space_error_px`].
pub fn screen_space_error<T: Real>(approx: &StrokeBatch<T>, reference: &[[T; 2]]) -> Result<T> {
    Ok(screen_space_error_px(approx, reference)?.1)
}

/// Variant that resamples each curve independently by its own arc length and
/// pairs points by index. Only the shape difference survives, so it decays
/// faster than [`screen_space_error`].
pub fn arclength_matched_error<T: Real>(approx: &StrokeBatch<T>, reference: &[[T; 2]]) -> Result<T> {
    let diag = check_inputs(approx, reference)?;
    let poly = approx.flatten(flatten_density(approx.len()));
    Ok(polyline_distance(&poly, reference)? / diag)
}

/// Gradient of a loss on the projected batch with respect to the raw wire
/// control parameters `(x, y, z, w_raw)`.
pub fn backprop_projection<T: Real>(
    batch: &StrokeBatch<T>,
    grad: &BatchGrad<T>,
    wire: &Wire<T>,
    camera: &Camera<T>,
) -> Result<Vec<[T; 4]>> {
    if grad.strokes.len() != batch.len() || grad.depths.len() != batch.len() {
        return Err(Error::Provenance(format!(
            "gradient covers {} strokes, batch has {}",
            grad.strokes.len(),
            batch.len()
        )));
    }
    let (conv, segs) = dense_segments(wire, &batch.counts)
        .map_err(|e| Error::Provenance(format!("wire does not match batch: {e}")))?;
    if conv.provenance() != batch.provenance {
        return Err(Error::Provenance("stroke provenance does not match the wire".into()));
    }
    let fx = camera.fx;
    let fy = camera.fy;
    let mut dense = Vec::with_capacity(segs.len());
    for ((seg, g), gz) in segs.iter().zip(&grad.strokes).zip(&grad.depths) {
        let mut out = [[T::zero(); 4]; 4];
        for j in 0..4 {
            let p = &seg.points[j];
            let c = camera.to_camera(&[p[0], p[1], p[2]]);
            let inv_z = c[2].recip();
            let (gu, gv) = (g.q[j][0], g.q[j][1]);
            let mut gc = [
                gu * fx * inv_z,
                gv * fy * inv_z,
                -(gu * fx * c[0] + gv * fy * c[1]) * inv_z * inv_z,
            ];
            let endpoint = match j {
                0 => Some((g.w_start, gz[0])),
                3 => Some((g.w_end, gz[1])),
                _ => None,
            };
            if let Some((gw, gd)) = endpoint {
                gc[2] += gd - gw * fx * p[3] * inv_z * inv_z;
                out[j][3] = gw * fx * inv_z;
            }
            let gw = camera.rotate_to_world(&gc);
            out[j][..3].copy_from_slice(&gw);
        }
        dense.push(out);
    }
    let mut sparse = conv.apply_transpose(&dense);
    for (g, c) in sparse.iter_mut().zip(wire.controls()) {
        g[3] *= wire.clamp().derivative(c.w);
    }
    Ok(sparse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_wire;
    use crate::spline::{ControlPoint4, WidthClamp};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const I3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn cam() -> Camera<f64> {
        Camera::new(500.0, 500.0, 256.0, 256.0, 512, 512, I3, [0.0; 3], 0.05).unwrap()
    }

    fn clamp() -> WidthClamp<f64> {
        WidthClamp::new(0.0, 0.1).unwrap()
    }

    fn wire_from(points: &[[f64; 4]]) -> Wire<f64> {
        Wire::uniform(points.iter().map(|p| ControlPoint4::from_array(*p)).collect(), clamp()).unwrap()
    }

    fn curved_span(z: f64) -> Wire<f64> {
        wire_from(&[
            [-0.3, 0.0, z, 0.0],
            [-0.1, 0.3, z + 0.2, 0.0],
            [0.1, -0.2, z, 0.0],
            [0.3, 0.1, z + 0.1, 0.0],
        ])
    }

    #[test]
    fn calibration_is_positive_and_finite() {
        let c = error_constant();
        assert!(c.is_finite() && c > 0.0, "c = {c}");
    }

    #[test]
    fn far_wire_with_loose_tolerance_needs_no_subdivision() {
        let w = curved_span(10.0);
        let plan = adaptive_subdivision(&w, &cam(), 1e3).unwrap();
        assert!(plan.counts.iter().all(|&c| c == 1));
        assert!(plan.capped.is_empty());
    }

    #[test]
    fn halving_depth_at_least_doubles_count() {
        let far = curved_span(4.0);
        let near = {
            let mut w = curved_span(4.0);
            for c in w.controls_mut() {
                c.z -= 2.0;
            }
            w
        };
        for eps in [0.05, 0.1, 0.3, 1.0] {
            let a = adaptive_subdivision(&far, &cam(), eps).unwrap().counts[0];
            let b = adaptive_subdivision(&near, &cam(), eps).unwrap().counts[0];
            // z_min halves exactly because the span's nearest Bézier point sits at z = 4
            if b < MAX_SUBDIVISION && a > 1 {
                assert_eq!(b, 2 * a, "eps {eps}");
            }
            assert!(b >= a);
        }
    }

    #[test]
    fn vanishing_tolerance_is_capped() {
        let w = curved_span(2.0);
        let plan = adaptive_subdivision(&w, &cam(), 0.0).unwrap();
        assert_eq!(plan.counts, vec![MAX_SUBDIVISION]);
        assert_eq!(plan.capped, vec![0]);
    }

    #[test]
    fn degenerate_span_gets_one_segment() {
        let w = wire_from(&[[0.1, 0.2, 3.0, 0.0]; 4]);
        assert_eq!(adaptive_subdivision(&w, &cam(), 0.0).unwrap().counts, vec![1]);
    }

    #[test]
    fn clipped_wire_is_rejected() {
        let w = curved_span(0.01);
        assert!(matches!(
            adaptive_subdivision(&w, &cam(), 0.5),
            Err(Error::Clipped { .. })
        ));
        assert!(matches!(
            project_wire_with_counts(&w, &cam(), &[1]),
            Err(Error::Clipped { .. })
        ));
    }

    #[test]
    fn straight_wire_at_constant_depth() {
        let z = 5.0;
        let raw = 0.4;
        let w = wire_from(&[
            [-1.0, 0.5, z, raw],
            [-0.2, 0.5, z, raw],
            [0.3, 0.5, z, raw],
            [1.0, 0.5, z, raw],
            [1.4, 0.5, z, raw],
        ]);
        let batch = project_wire_with_counts(&w, &cam(), &[2, 4]).unwrap();
        let expect = 500.0 * clamp().apply(raw) / z;
        for s in &batch.strokes {
            for q in &s.q {
                assert!((q[1] - (500.0 * 0.5 / z + 256.0)).abs() < 1e-9);
            }
            assert!((s.w_start - expect).abs() < 1e-12 && (s.w_end - expect).abs() < 1e-12);
        }
        assert_eq!(batch.provenance, vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (1, 3)]);
    }

    #[test]
    fn fronto_parallel_span_matches_reference() {
        let w = wire_from(&[
            [-0.3, 0.0, 3.0, 0.0],
            [-0.1, 0.4, 3.0, 0.0],
            [0.2, -0.3, 3.0, 0.0],
            [0.3, 0.2, 3.0, 0.0],
        ]);
        let batch = project_wire_with_counts(&w, &cam(), &[1]).unwrap();
        let reference = reference_projection(&w, &cam(), 20_000).unwrap();
        let e = screen_space_error(&batch, &reference).unwrap();
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn identical_and_shifted_curves() {
        let mut w = random_wire::<f64>(8, 11);
        for c in w.controls_mut() {
            c.z += 3.0;
        }
        let batch = project_wire_with_counts(&w, &cam(), &[64; 5]).unwrap();
        let poly = batch.flatten(64);
        assert!(polyline_distance(&poly, &poly).unwrap() < 1e-12);
        let reference = reference_projection(&w, &cam(), 10_000).unwrap();
        assert!(screen_space_error(&batch, &reference).unwrap() < 1e-6);
        let shift = 0.01 * bbox_diagonal(&reference) / 2f64.sqrt();
        // the shifted copy keeps the reference's uniform-in-t sampling
        let shifted: Vec<_> = reference.iter().map(|p| [p[0] + shift, p[1] + shift]).collect();
        let e = screen_space_error(&batch, &shifted).unwrap();
        assert!((e - 0.01).abs() < 1e-3, "{e}");
        let e = arclength_matched_error(&batch, &shifted).unwrap();
        assert!((e - 0.01).abs() < 1e-3, "{e}");
    }

    #[test]
    fn metric_rejects_degenerate_curves() {
        let batch = project_wire_with_counts(&curved_span(3.0), &cam(), &[1]).unwrap();
        assert!(screen_space_error(&batch, &[[1.0, 1.0]; 10]).is_err());
        assert!(reference_projection(&curved_span(3.0), &cam(), 999).is_err());
    }

    fn linear_loss(batch: &StrokeBatch<f64>, a: &[[f64; 10]], b: &[[f64; 2]]) -> f64 {
        let mut l = 0.0;
        for ((s, ai), (d, bi)) in batch.strokes.iter().zip(a).zip(batch.depths.iter().zip(b)) {
            l += s.to_array().iter().zip(ai).map(|(x, y)| x * y).sum::<f64>();
            l += d[0] * bi[0] + d[1] * bi[1];
        }
        l
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut w = random_wire::<f64>(8, 5);
        for c in w.controls_mut() {
            c.z += 2.5;
        }
        let camera = Camera::look_at([0.3, 0.2, 0.0], [0.0, 0.0, 2.5], [0.0, 1.0, 0.0], 45.0, 256, 256, 0.05).unwrap();
        let counts = vec![2, 1, 4, 2, 1];
        let batch = project_wire_with_counts(&w, &camera, &counts).unwrap();
        let a: Vec<[f64; 10]> = (0..batch.len())
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        let b: Vec<[f64; 2]> = (0..batch.len())
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        let grad = BatchGrad {
            strokes: a.iter().map(Stroke2D::from_array).collect(),
            depths: b.clone(),
        };
        let g = backprop_projection(&batch, &grad, &w, &camera).unwrap();
        let params = w.params();
        let h = 1e-6;
        let mut coords: Vec<usize> = (0..params.len()).collect();
        // 20 random coordinates plus one of each class
        coords.shuffle(&mut rng);
        coords.truncate(20);
        for k in 0..4 {
            coords.push(4 * rng.gen_range(0..8) + k);
        }
        for &i in &coords {
            let eval = |d: f64| {
                let mut p = params.clone();
                p[i] += d;
                let mut wp = w.clone();
                wp.set_params(&p);
                linear_loss(&project_wire_with_counts(&wp, &camera, &counts).unwrap(), &a, &b)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g[i / 4][i % 4];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-3, "param {i}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn zero_gradient_in_zero_out() {
        let w = curved_span(3.0);
        let batch = project_wire_with_counts(&w, &cam(), &[4]).unwrap();
        let g = backprop_projection(&batch, &batch.zero_grad(), &w, &cam()).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn width_gradient_decouples_at_constant_depth() {
        let w = wire_from(&[
            [-0.3, 0.0, 3.0, 0.2],
            [-0.1, 0.4, 3.0, -0.5],
            [0.2, -0.3, 3.0, 0.1],
            [0.3, 0.2, 3.0, 0.7],
        ]);
        let batch = project_wire_with_counts(&w, &cam(), &[4]).unwrap();
        let mut grad = batch.zero_grad();
        for s in &mut grad.strokes {
            s.w_start = 1.0;
            s.w_end = -0.5;
        }
        let g = backprop_projection(&batch, &grad, &w, &cam()).unwrap();
        for gi in &g {
            assert_eq!(gi[0], 0.0);
            assert_eq!(gi[1], 0.0);
        }
        assert!(g.iter().any(|gi| gi[3] != 0.0));
        // depth still scales the on-screen width: d(fx w / z)/dz = -w_px / z
        let dz: f64 = batch
            .strokes
            .iter()
            .zip(&grad.strokes)
            .map(|(s, g)| -(s.w_start * g.w_start + s.w_end * g.w_end) / 3.0)
            .sum();
        let total: f64 = g.iter().map(|gi| gi[2]).sum();
        assert!((total - dz).abs() < 1e-12 * dz.abs().max(1.0), "{total} vs {dz}");
    }

    #[test]
    fn provenance_mismatch_is_an_error() {
        let w = curved_span(3.0);
        let mut batch = project_wire_with_counts(&w, &cam(), &[4]).unwrap();
        let grad = batch.zero_grad();
        batch.provenance.swap(0, 1);
        assert!(matches!(
            backprop_projection(&batch, &grad, &w, &cam()),
            Err(Error::Provenance(_))
        ));
        let other = random_wire::<f64>(6, 1);
        let batch = project_wire_with_counts(&w, &cam(), &[4]).unwrap();
        assert!(backprop_projection(&batch, &grad, &other, &cam()).is_err());
    }
}
