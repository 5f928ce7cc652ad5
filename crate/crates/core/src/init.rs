//! Initial wires: volume sampling, TSP ordering and polyline import.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::optimize::{InitSpec, RunConfig, ViewTarget};
use crate::projection::Camera;
use crate::scalar::Real;
use crate::spline::{fit_to_polyline, ControlPoint4, FitOptions, Polyline, WidthClamp, Wire};
use crate::topology::Bounds;

const MAX_TRIALS: u64 = 10_000_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// Region from which initial control positions are drawn.
#[derive(Clone, Debug)]
pub enum InitVolume {
    /// Ball of `radius` about the origin.
    Sphere { radius: f64 },
    /// Back-projected silhouette clipped to a camera depth slab.
    SilhouetteCone {
        mask: ImageBuffer<f64>,
        camera: Camera<f64>,
        depth_range: [f64; 2],
    },
}

impl InitVolume {
    fn validate(&self) -> Result<()> {
        match self {
            InitVolume::Sphere { radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::Config(format!("sphere radius must be positive, got {radius}")));
                }
            }
            InitVolume::SilhouetteCone {
                mask,
                camera,
                depth_range,
            } => {
                mask.ensure_dims(camera.width, camera.height)?;
                let [a, b] = *depth_range;
                if !(a > camera.near && b > a && b.is_finite()) {
                    return Err(Error::Config(format!(
                        "depth range [{a}, {b}] must lie beyond the near plane"
                    )));
                }
                if !mask.data().iter().any(|&v| v > 0.5) {
                    return Err(Error::Config("silhouette mask has no foreground".into()));
                }
            }
        }
        Ok(())
    }

    /// Box or ball enclosing the volume, used for reinitialization.
    pub fn bounds(&self, samples: &[[f64; 3]]) -> Result<Bounds> {
        match self {
            InitVolume::Sphere { radius } => Ok(Bounds::Sphere {
                center: [0.0; 3],
                radius: *radius,
            }),
            InitVolume::SilhouetteCone { .. } => Bounds::enclosing(samples),
        }
    }
}

/// Rejection-sample `count` points uniformly from the volume.
pub fn sample_init_volume(volume: &InitVolume, count: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if count < 4 {
        return Err(Error::Config(format!("need at least 4 samples, got {count}")));
    }
    volume.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut trials: u64 = 0;
    while out.len() < count {
        trials += 1;
        if trials > MAX_TRIALS && (out.len() as f64) < MIN_ACCEPTANCE * trials as f64 {
            return Err(Error::Degenerate(format!(
                "init volume acceptance rate {:.2e} after {trials} trials",
                out.len() as f64 / trials as f64
            )));
        }
        match volume {
            InitVolume::Sphere { radius } => {
                let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-*radius..=*radius));
                if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                    out.push(p);
                }
            }
            InitVolume::SilhouetteCone {
                mask,
                camera,
                depth_range,
            } => {
                // proposal: camera-space box around the frustum slab
                let [z0, z1] = *depth_range;
                let xr = [
                    -camera.cx / camera.fx * z1,
                    (camera.width as f64 - camera.cx) / camera.fx * z1,
                ];
                let yr = [
                    -camera.cy / camera.fy * z1,
                    (camera.height as f64 - camera.cy) / camera.fy * z1,
                ];
                let c = [
                    rng.gen_range(xr[0].min(0.0)..=xr[1].max(0.0)),
                    rng.gen_range(yr[0].min(0.0)..=yr[1].max(0.0)),
                    rng.gen_range(z0..=z1),
                ];
                let u = camera.fx * c[0] / c[2] + camera.cx;
                let v = camera.fy * c[1] / c[2] + camera.cy;
                if u < 0.0 || v < 0.0 || u >= camera.width as f64 || v >= camera.height as f64 {
                    continue;
                }
                if mask.get(u as usize, v as usize) > 0.5 {
                    out.push(camera.to_world(&c));
                }
            }
        }
    }
    Ok(out)
}

fn d3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Length of the open path visiting `points` in `order`.
pub fn path_length(points: &[[f64; 3]], order: &[usize]) -> f64 {
    order.windows(2).map(|w| d3(&points[w[0]], &points[w[1]])).sum()
}

/// Nearest-neighbor open tour starting at index 0.
pub fn nearest_neighbor_order(points: &[[f64; 3]]) -> Vec<usize> {
    let n = points.len();
    let mut used = vec![false; n];
    let mut order = Vec::with_capacity(n);
    if n == 0 {
        return order;
    }
    let mut cur = 0;
    used[0] = true;
    order.push(0);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, p) in points.iter().enumerate() {
            if !used[j] {
                let d = d3(&points[cur], p);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
        }
        used[best] = true;
        order.push(best);
        cur = best;
    }
    order
}

/// Open-path TSP heuristic: nearest neighbor, then 2-opt (including end
/// reversals) until no move improves or `100·n` moves were applied.
pub fn tsp_order(points: &[[f64; 3]]) -> Result<Vec<usize>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidSize(format!("TSP needs at least 2 points, got {n}")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSize("TSP points must be finite".into()));
    }
    let mut order = nearest_neighbor_order(points);
    let cap = 100 * n;
    let mut moves = 0;
    let d = |a: usize, b: usize| d3(&points[a], &points[b]);
    'outer: loop {
        let mut improved = false;
        // reverse order[i..=j]; edges (i-1, i) and (j, j+1) exist unless at an end
        for i in 0..n - 1 {
            for j in i + 1..n {
                let before = if i > 0 { d(order[i - 1], order[i]) } else { 0.0 };
                let after = if j + 1 < n { d(order[j], order[j + 1]) } else { 0.0 };
                let new_before = if i > 0 { d(order[i - 1], order[j]) } else { 0.0 };
                let new_after = if j + 1 < n { d(order[i], order[j + 1]) } else { 0.0 };
                if new_before + new_after < before + after - 1e-12 {
                    order[i..=j].reverse();
                    improved = true;
                    moves += 1;
                    if moves >= cap {
                        break 'outer;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(order)
}

/// Fit a wire to an ordered path with uniform width.
pub fn wire_from_path<T: Real>(
    points: &[[f64; 3]],
    control_count: usize,
    initial_width: T,
    clamp: WidthClamp<T>,
) -> Result<Wire<T>> {
    let pts: Vec<[T; 3]> = points.iter().map(|p| p.map(T::lit)).collect();
    Ok(fit_to_polyline(
        Polyline::Xyz(&pts),
        control_count,
        initial_width,
        clamp,
        FitOptions::default(),
    )?
    .wire)
}

/// Starting wire and reinitialization bounds for a run. Silhouette cones
/// read the mask and camera of the referenced view.
pub fn initial_wire<T: Real>(config: &RunConfig, views: &[ViewTarget<f64>]) -> Result<(Wire<T>, Bounds)> {
    let clamp = WidthClamp::new(T::lit(config.width_min), T::lit(config.width_max))?;
    let width = T::lit(config.initial_width);
    let volume = match &config.init {
        InitSpec::Sphere { radius } => InitVolume::Sphere { radius: *radius },
        InitSpec::SilhouetteCone { view, depth_range } => {
            let v = views
                .get(*view)
                .ok_or_else(|| Error::Config(format!("init view {view} does not exist")))?;
            let mask = v
                .mask
                .clone()
                .ok_or_else(|| Error::Config(format!("init view {view} has no mask")))?;
            InitVolume::SilhouetteCone {
                mask,
                camera: v.camera.clone(),
                depth_range: *depth_range,
            }
        }
        InitSpec::Polyline { path } => {
            let pts = import_polyline(path)?;
            let bounds = Bounds::enclosing(&pts)?;
            return Ok((wire_from_path(&pts, config.control_count, width, clamp)?, bounds));
        }
    };
    let samples = sample_init_volume(&volume, config.control_count, config.seed)?;
    let order = tsp_order(&samples)?;
    let bounds = volume.bounds(&samples)?;
    // one control per sample, in tour order
    let raw = clamp.invert(width);
    let controls = order
        .iter()
        .map(|&i| ControlPoint4::new(T::lit(samples[i][0]), T::lit(samples[i][1]), T::lit(samples[i][2]), raw))
        .collect();
    Ok((Wire::uniform(controls, clamp)?, bounds))
}

/// Parse whitespace-separated `x y z` rows.
pub fn parse_polyline(text: &str, path: &Path) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("not a number: '{t}'"))))
            .collect::<Result<_>>()?;
        if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("expected 3 finite values, got {}", vals.len())));
        }
        out.push([vals[0], vals[1], vals[2]]);
    }
    if out.len() < 2 {
        return Err(Error::format(
            path,
            format!("polyline needs at least 2 rows, got {}", out.len()),
        ));
    }
    Ok(out)
}

pub fn import_polyline(path: impl AsRef<Path>) -> Result<Vec<[f64; 3]>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_polyline(&text, path)
}
