//! Anti-aliased rasterization of variable-width strokes with an analytic
//! backward pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::projection::{Stroke2D, StrokeBatch};
use crate::scalar::Real;
use crate::spline::bernstein;

/// Rows per parallel work band. Fixed so results do not depend on the
/// number of threads.
const BAND_ROWS: usize = 16;
/// Recursion limit of stroke flattening.
const MAX_FLATTEN_DEPTH: u32 = 12;

/// How overlapping strokes combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeMode {
    /// Ink is the largest coverage of any stroke.
    #[default]
    Max,
    /// Porter–Duff over of monochrome strokes: `1 - Π(1 - c)`.
    Over,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterSettings {
    /// Half-width in pixels of the smooth coverage falloff.
    pub aa_radius: f64,
    /// Control-polygon deviation in pixels below which a piece is drawn as a
    /// straight capsule.
    pub flatten_tolerance: f64,
    pub composite: CompositeMode,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            aa_radius: 1.0,
            flatten_tolerance: 0.25,
            composite: CompositeMode::Max,
        }
    }
}

impl RasterSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.aa_radius > 0.0 && self.aa_radius.is_finite()) {
            return Err(Error::Config(format!(
                "aa_radius must be positive, got {}",
                self.aa_radius
            )));
        }
        if !(self.flatten_tolerance > 0.0 && self.flatten_tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "flatten_tolerance must be positive, got {}",
                self.flatten_tolerance
            )));
        }
        Ok(())
    }
}

#[inline]
fn smoothstep<T: Real>(x: T) -> (T, T) {
    if x <= T::zero() {
        (T::zero(), T::zero())
    } else if x >= T::one() {
        (T::one(), T::zero())
    } else {
        let three = T::lit(3.0);
        let two = T::lit(2.0);
        (x * x * (three - two * x), T::lit(6.0) * x * (T::one() - x))
    }
}

/// Coverage of a pixel by a capsule and its gradient with respect to
/// `(a.x, a.y, b.x, b.y, w_a, w_b)`.
///
/// The signed distance `sd = |p - c(u)| - w(u)/2` uses the orthogonal
/// projection `u` of `p` onto the segment (clamped to `[0, 1]`) and the width
/// interpolated at `u`. Coverage is `1 - smoothstep((sd + aa) / (2 aa))`.
pub fn capsule_coverage_grad<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2], w_a: T, w_b: T, aa: T) -> (T, [T; 6]) {
    let zero = T::zero();
    let half = T::lit(0.5);
    let e = [b[0] - a[0], b[1] - a[1]];
    let v = [p[0] - a[0], p[1] - a[1]];
    let l2 = e[0] * e[0] + e[1] * e[1];
    let (u, interior) = if l2 > zero {
        let u0 = (v[0] * e[0] + v[1] * e[1]) / l2;
        if u0 <= zero {
            (zero, false)
        } else if u0 >= T::one() {
            (T::one(), false)
        } else {
            (u0, true)
        }
    } else {
        (zero, false)
    };
    let diff = [v[0] - u * e[0], v[1] - u * e[1]];
    let d = (diff[0] * diff[0] + diff[1] * diff[1]).sqrt();
    let r = (w_a + u * (w_b - w_a)) * half;
    let sd = d - r;
    let two_aa = aa + aa;
    let (s, ds) = smoothstep((sd + aa) / two_aa);
    let cov = T::one() - s;
    if ds == zero {
        return (cov, [zero; 6]);
    }
    let dcov = -ds / two_aa;
    let n = if d > zero {
        [diff[0] / d, diff[1] / d]
    } else {
        [zero, zero]
    };
    // sd as a function of (a, b, w) with u held fixed
    let mut g = [
        -n[0] * (T::one() - u),
        -n[1] * (T::one() - u),
        -n[0] * u,
        -n[1] * u,
        -(T::one() - u) * half,
        -u * half,
    ];
    if interior {
        // dependence of sd on u through the projection
        let dsd_du = -(n[0] * e[0] + n[1] * e[1]) - (w_b - w_a) * half;
        let two = T::lit(2.0);
        let du_da = [
            (-(e[0] + v[0]) + two * u * e[0]) / l2,
            (-(e[1] + v[1]) + two * u * e[1]) / l2,
        ];
        let du_db = [(v[0] - two * u * e[0]) / l2, (v[1] - two * u * e[1]) / l2];
        g[0] += dsd_du * du_da[0];
        g[1] += dsd_du * du_da[1];
        g[2] += dsd_du * du_db[0];
        g[3] += dsd_du * du_db[1];
    }
    (cov, g.map(|x| x * dcov))
}

/// Coverage of `pixel_center` by the capsule from `a` to `b` with full widths
/// `w_a`, `w_b`.
pub fn capsule_coverage<T: Real>(pixel_center: [T; 2], a: [T; 2], b: [T; 2], w_a: T, w_b: T, aa_radius: T) -> T {
    capsule_coverage_grad(pixel_center, a, b, w_a, w_b, aa_radius).0
}

/// Straight piece of a flattened stroke.
#[derive(Clone, Copy, Debug)]
struct Capsule<T> {
    stroke: usize,
    tau: [T; 2],
    a: [T; 2],
    b: [T; 2],
    w: [T; 2],
    /// Inclusive pixel bounds `(x0, y0, x1, y1)`, `None` if off-image.
    pixels: Option<(usize, usize, usize, usize)>,
}

fn polygon_deviation<T: Real>(q: &[[T; 2]; 4]) -> T {
    // distance of the inner controls from the chord
    let e = [q[3][0] - q[0][0], q[3][1] - q[0][1]];
    let l = (e[0] * e[0] + e[1] * e[1]).sqrt();
    let off = |p: &[T; 2]| {
        let v = [p[0] - q[0][0], p[1] - q[0][1]];
        if l > T::zero() {
            (v[0] * e[1] - v[1] * e[0]).abs() / l
        } else {
            (v[0] * v[0] + v[1] * v[1]).sqrt()
        }
    };
    off(&q[1]).max(off(&q[2]))
}

fn split_half<T: Real>(q: &[[T; 2]; 4]) -> ([[T; 2]; 4], [[T; 2]; 4]) {
    let h = T::lit(0.5);
    let mid = |a: &[T; 2], b: &[T; 2]| [(a[0] + b[0]) * h, (a[1] + b[1]) * h];
    let p01 = mid(&q[0], &q[1]);
    let p12 = mid(&q[1], &q[2]);
    let p23 = mid(&q[2], &q[3]);
    let p012 = mid(&p01, &p12);
    let p123 = mid(&p12, &p23);
    let m = mid(&p012, &p123);
    ([q[0], p01, p012, m], [m, p123, p23, q[3]])
}

/// Parameters at which the stroke is cut into straight pieces.
fn flatten_breaks<T: Real>(stroke: &Stroke2D<T>, tolerance: T) -> Vec<T> {
    fn rec<T: Real>(q: [[T; 2]; 4], t0: T, t1: T, tol: T, depth: u32, out: &mut Vec<T>) {
        if depth >= MAX_FLATTEN_DEPTH || polygon_deviation(&q) < tol {
            out.push(t1);
            return;
        }
        let tm = (t0 + t1) * T::lit(0.5);
        let (l, r) = split_half(&q);
        rec(l, t0, tm, tol, depth + 1, out);
        rec(r, tm, t1, tol, depth + 1, out);
    }
    let mut out = vec![T::zero()];
    rec(stroke.q, T::zero(), T::one(), tolerance, 0, &mut out);
    out
}

fn capsules<T: Real>(
    strokes: &[Stroke2D<T>],
    width: usize,
    height: usize,
    settings: &RasterSettings,
) -> Vec<Capsule<T>> {
    let tol = T::lit(settings.flatten_tolerance);
    let aa = T::lit(settings.aa_radius);
    let mut out = Vec::new();
    for (si, s) in strokes.iter().enumerate() {
        let breaks = flatten_breaks(s, tol);
        for w in breaks.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            let a = s.eval(t0);
            let b = s.eval(t1);
            let wa = s.width(t0);
            let wb = s.width(t1);
            let pad = wa.max(wb) * T::lit(0.5) + aa + T::one();
            let x0 = (a[0].min(b[0]) - pad).floor();
            let x1 = (a[0].max(b[0]) + pad).ceil();
            let y0 = (a[1].min(b[1]) - pad).floor();
            let y1 = (a[1].max(b[1]) + pad).ceil();
            let wmax = T::from_count(width) - T::one();
            let hmax = T::from_count(height) - T::one();
            let pixels = if x1 < T::zero() || y1 < T::zero() || x0 > wmax || y0 > hmax {
                None
            } else {
                let cl = |v: T, hi: T| v.max(T::zero()).min(hi).as_f64() as usize;
                Some((cl(x0, wmax), cl(y0, hmax), cl(x1, wmax), cl(y1, hmax)))
            };
            out.push(Capsule {
                stroke: si,
                tau: [t0, t1],
                a,
                b,
                w: [wa, wb],
                pixels,
            });
        }
    }
    out
}

/// Forward state of one band of rows.
struct Band<T> {
    y0: usize,
    rows: usize,
    ink: Vec<T>,
    /// Max mode: winning capsule per pixel. Over mode: unused.
    arg: Vec<u32>,
    /// Over mode: per-stroke coverage with its winning capsule, as sparse
    /// `(pixel, stroke, capsule, coverage)` entries in stroke order.
    over: Vec<(u32, u32, u32, T)>,
}

const NONE: u32 = u32::MAX;

fn render_band<T: Real>(
    caps: &[Capsule<T>],
    width: usize,
    y0: usize,
    rows: usize,
    settings: &RasterSettings,
) -> Band<T> {
    let aa = T::lit(settings.aa_radius);
    let n = width * rows;
    let mut band = Band {
        y0,
        rows,
        ink: vec![T::zero(); n],
        arg: vec![NONE; n],
        over: Vec::new(),
    };
    let y_end = y0 + rows - 1;
    match settings.composite {
        CompositeMode::Max => {
            for (ci, c) in caps.iter().enumerate() {
                let Some((px0, py0, px1, py1)) = c.pixels else { continue };
                if py1 < y0 || py0 > y_end {
                    continue;
                }
                for y in py0.max(y0)..=py1.min(y_end) {
                    let cy = T::from_count(y) + T::lit(0.5);
                    for x in px0..=px1 {
                        let cov = capsule_coverage([T::from_count(x) + T::lit(0.5), cy], c.a, c.b, c.w[0], c.w[1], aa);
                        let k = (y - y0) * width + x;
                        if cov > band.ink[k] {
                            band.ink[k] = cov;
                            band.arg[k] = ci as u32;
                        }
                    }
                }
            }
        }
        CompositeMode::Over => {
            // per-stroke max over its capsules, then 1 - Π(1 - c)
            let mut best = vec![T::zero(); n];
            let mut best_arg = vec![NONE; n];
            let mut touched: Vec<usize> = Vec::new();
            let mut transmit = vec![T::one(); n];
            let mut start = 0;
            while start < caps.len() {
                let stroke = caps[start].stroke;
                let mut end = start;
                while end < caps.len() && caps[end].stroke == stroke {
                    end += 1;
                }
                for (ci, c) in caps.iter().enumerate().take(end).skip(start) {
                    let Some((px0, py0, px1, py1)) = c.pixels else { continue };
                    if py1 < y0 || py0 > y_end {
                        continue;
                    }
                    for y in py0.max(y0)..=py1.min(y_end) {
                        let cy = T::from_count(y) + T::lit(0.5);
                        for x in px0..=px1 {
                            let cov =
                                capsule_coverage([T::from_count(x) + T::lit(0.5), cy], c.a, c.b, c.w[0], c.w[1], aa);
                            let k = (y - y0) * width + x;
                            if best_arg[k] == NONE {
                                touched.push(k);
                            }
                            if cov > best[k] || best_arg[k] == NONE {
                                best[k] = cov;
                                best_arg[k] = ci as u32;
                            }
                        }
                    }
                }
                touched.sort_unstable();
                for &k in &touched {
                    if best[k] > T::zero() {
                        transmit[k] *= T::one() - best[k];
                        band.over.push((k as u32, stroke as u32, best_arg[k], best[k]));
                    }
                    best[k] = T::zero();
                    best_arg[k] = NONE;
                }
                touched.clear();
                start = end;
            }
            for k in 0..n {
                band.ink[k] = T::one() - transmit[k];
            }
        }
    }
    band
}

fn bands(height: usize) -> Vec<(usize, usize)> {
    (0..height)
        .step_by(BAND_ROWS)
        .map(|y0| (y0, BAND_ROWS.min(height - y0)))
        .collect()
}

fn check_strokes<T: Real>(strokes: &StrokeBatch<T>) -> Result<()> {
    for (i, s) in strokes.strokes.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::InvalidSize(format!("stroke {i} has non-finite parameters")));
        }
        if s.w_start < T::zero() || s.w_end < T::zero() {
            return Err(Error::InvalidSize(format!("stroke {i} has a negative width")));
        }
    }
    Ok(())
}

/// Render strokes into a `width × height` ink image (0 background, 1 ink).
pub fn rasterize<T: Real>(
    strokes: &StrokeBatch<T>,
    width: usize,
    height: usize,
    settings: &RasterSettings,
) -> Result<ImageBuffer<T>> {
    settings.validate()?;
    check_strokes(strokes)?;
    let mut img = ImageBuffer::new(width, height);
    if width == 0 || height == 0 || strokes.is_empty() {
        return Ok(img);
    }
    let caps = capsules(&strokes.strokes, width, height, settings);
    let out: Vec<Band<T>> = bands(height)
        .into_par_iter()
        .map(|(y0, rows)| render_band(&caps, width, y0, rows, settings))
        .collect();
    let data = img.data_mut();
    for b in out {
        data[b.y0 * width..(b.y0 + b.rows) * width].copy_from_slice(&b.ink);
    }
    Ok(img)
}

/// Pull a capsule gradient back to its stroke's parameters.
fn accumulate<T: Real>(acc: &mut Stroke2D<T>, c: &Capsule<T>, g: &[T; 6], scale: T) {
    for end in 0..2 {
        let tau = c.tau[end];
        let bern = bernstein(tau);
        let (gx, gy, gw) = (g[2 * end] * scale, g[2 * end + 1] * scale, g[4 + end] * scale);
        for i in 0..4 {
            acc.q[i][0] += bern[i] * gx;
            acc.q[i][1] += bern[i] * gy;
        }
        acc.w_start += (T::one() - tau) * gw;
        acc.w_end += tau * gw;
    }
}

/// Gradient of `Σ pixel_grad · ink` with respect to every stroke parameter.
pub fn rasterize_backward<T: Real>(
    strokes: &StrokeBatch<T>,
    width: usize,
    height: usize,
    settings: &RasterSettings,
    pixel_grad: &ImageBuffer<T>,
) -> Result<Vec<Stroke2D<T>>> {
    settings.validate()?;
    check_strokes(strokes)?;
    pixel_grad.ensure_dims(width, height)?;
    let n = strokes.len();
    if width == 0 || height == 0 || n == 0 {
        return Ok(vec![Stroke2D::zero(); n]);
    }
    let caps = capsules(&strokes.strokes, width, height, settings);
    let aa = T::lit(settings.aa_radius);
    let grads = pixel_grad.data();
    let partial: Vec<Vec<(usize, Stroke2D<T>)>> = bands(height)
        .into_par_iter()
        .map(|(y0, rows)| {
            let band = render_band(&caps, width, y0, rows, settings);
            let mut acc: std::collections::BTreeMap<usize, Stroke2D<T>> = Default::default();
            let center = |k: usize| {
                let x = k % width;
                let y = y0 + k / width;
                [T::from_count(x) + T::lit(0.5), T::from_count(y) + T::lit(0.5)]
            };
            match settings.composite {
                CompositeMode::Max => {
                    for (k, &ci) in band.arg.iter().enumerate() {
                        let g = grads[y0 * width + k];
                        if ci == NONE || g == T::zero() {
                            continue;
                        }
                        let c = &caps[ci as usize];
                        let (_, dg) = capsule_coverage_grad(center(k), c.a, c.b, c.w[0], c.w[1], aa);
                        accumulate(acc.entry(c.stroke).or_insert_with(Stroke2D::zero), c, &dg, g);
                    }
                }
                CompositeMode::Over => {
                    // d ink / d c_s = Π_{t≠s} (1 - c_t)
                    let mut ones = vec![0u32; band.ink.len()];
                    let mut rest = vec![T::one(); band.ink.len()];
                    for &(k, _, _, cov) in &band.over {
                        if cov >= T::one() {
                            ones[k as usize] += 1;
                        } else {
                            rest[k as usize] *= T::one() - cov;
                        }
                    }
                    for &(k, _, ci, cov) in &band.over {
                        let k = k as usize;
                        let g = grads[y0 * width + k];
                        if g == T::zero() {
                            continue;
                        }
                        let others = if cov >= T::one() {
                            if ones[k] == 1 {
                                rest[k]
                            } else {
                                T::zero()
                            }
                        } else if ones[k] == 0 {
                            rest[k] / (T::one() - cov)
                        } else {
                            T::zero()
                        };
                        if others == T::zero() {
                            continue;
                        }
                        let c = &caps[ci as usize];
                        let (_, dg) = capsule_coverage_grad(center(k), c.a, c.b, c.w[0], c.w[1], aa);
                        accumulate(acc.entry(c.stroke).or_insert_with(Stroke2D::zero), c, &dg, g * others);
                    }
                }
            }
            acc.into_iter().collect()
        })
        .collect();
    let mut out = vec![Stroke2D::zero(); n];
    for band in partial {
        for (s, g) in band {
            out[s].add_scaled(&g, T::one());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stroke(q: [[f64; 2]; 4], wa: f64, wb: f64) -> StrokeBatch<f64> {
        StrokeBatch::from_strokes(vec![Stroke2D::new(q, wa, wb)])
    }

    fn curvy() -> Stroke2D<f64> {
        Stroke2D::new([[5.3, 20.1], [12.7, 3.2], [24.4, 30.6], [28.9, 11.8]], 3.1, 1.7)
    }

    #[test]
    fn coverage_interior_and_exterior() {
        let a = [0.0f64, 0.0];
        let b = [10.0, 0.0];
        assert_eq!(capsule_coverage([5.0, 0.0], a, b, 4.0, 4.0, 1.0), 1.0);
        assert_eq!(capsule_coverage([5.0, 3.0], a, b, 4.0, 4.0, 1.0), 0.0);
        assert!((capsule_coverage([5.0, 2.0], a, b, 4.0, 4.0, 1.0) - 0.5).abs() < 1e-15);
        // beyond the end cap
        assert_eq!(capsule_coverage([13.0, 0.0], a, b, 4.0, 4.0, 1.0), 0.0);
    }

    #[test]
    fn coverage_gradient_matches_finite_differences() {
        let cases = [
            ([5.0, 2.3], [0.0, 0.0], [10.0, 0.5], 4.0, 3.0),
            ([11.2, 0.7], [0.0, 0.0], [10.0, 0.5], 2.0, 3.0),
            ([3.0, -1.9], [1.0, 1.0], [7.0, -2.0], 1.5, 2.5),
        ];
        for (p, a, b, wa, wb) in cases {
            let (_, g) = capsule_coverage_grad(p, a, b, wa, wb, 1.0);
            let x = [a[0], a[1], b[0], b[1], wa, wb];
            let h = 1e-6;
            for i in 0..6 {
                let f = |d: f64| {
                    let mut y = x;
                    y[i] += d;
                    capsule_coverage(p, [y[0], y[1]], [y[2], y[3]], y[4], y[5], 1.0)
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(rel < 1e-3, "case {p:?} param {i}: fd {fd} analytic {}", g[i]);
            }
        }
    }

    #[test]
    fn empty_batch_renders_blank() {
        let img = rasterize(&StrokeBatch::<f64>::empty(), 16, 8, &RasterSettings::default()).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_stroke_inks_its_row() {
        let s = stroke([[2.0, 10.5], [10.0, 10.5], [20.0, 10.5], [28.0, 10.5]], 2.0, 2.0);
        let img = rasterize(&s, 32, 32, &RasterSettings::default()).unwrap();
        for x in 3..27 {
            assert!(img.get(x, 10) > 0.99, "x {x}: {}", img.get(x, 10));
        }
        assert!(img.get(15, 13) == 0.0);
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn max_composite_is_idempotent() {
        let one = StrokeBatch::from_strokes(vec![curvy()]);
        let two = StrokeBatch::from_strokes(vec![curvy(), curvy()]);
        let s = RasterSettings::default();
        assert_eq!(
            rasterize(&one, 32, 32, &s).unwrap(),
            rasterize(&two, 32, 32, &s).unwrap()
        );
    }

    #[test]
    fn zero_pixel_gradient_gives_zero() {
        let b = StrokeBatch::from_strokes(vec![curvy()]);
        let g = rasterize_backward(&b, 32, 32, &RasterSettings::default(), &ImageBuffer::new(32, 32)).unwrap();
        assert_eq!(g, vec![Stroke2D::zero()]);
    }

    fn fd_check(settings: RasterSettings, batch: StrokeBatch<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pg = ImageBuffer::from_vec(32, 32, noise).unwrap();
        let loss = |b: &StrokeBatch<f64>| {
            let img = rasterize(b, 32, 32, &settings).unwrap();
            img.data().iter().zip(pg.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let g = rasterize_backward(&batch, 32, 32, &settings, &pg).unwrap();
        let h = 1e-3;
        for (si, s) in batch.strokes.iter().enumerate() {
            let base = s.to_array();
            let ga = g[si].to_array();
            for i in 0..10 {
                let f = |d: f64| {
                    let mut p = base;
                    p[i] += d;
                    let mut b = batch.clone();
                    b.strokes[si] = Stroke2D::from_array(&p);
                    loss(&b)
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let rel = (fd - ga[i]).abs() / fd.abs().max(ga[i].abs()).max(1e-6);
                assert!(rel < 1e-2, "stroke {si} param {i}: fd {fd} analytic {}", ga[i]);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        fd_check(RasterSettings::default(), StrokeBatch::from_strokes(vec![curvy()]), 1);
    }

    #[test]
    fn over_backward_matches_finite_differences() {
        let other = Stroke2D::new([[3.0, 4.0], [14.0, 28.0], [20.0, 2.0], [30.0, 26.0]], 2.2, 4.0);
        let settings = RasterSettings {
            composite: CompositeMode::Over,
            ..Default::default()
        };
        fd_check(settings, StrokeBatch::from_strokes(vec![curvy(), other]), 2);
    }

    #[test]
    fn gradient_is_translation_equivariant() {
        let s = curvy();
        let shifted = Stroke2D::from_array(&std::array::from_fn(|i| {
            let a = s.to_array();
            match i {
                8 | 9 => a[i],
                _ if i % 2 == 0 => a[i] + 7.0,
                _ => a[i] - 3.0,
            }
        }));
        let mut pg = ImageBuffer::new(48, 48);
        pg.set(15, 14, 1.0);
        let mut pg2 = ImageBuffer::new(48, 48);
        pg2.set(22, 11, 1.0);
        let st = RasterSettings::default();
        let g1 = rasterize_backward(&StrokeBatch::from_strokes(vec![s]), 48, 48, &st, &pg).unwrap();
        let g2 = rasterize_backward(&StrokeBatch::from_strokes(vec![shifted]), 48, 48, &st, &pg2).unwrap();
        let (a, b): ([f64; 10], [f64; 10]) = (g1[0].to_array(), g2[0].to_array());
        assert!(a.iter().any(|&v| v != 0.0));
        for i in 0..10 {
            assert!(
                (a[i] - b[i]).abs() <= 1e-9 * a[i].abs().max(1.0),
                "{i}: {} vs {}",
                a[i],
                b[i]
            );
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let b = StrokeBatch::from_strokes(vec![curvy()]);
        assert!(rasterize_backward(&b, 32, 32, &RasterSettings::default(), &ImageBuffer::new(31, 32)).is_err());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let strokes: Vec<_> = (0..40)
            .map(|_| {
                Stroke2D::new(
                    std::array::from_fn(|_| [rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0)]),
                    rng.gen_range(0.5..4.0),
                    rng.gen_range(0.5..4.0),
                )
            })
            .collect();
        let batch = StrokeBatch::from_strokes(strokes);
        let pg = ImageBuffer::from_fn(64, 64, |x, y| ((x * 7 + y * 3) % 11) as f64 - 5.0);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let st = RasterSettings::default();
                (
                    rasterize(&batch, 64, 64, &st).unwrap(),
                    rasterize_backward(&batch, 64, 64, &st, &pg).unwrap(),
                )
            })
        };
        let (i1, g1) = run(1);
        let (i4, g4) = run(4);
        assert_eq!(i1, i4);
        assert_eq!(g1, g4);
    }
}
