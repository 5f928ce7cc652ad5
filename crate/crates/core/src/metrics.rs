//! Structural metrics of a wire and the projection convergence report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::normalize_unit_diagonal;
use crate::projection::{project_wire_with_counts, reference_projection, screen_space_error, Camera};
use crate::scalar::Real;
use crate::spline::{BSpline, Wire};

/// Parameter samples of the width profile in [`component_count`].
pub const COMPONENT_SAMPLES: usize = 4096;
/// Reference samples behind each convergence row.
pub const REPORT_REFERENCE_SAMPLES: usize = 20_000;

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];
const LENGTH_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 40;

fn speed<T: Real>(curve: &BSpline<T, 3>, t: T) -> T {
    let d = curve.evaluate(t, 1).expect("t in domain");
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn gauss<T: Real>(curve: &BSpline<T, 3>, a: T, b: T) -> T {
    let half = (b - a) * T::lit(0.5);
    let mid = (a + b) * T::lit(0.5);
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(&x, w)| T::lit(w) * speed(curve, mid + half * T::lit(x)))
        .sum::<T>()
        * half
}

fn adaptive<T: Real>(curve: &BSpline<T, 3>, a: T, b: T, whole: T, depth: u32) -> T {
    let m = (a + b) * T::lit(0.5);
    let left = gauss(curve, a, m);
    let right = gauss(curve, m, b);
    let split = left + right;
    let tol = T::lit(LENGTH_TOL).max(T::epsilon() * T::lit(16.0));
    if depth >= MAX_DEPTH || (split - whole).abs() <= tol * split.abs() {
        return split;
    }
    adaptive(curve, a, m, left, depth + 1) + adaptive(curve, m, b, right, depth + 1)
}

/// Arc length of the spatial curve, by adaptive Gauss–Legendre quadrature
/// on each span.
pub fn total_length<T: Real>(wire: &Wire<T>) -> T {
    let curve = wire.spatial_curve();
    wire.spans()
        .iter()
        .map(|s| adaptive(&curve, s.start, s.end, gauss(&curve, s.start, s.end), 0))
        .sum()
}

/// Maximal parameter runs whose clamped width reaches a threshold.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentSet {
    /// Disjoint, ordered `[t_a, t_b]` intervals.
    pub components: Vec<[f64; 2]>,
    /// Curve points at `t_a` and `t_b` of each component.
    pub endpoints: Vec<[[f64; 3]; 2]>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Components of the wire where the rendered width is at least `threshold`,
/// from [`COMPONENT_SAMPLES`] uniform parameter samples. Runs shorter than
/// one sample spacing are dropped.
pub fn component_count<T: Real>(wire: &Wire<T>, threshold: T) -> Result<ComponentSet> {
    if !(threshold > T::zero()) {
        return Err(Error::Config(format!(
            "width threshold must be positive, got {threshold}"
        )));
    }
    let curve = wire.curve();
    let n = COMPONENT_SAMPLES;
    let t_at = |i: usize| i as f64 / (n - 1) as f64;
    let above: Vec<bool> = (0..n)
        .map(|i| curve.evaluate(T::lit(t_at(i)), 0).expect("t in domain")[3] >= threshold)
        .collect();
    let min_extent = 1.0 / n as f64;
    let mut out = ComponentSet::default();
    let mut i = 0;
    while i < n {
        if !above[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < n && above[i + 1] {
            i += 1;
        }
        let (ta, tb) = (t_at(start), t_at(i));
        if tb - ta >= min_extent {
            let p = |t: f64| {
                let v = curve.evaluate(T::lit(t), 0).expect("t in domain");
                [v[0].as_f64(), v[1].as_f64(), v[2].as_f64()]
            };
            out.components.push([ta, tb]);
            out.endpoints.push([p(ta), p(tb)]);
        }
        i += 1;
    }
    Ok(out)
}

fn d3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn gap(a: &[[f64; 3]; 2], b: &[[f64; 3]; 2]) -> f64 {
    a.iter()
        .flat_map(|p| b.iter().map(move |q| d3(p, q)))
        .fold(f64::INFINITY, f64::min)
}

/// Weight of the minimum spanning tree over components, where two
/// components are joined at their closest pair of endpoints.
pub fn mst_connectivity_cost(set: &ComponentSet) -> Result<f64> {
    let n = set.endpoints.len();
    if n == 0 {
        return Err(Error::Degenerate("no components to connect".into()));
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut total = 0.0;
    for _ in 0..n {
        let u = (0..n)
            .filter(|&i| !in_tree[i])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))
            .expect("a vertex remains");
        in_tree[u] = true;
        total += best[u];
        for v in 0..n {
            if !in_tree[v] {
                best[v] = best[v].min(gap(&set.endpoints[u], &set.endpoints[v]));
            }
        }
    }
    Ok(total)
}

/// One subdivision level of the convergence report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// Segments per span.
    pub subdivision: u32,
    /// Mean 3D control-polygon length of the dense segments.
    pub h: f64,
    /// Screen error normalized by the reference bbox diagonal.
    pub error: f64,
}

/// Screen error of the projection at each uniform subdivision count, for
/// the wire rescaled to unit bounding-box diagonal.
pub fn convergence_report(wire: &Wire<f64>, camera: &Camera<f64>, counts: &[u32]) -> Result<Vec<ConvergenceRow>> {
    if counts.len() < 3 {
        return Err(Error::Config(format!("need at least 3 levels, got {}", counts.len())));
    }
    let wire = normalize_unit_diagonal(wire);
    let spans = wire.spans().len();
    let reference = reference_projection(&wire, camera, REPORT_REFERENCE_SAMPLES)?;
    counts
        .iter()
        .map(|&s| {
            let batch = project_wire_with_counts(&wire, camera, &vec![s; spans])?;
            let segs = wire.to_bezier_segments(s)?;
            let h = segs
                .iter()
                .map(|b| {
                    b.points
                        .windows(2)
                        .map(|w| (0..3).map(|k| (w[1][k] - w[0][k]).powi(2)).sum::<f64>().sqrt())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / segs.len() as f64;
            Ok(ConvergenceRow {
                subdivision: s,
                h,
                error: screen_space_error(&batch, &reference)?,
            })
        })
        .collect()
}

/// Least-squares slope of `log error` against `log h`.
pub fn loglog_slope(rows: &[ConvergenceRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.h.ln(), r.error.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `h,error` rows.
pub fn report_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("h,error\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r.h, r.error));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{canonical_camera, random_wire};
    use crate::spline::{fit_to_polyline, ControlPoint4, FitOptions, KnotVector, Polyline, WidthClamp};

    fn clamp() -> WidthClamp<f64> {
        WidthClamp::new(0.0, 0.1).unwrap()
    }

    fn line() -> Wire<f64> {
        let c = (0..4)
            .map(|i| ControlPoint4::new(i as f64 / 3.0, 0.0, 0.0, 0.0))
            .collect();
        Wire::uniform(c, clamp()).unwrap()
    }

    #[test]
    fn straight_wire_has_unit_length() {
        assert!((total_length(&line()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fitted_circle_length() {
        let pts: Vec<[f64; 3]> = (0..=64)
            .map(|i| {
                let a = i as f64 / 64.0 * std::f64::consts::TAU;
                [a.cos(), a.sin(), 0.0]
            })
            .collect();
        let fit = fit_to_polyline(Polyline::Xyz(&pts), 24, 0.05, clamp(), FitOptions::default()).unwrap();
        let l = total_length(&fit.wire);
        assert!((l / std::f64::consts::TAU - 1.0).abs() < 0.01, "{l}");
    }

    #[test]
    fn length_scales_and_survives_insertion() {
        let w = random_wire::<f64>(9, 3);
        let l = total_length(&w);
        let mut big = w.clone();
        for c in big.controls_mut() {
            c.x *= 2.0;
            c.y *= 2.0;
            c.z *= 2.0;
        }
        assert!((total_length(&big) / l - 2.0).abs() < 1e-9);
        let (ins, _) = w.insert_knot(0.37).unwrap();
        assert!((total_length(&ins) / l - 1.0).abs() < 1e-8);
    }

    fn with_widths(widths: &[f64]) -> Wire<f64> {
        let n = widths.len();
        let c = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| ControlPoint4::new(i as f64 / (n - 1) as f64, 0.0, 0.0, clamp().invert(w)))
            .collect();
        Wire::new(KnotVector::clamped_uniform(n).unwrap(), c, clamp()).unwrap()
    }

    #[test]
    fn components_follow_width_profile() {
        assert_eq!(component_count(&with_widths(&[0.05; 8]), 0.01).unwrap().len(), 1);
        let dip = with_widths(&[0.05, 0.05, 0.05, 0.0001, 0.0001, 0.05, 0.05, 0.05]);
        let set = component_count(&dip, 0.01).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.components[0][1] < set.components[1][0]);
        assert_eq!(component_count(&with_widths(&[0.001; 8]), 0.01).unwrap().len(), 0);
        assert!(component_count(&dip, 0.0).is_err());
    }

    #[test]
    fn component_endpoints_are_on_the_curve() {
        let dip = with_widths(&[0.05, 0.05, 0.05, 0.0001, 0.0001, 0.05, 0.05, 0.05]);
        let set = component_count(&dip, 0.01).unwrap();
        assert_eq!(set.endpoints[0][0], [0.0, 0.0, 0.0]);
        assert!((set.endpoints[1][1][0] - 1.0).abs() < 1e-12);
        let gap = set.endpoints[1][0][0] - set.endpoints[0][1][0];
        assert!((mst_connectivity_cost(&set).unwrap() - gap).abs() < 1e-12);
    }

    fn set_of(segments: &[[f64; 2]]) -> ComponentSet {
        ComponentSet {
            components: segments.to_vec(),
            endpoints: segments.iter().map(|s| [[s[0], 0.0, 0.0], [s[1], 0.0, 0.0]]).collect(),
        }
    }

    #[test]
    fn mst_costs() {
        assert_eq!(mst_connectivity_cost(&set_of(&[[0.0, 1.0]])).unwrap(), 0.0);
        assert!((mst_connectivity_cost(&set_of(&[[0.0, 1.0], [1.5, 2.0]])).unwrap() - 0.5).abs() < 1e-15);
        // gaps 1 and 2, far pair 3
        let three = set_of(&[[0.0, 1.0], [2.0, 3.0], [5.0, 6.0]]);
        assert!((mst_connectivity_cost(&three).unwrap() - 3.0).abs() < 1e-15);
        assert!(mst_connectivity_cost(&ComponentSet::default()).is_err());
    }

    #[test]
    fn convergence_rows_decrease() {
        let w = random_wire::<f64>(8, 21);
        let rows = convergence_report(&w, &canonical_camera(), &[1, 2, 4, 8, 16]).unwrap();
        for p in rows.windows(2) {
            assert!(p[1].error < p[0].error);
            assert!(p[1].h < p[0].h);
        }
        let slope = loglog_slope(&rows);
        assert!((1.8..=2.2).contains(&slope), "{slope}");
        assert!(report_csv(&rows).starts_with("h,error\n"));
        assert!(convergence_report(&w, &canonical_camera(), &[1, 2]).is_err());
    }
}
