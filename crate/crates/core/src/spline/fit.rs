use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{dist, dot, sub, Real};

use super::bspline::BSpline;
use super::knots::KnotVector;
use super::DEGREE;

/// Tuning for [`fit_bspline`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// Foot-point parameter correction passes after the chord-length solve.
    pub correction_passes: usize,
    /// Weight of the second-difference regularizer relative to the mean
    /// diagonal of the normal matrix. Keeps under-determined fits well posed.
    pub smoothing: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            correction_passes: 8,
            smoothing: 1e-10,
        }
    }
}

/// Least-squares cubic fit with interpolated endpoints.
///
/// Parameters start from chord length and are refined by Newton foot-point
/// projection. Returns the spline and the RMS distance from the points to
/// their fitted parameters.
pub fn fit_bspline<T: Real, const D: usize>(
    points: &[[T; D]],
    control_count: usize,
    options: FitOptions,
) -> Result<(BSpline<T, D>, T)> {
    if points.len() < 2 {
        return Err(Error::InvalidSize(format!(
            "fitting needs at least 2 points, got {}",
            points.len()
        )));
    }
    if control_count < DEGREE + 1 {
        return Err(Error::InvalidSize(format!(
            "a cubic wire needs at least 4 controls, got {control_count}"
        )));
    }
    if points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Degenerate("non-finite input point".into()));
    }
    let mut params = chord_length_parameters(points)?;
    let knots = KnotVector::<T>::clamped_uniform(control_count)?;
    let mut spline = solve(points, &params, &knots, options.smoothing)?;
    for _ in 0..options.correction_passes {
        let last = params.len() - 1;
        for (k, t) in params.iter_mut().enumerate().take(last).skip(1) {
            *t = foot_point(&spline, &points[k], *t);
        }
        spline = solve(points, &params, &knots, options.smoothing)?;
    }
    let sq: T = points
        .iter()
        .zip(&params)
        .map(|(p, &t)| {
            let c = spline.evaluate(t, 0).expect("parameter in domain");
            let d = dist(p, &c);
            d * d
        })
        .sum();
    let rms = (sq / T::from_count(points.len())).sqrt();
    Ok((spline, rms))
}

fn chord_length_parameters<T: Real, const D: usize>(points: &[[T; D]]) -> Result<Vec<T>> {
    let mut acc = vec![T::zero(); points.len()];
    for i in 1..points.len() {
        acc[i] = acc[i - 1] + dist(&points[i], &points[i - 1]);
    }
    let total = acc[points.len() - 1];
    if !(total > T::zero()) {
        return Err(Error::Degenerate("all polyline points coincide".into()));
    }
    for a in acc.iter_mut() {
        *a /= total;
    }
    let last = acc.len() - 1;
    acc[last] = T::one();
    Ok(acc)
}

/// A few damped Newton steps on `‖C(t) − p‖²`, kept inside `[0, 1]`.
fn foot_point<T: Real, const D: usize>(spline: &BSpline<T, D>, p: &[T; D], mut t: T) -> T {
    for _ in 0..4 {
        let c = spline.evaluate(t, 0).expect("domain");
        let d1 = spline.evaluate(t, 1).expect("domain");
        let d2 = spline.evaluate(t, 2).expect("domain");
        let r = sub(&c, p);
        let g = dot(&r, &d1);
        let h = dot(&d1, &d1) + dot(&r, &d2);
        if !(h > T::zero()) {
            break;
        }
        t = (t - g / h).max(T::zero()).min(T::one());
    }
    t
}

fn solve<T: Real, const D: usize>(
    points: &[[T; D]],
    params: &[T],
    knots: &KnotVector<T>,
    smoothing: f64,
) -> Result<BSpline<T, D>> {
    let n = knots.control_count();
    let interior = n - 2;
    let first = points[0].map(|v| v.as_f64());
    let last = points[points.len() - 1].map(|v| v.as_f64());

    let mut ata = DMatrix::<f64>::zeros(interior, interior);
    let mut atb = DMatrix::<f64>::zeros(interior, D);
    let u = knots.as_slice();
    for (p, &t) in points.iter().zip(params) {
        let span = knots.find_span(t);
        let basis = super::bspline::basis_derivatives(u, span, t)[0].map(|v| v.as_f64());
        let base = span - DEGREE;
        // right-hand side with the fixed endpoint controls moved over
        let mut rhs: [f64; D] = p.map(|v| v.as_f64());
        for (r, &b) in basis.iter().enumerate() {
            let i = base + r;
            if i == 0 {
                (0..D).for_each(|d| rhs[d] -= b * first[d]);
            } else if i == n - 1 {
                (0..D).for_each(|d| rhs[d] -= b * last[d]);
            }
        }
        for (r, &br) in basis.iter().enumerate() {
            let i = base + r;
            if i == 0 || i == n - 1 {
                continue;
            }
            for (c, &bc) in basis.iter().enumerate() {
                let j = base + c;
                if j == 0 || j == n - 1 {
                    continue;
                }
                ata[(i - 1, j - 1)] += br * bc;
            }
            for d in 0..D {
                atb[(i - 1, d)] += br * rhs[d];
            }
        }
    }

    let mean_diag = (0..interior).map(|i| ata[(i, i)]).sum::<f64>() / interior.max(1) as f64;
    let lambda = smoothing * mean_diag.max(1.0);
    // second differences P_{i-1} - 2 P_i + P_{i+1} for i = 1..n-2
    for i in 1..n - 1 {
        let taps = [(i - 1, 1.0), (i, -2.0), (i + 1, 1.0)];
        for &(a, wa) in &taps {
            for &(b, wb) in &taps {
                let w = lambda * wa * wb;
                match (a == 0 || a == n - 1, b == 0 || b == n - 1) {
                    (false, false) => ata[(a - 1, b - 1)] += w,
                    (false, true) => {
                        let fixed = if b == 0 { &first } else { &last };
                        for d in 0..D {
                            atb[(a - 1, d)] -= w * fixed[d];
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::Degenerate("fit normal equations are singular".into()))?;
    let mut controls = Vec::with_capacity(n);
    controls.push(points[0]);
    controls.extend(std::iter::repeat_n([T::zero(); D], interior));
    for d in 0..D {
        let col: DVector<f64> = chol.solve(&atb.column(d).into_owned());
        for i in 0..interior {
            controls[i + 1][d] = T::lit(col[i]);
        }
    }
    controls.push(points[points.len() - 1]);
    BSpline::new(knots.clone(), controls)
}
