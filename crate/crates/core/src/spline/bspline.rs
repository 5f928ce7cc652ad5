use crate::error::{Error, Result};
use crate::scalar::{dot, Real};

use super::bezier::{BezierSegment, Mat4};
use super::conversion::DenseConversion;
use super::knots::{KnotVector, Span};
use super::DEGREE;

/// Clamped cubic B-spline with `D`-dimensional control points.
#[derive(Clone, Debug, PartialEq)]
pub struct BSpline<T, const D: usize> {
    knots: KnotVector<T>,
    controls: Vec<[T; D]>,
}

/// Where a knot insertion changed the control sequence.
///
/// Controls `0..first_changed` are untouched, `first_changed..=last_changed`
/// are new, and every control after `last_changed` is the old control at
/// index minus one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Insertion {
    pub first_changed: usize,
    pub last_changed: usize,
}

impl<T: Real, const D: usize> BSpline<T, D> {
    pub fn new(knots: KnotVector<T>, controls: Vec<[T; D]>) -> Result<Self> {
        if knots.control_count() != controls.len() {
            return Err(Error::InvalidSize(format!(
                "{} knots imply {} controls, got {}",
                knots.len(),
                knots.control_count(),
                controls.len()
            )));
        }
        if controls.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Degenerate("non-finite control coordinate".into()));
        }
        Ok(Self { knots, controls })
    }

    /// Spline over clamped uniform knots.
    pub fn uniform(controls: Vec<[T; D]>) -> Result<Self> {
        let knots = KnotVector::clamped_uniform(controls.len())?;
        Self::new(knots, controls)
    }

    #[inline]
    pub fn knots(&self) -> &KnotVector<T> {
        &self.knots
    }

    #[inline]
    pub fn controls(&self) -> &[[T; D]] {
        &self.controls
    }

    #[inline]
    pub fn controls_mut(&mut self) -> &mut [[T; D]] {
        &mut self.controls
    }

    #[inline]
    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    pub fn spans(&self) -> Vec<Span<T>> {
        self.knots.spans()
    }

    fn check_domain(&self, t: T) -> Result<()> {
        let (lo, hi) = self.knots.domain();
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain {
                t: t.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        Ok(())
    }

    /// Basis functions of the span containing `t` and their derivatives up to
    /// order 3 (Cox–de Boor with derivative recurrences).
    ///
    /// Returns the span knot index `k`; `ders[j][r]` is the `j`-th derivative of
    /// `B_{k-3+r}` at `t`.
    pub fn basis_derivatives(&self, t: T) -> Result<(usize, [[T; 4]; 4])> {
        self.check_domain(t)?;
        let u = self.knots.as_slice();
        let span = self.knots.find_span(t);
        Ok((span, basis_derivatives(u, span, t)))
    }

    /// `d^order C / dt^order` at `t`, via the basis functions.
    pub fn evaluate(&self, t: T, order: usize) -> Result<[T; D]> {
        if order > DEGREE {
            return Err(Error::DerivativeOrder(order));
        }
        let (span, ders) = self.basis_derivatives(t)?;
        let first = span - DEGREE;
        Ok(std::array::from_fn(|d| {
            (0..4).fold(T::zero(), |acc, r| acc + ders[order][r] * self.controls[first + r][d])
        }))
    }

    /// Bézier extraction matrix of a span: rows are the Bézier control points
    /// as combinations of the span's four supporting controls.
    pub fn extraction(&self, span: &Span<T>) -> Mat4<T> {
        extraction_matrix(self.knots.as_slice(), span)
    }

    /// Exact piecewise Bézier form with `segments_per_span` equal pieces per span.
    pub fn to_bezier_segments(&self, segments_per_span: u32) -> Result<Vec<BezierSegment<T, D>>> {
        let counts = vec![segments_per_span; self.knots.spans().len()];
        let conv = DenseConversion::new(&self.knots, &counts)?;
        Ok(conv.apply(&self.controls))
    }

    /// Boehm knot insertion; the curve is unchanged.
    pub fn insert_knot(&self, u_hat: T) -> Result<(Self, Insertion)> {
        if !(u_hat > T::zero() && u_hat < T::one()) {
            return Err(Error::Domain {
                t: u_hat.as_f64(),
                lo: 0.0,
                hi: 1.0,
            });
        }
        let mult = self.knots.multiplicity(u_hat);
        if mult >= DEGREE {
            return Err(Error::KnotMultiplicity { u: u_hat.as_f64() });
        }
        let u = self.knots.as_slice();
        let k = self.knots.find_span(u_hat);
        let p = &self.controls;
        let mut out = Vec::with_capacity(p.len() + 1);
        out.extend_from_slice(&p[..=k - DEGREE]);
        for i in (k - DEGREE + 1)..=(k - mult) {
            let alpha = (u_hat - u[i]) / (u[i + DEGREE] - u[i]);
            out.push(std::array::from_fn(|d| {
                alpha * p[i][d] + (T::one() - alpha) * p[i - 1][d]
            }));
        }
        out.extend_from_slice(&p[k - mult..]);
        let mut knots = self.knots.clone();
        knots.insert(k + 1, u_hat);
        let spline = Self::new(knots, out)?;
        Ok((
            spline,
            Insertion {
                first_changed: k - DEGREE + 1,
                last_changed: k - mult,
            },
        ))
    }

    /// Jerk energy `∫ ‖C'''(t)‖² dt` over the whole domain and its exact
    /// gradient with respect to every control coordinate.
    ///
    /// `C'''` is constant on each span, so the integral is a finite sum.
    pub fn jerk_energy(&self) -> (T, Vec<[T; D]>) {
        let mut energy = T::zero();
        let mut grad = vec![[T::zero(); D]; self.controls.len()];
        for span in self.knots.spans() {
            let (coef, len) = self.jerk_coefficients(&span);
            let first = span.first_control();
            let jerk: [T; D] =
                std::array::from_fn(|d| (0..4).fold(T::zero(), |acc, r| acc + coef[r] * self.controls[first + r][d]));
            energy += len * dot(&jerk, &jerk);
            for r in 0..4 {
                for d in 0..D {
                    grad[first + r][d] += T::lit(2.0) * len * coef[r] * jerk[d];
                }
            }
        }
        (energy, grad)
    }

    /// Weights of the four supporting controls in the constant third derivative
    /// of a span, and the span length.
    fn jerk_coefficients(&self, span: &Span<T>) -> ([T; 4], T) {
        let ext = self.extraction(span);
        let len = span.len();
        let scale = T::lit(6.0) / (len * len * len);
        let three = T::lit(3.0);
        let coef = std::array::from_fn(|c| scale * (ext[3][c] - three * ext[2][c] + three * ext[1][c] - ext[0][c]));
        (coef, len)
    }

    /// Spline whose controls are `f` applied to each control.
    pub fn map_controls<const E: usize>(&self, f: impl Fn(&[T; D]) -> [T; E]) -> BSpline<T, E> {
        BSpline {
            knots: self.knots.clone(),
            controls: self.controls.iter().map(f).collect(),
        }
    }
}

/// `ders[j][r]`: `j`-th derivative of basis `B_{span-3+r}` at `t`.
pub(crate) fn basis_derivatives<T: Real>(u: &[T], span: usize, t: T) -> [[T; 4]; 4] {
    const P: usize = DEGREE;
    let mut ndu = [[T::zero(); 4]; 4];
    let mut left = [T::zero(); 4];
    let mut right = [T::zero(); 4];
    ndu[0][0] = T::one();
    for j in 1..=P {
        left[j] = t - u[span + 1 - j];
        right[j] = u[span + j] - t;
        let mut saved = T::zero();
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = [[T::zero(); 4]; 4];
    for j in 0..=P {
        ders[0][j] = ndu[j][P];
    }
    let p = P as isize;
    for r in 0..=p {
        let mut a = [[T::zero(); 4]; 2];
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = T::one();
        for k in 1..=p {
            let mut d = T::zero();
            let rk = r - k;
            let pk = (p - k) as usize;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { -rk };
            let j2 = if r - 1 <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let (ju, rj) = (j as usize, (rk + j) as usize);
                a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[pk + 1][rj];
                d += a[s2][ju] * ndu[rj][pk];
            }
            if r <= pk as isize {
                let (ku, ru) = (k as usize, r as usize);
                a[s2][ku] = -a[s1][ku - 1] / ndu[pk + 1][ru];
                d += a[s2][ku] * ndu[ru][pk];
            }
            ders[k as usize][r as usize] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut fac = T::lit(P as f64);
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for v in row.iter_mut() {
            *v *= fac;
        }
        fac *= T::lit((P - k) as f64);
    }
    ders
}

/// Blossom of the span's basis: weights on the four supporting controls of
/// the polar form evaluated at `args`.
fn blossom_weights<T: Real>(u: &[T], span: usize, args: [T; 3]) -> [T; 4] {
    let mut pts: [[T; 4]; 4] =
        std::array::from_fn(|r| std::array::from_fn(|c| if r == c { T::one() } else { T::zero() }));
    let base = span - DEGREE;
    for (level, &arg) in args.iter().enumerate() {
        let r = level + 1;
        for i in (r..=DEGREE).rev() {
            let gi = base + i;
            let alpha = (arg - u[gi]) / (u[gi + DEGREE + 1 - r] - u[gi]);
            for c in 0..4 {
                pts[i][c] = (T::one() - alpha) * pts[i - 1][c] + alpha * pts[i][c];
            }
        }
    }
    pts[DEGREE]
}

pub(crate) fn extraction_matrix<T: Real>(u: &[T], span: &Span<T>) -> Mat4<T> {
    let (a, b) = (span.start, span.end);
    [
        blossom_weights(u, span.knot, [a, a, a]),
        blossom_weights(u, span.knot, [a, a, b]),
        blossom_weights(u, span.knot, [a, b, b]),
        blossom_weights(u, span.knot, [b, b, b]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line1d() -> BSpline<f64, 1> {
        BSpline::uniform(vec![[0.0], [1.0], [2.0], [3.0]]).unwrap()
    }

    /// Direct Cox–de Boor recursion, used as an independent oracle.
    fn cox_de_boor(u: &[f64], i: usize, p: usize, t: f64, last: bool) -> f64 {
        if p == 0 {
            let inside = u[i] <= t && t < u[i + 1];
            let at_end = last && t == 1.0 && u[i + 1] == 1.0 && u[i] < u[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = u[i + p] - u[i];
        if d1 > 0.0 {
            v += (t - u[i]) / d1 * cox_de_boor(u, i, p - 1, t, last);
        }
        let d2 = u[i + p + 1] - u[i + 1];
        if d2 > 0.0 {
            v += (u[i + p + 1] - t) / d2 * cox_de_boor(u, i + 1, p - 1, t, last);
        }
        v
    }

    #[test]
    fn collinear_midpoint() {
        assert_eq!(line1d().evaluate(0.5, 0).unwrap()[0], 1.5);
    }

    #[test]
    fn straight_line_has_zero_jerk() {
        let s = line1d();
        assert_eq!(s.evaluate(0.3, 3).unwrap()[0], 0.0);
        let (e, g) = s.jerk_energy();
        assert_eq!(e, 0.0);
        assert!(g.iter().all(|c| c[0] == 0.0));
    }

    #[test]
    fn domain_and_order_errors() {
        let s = line1d();
        assert!(matches!(s.evaluate(1.5, 0), Err(Error::Domain { .. })));
        assert!(matches!(s.evaluate(-1e-9, 0), Err(Error::Domain { .. })));
        assert!(matches!(s.evaluate(0.5, 4), Err(Error::DerivativeOrder(4))));
    }

    #[test]
    fn basis_matches_brute_force_recursion() {
        let ctrl: Vec<[f64; 1]> = (0..9).map(|i| [((i * 7) % 5) as f64 - 1.3]).collect();
        let s = BSpline::uniform(ctrl.clone()).unwrap();
        let u = s.knots().as_slice().to_vec();
        for j in 0..=200 {
            let t = j as f64 / 200.0;
            let brute: f64 = (0..ctrl.len())
                .map(|i| cox_de_boor(&u, i, 3, t, true) * ctrl[i][0])
                .sum();
            let fast = s.evaluate(t, 0).unwrap()[0];
            assert!((brute - fast).abs() < 1e-13, "t={t}: {brute} vs {fast}");
        }
    }

    #[test]
    fn first_derivative_matches_central_difference() {
        let ctrl: Vec<[f64; 2]> = (0..8)
            .map(|i| [(i as f64 * 1.7).sin(), (i as f64 * 0.9).cos() * 2.0])
            .collect();
        let s = BSpline::uniform(ctrl).unwrap();
        let h = 1e-5;
        for j in 1..20 {
            let t = j as f64 / 20.0 + 0.013;
            let d = s.evaluate(t, 1).unwrap();
            let a = s.evaluate(t + h, 0).unwrap();
            let b = s.evaluate(t - h, 0).unwrap();
            for k in 0..2 {
                let fd = (a[k] - b[k]) / (2.0 * h);
                assert!((fd - d[k]).abs() <= 1e-6 * d[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn insertion_adds_one_control() {
        let ctrl: Vec<[f64; 4]> = (0..10).map(|i| [i as f64, (i * i) as f64, 0.5, 1.0]).collect();
        let s = BSpline::uniform(ctrl).unwrap();
        let (s2, ins) = s.insert_knot(0.3).unwrap();
        assert_eq!(s2.control_count(), 11);
        assert_eq!(ins.last_changed - ins.first_changed + 1, 3);
        assert!(s.insert_knot(0.0).is_err());
        let (a, _) = s.insert_knot(0.5).unwrap();
        let (b, _) = a.insert_knot(0.5).unwrap();
        let (c, ins) = b.insert_knot(0.5).unwrap();
        assert_eq!(ins.first_changed, ins.last_changed);
        assert!(matches!(c.insert_knot(0.5), Err(Error::KnotMultiplicity { .. })));
    }

    #[test]
    fn interior_uniform_span_extraction() {
        let s = BSpline::<f64, 1>::uniform(vec![[0.0]; 10]).unwrap();
        let spans = s.spans();
        let m = s.extraction(&spans[3]);
        let expect = [
            [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0, 0.0],
            [0.0, 2.0 / 3.0, 1.0 / 3.0, 0.0],
            [0.0, 1.0 / 3.0, 2.0 / 3.0, 0.0],
            [0.0, 1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert!((m[r][c] - expect[r][c]).abs() < 1e-14);
            }
        }
    }
}
