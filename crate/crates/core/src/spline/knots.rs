use crate::error::{Error, Result};
use crate::scalar::Real;

use super::DEGREE;

/// Non-decreasing knot sequence of a clamped cubic B-spline on `[0, 1]`.
///
/// Both ends carry multiplicity `DEGREE + 1`; interior knots may repeat up to
/// `DEGREE` times (which only happens after explicit knot insertion).
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector<T> {
    knots: Vec<T>,
}

/// A non-empty knot interval `[start, end)` together with its knot index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span<T> {
    /// Index `k` with `u_k <= t < u_{k+1}` for parameters inside the span.
    pub knot: usize,
    pub start: T,
    pub end: T,
}

impl<T: Real> Span<T> {
    /// First of the four controls supporting this span.
    #[inline]
    pub fn first_control(&self) -> usize {
        self.knot - DEGREE
    }

    #[inline]
    pub fn len(&self) -> T {
        self.end - self.start
    }

    #[inline]
    pub fn midpoint(&self) -> T {
        (self.start + self.end) * T::lit(0.5)
    }
}

impl<T: Real> KnotVector<T> {
    /// Clamped uniform knots for `control_count` controls, normalized to `[0, 1]`.
    pub fn clamped_uniform(control_count: usize) -> Result<Self> {
        if control_count < DEGREE + 1 {
            return Err(Error::InvalidSize(format!(
                "a cubic wire needs at least 4 controls, got {control_count}"
            )));
        }
        let spans = control_count - DEGREE;
        let mut knots = Vec::with_capacity(control_count + DEGREE + 1);
        knots.extend(std::iter::repeat_n(T::zero(), DEGREE + 1));
        for i in 1..spans {
            knots.push(T::from_count(i) / T::from_count(spans));
        }
        knots.extend(std::iter::repeat_n(T::one(), DEGREE + 1));
        Ok(Self { knots })
    }

    /// Validates an explicit knot sequence.
    pub fn new(knots: Vec<T>) -> Result<Self> {
        let order = DEGREE + 1;
        if knots.len() < 2 * order {
            return Err(Error::InvalidKnots(format!(
                "need at least {} knots, got {}",
                2 * order,
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be non-decreasing".into()));
        }
        let n = knots.len();
        if knots[..order].iter().any(|&k| k != T::zero()) || knots[n - order..].iter().any(|&k| k != T::one()) {
            return Err(Error::InvalidKnots(
                "knots must be clamped to [0, 1] with end multiplicity 4".into(),
            ));
        }
        let interior = &knots[order..n - order];
        if interior.iter().any(|&k| k <= T::zero() || k >= T::one()) {
            return Err(Error::InvalidKnots("interior knot outside (0, 1)".into()));
        }
        let mut run = 1;
        for w in interior.windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            if run > DEGREE {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {} exceeds multiplicity {DEGREE}",
                    w[0]
                )));
            }
        }
        Ok(Self { knots })
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.knots
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Number of controls consistent with this knot vector.
    #[inline]
    pub fn control_count(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    #[inline]
    pub fn domain(&self) -> (T, T) {
        (T::zero(), T::one())
    }

    pub fn multiplicity(&self, u: T) -> usize {
        self.knots.iter().filter(|&&k| k == u).count()
    }

    /// Knot index `k` with `u_k <= t < u_{k+1}`; `t == 1` maps to the last span.
    pub fn find_span(&self, t: T) -> usize {
        let last = self.control_count() - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        if t <= self.knots[DEGREE] {
            return DEGREE;
        }
        // partition_point gives the first index whose knot exceeds t
        self.knots[..=last + 1].partition_point(|&k| k <= t) - 1
    }

    /// Non-empty spans in parameter order.
    pub fn spans(&self) -> Vec<Span<T>> {
        (DEGREE..self.control_count())
            .filter(|&k| self.knots[k + 1] > self.knots[k])
            .map(|k| Span {
                knot: k,
                start: self.knots[k],
                end: self.knots[k + 1],
            })
            .collect()
    }

    pub(crate) fn insert(&mut self, index: usize, u: T) {
        self.knots.insert(index, u);
    }

    /// Knot vector converted to another scalar type.
    pub fn cast<U: Real>(&self) -> KnotVector<U> {
        KnotVector {
            knots: self.knots.iter().map(|k| U::lit(k.as_f64())).collect(),
        }
    }
}
