use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::scalar::{lerp, Real};

/// 4×4 matrix acting on the four control points of a cubic Bézier.
pub type Mat4<T> = [[T; 4]; 4];

/// Cubic Bézier segment in `D` dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BezierSegment<T, const D: usize> {
    pub points: [[T; D]; 4],
}

impl<T: Real, const D: usize> BezierSegment<T, D> {
    pub fn new(points: [[T; D]; 4]) -> Self {
        Self { points }
    }

    /// Point at local parameter `tau` in `[0, 1]`.
    pub fn eval(&self, tau: T) -> [T; D] {
        let b = bernstein(tau);
        std::array::from_fn(|d| (0..4).fold(T::zero(), |acc, i| acc + b[i] * self.points[i][d]))
    }

    /// Derivative of order `0..=3` with respect to the local parameter.
    pub fn derivative(&self, order: usize, tau: T) -> [T; D] {
        let p = &self.points;
        let three = T::lit(3.0);
        let six = T::lit(6.0);
        match order {
            0 => self.eval(tau),
            1 => {
                let a: [[T; D]; 3] = std::array::from_fn(|i| std::array::from_fn(|d| p[i + 1][d] - p[i][d]));
                let s = T::one() - tau;
                std::array::from_fn(|d| {
                    three * (s * s * a[0][d] + T::lit(2.0) * s * tau * a[1][d] + tau * tau * a[2][d])
                })
            }
            2 => std::array::from_fn(|d| {
                let a = p[2][d] - T::lit(2.0) * p[1][d] + p[0][d];
                let b = p[3][d] - T::lit(2.0) * p[2][d] + p[1][d];
                six * (a + (b - a) * tau)
            }),
            3 => std::array::from_fn(|d| six * (p[3][d] - three * p[2][d] + three * p[1][d] - p[0][d])),
            _ => [T::zero(); D],
        }
    }

    /// De Casteljau split at `tau`.
    pub fn split(&self, tau: T) -> (Self, Self) {
        let p = &self.points;
        let p01 = lerp(&p[0], &p[1], tau);
        let p12 = lerp(&p[1], &p[2], tau);
        let p23 = lerp(&p[2], &p[3], tau);
        let p012 = lerp(&p01, &p12, tau);
        let p123 = lerp(&p12, &p23, tau);
        let mid = lerp(&p012, &p123, tau);
        (Self::new([p[0], p01, p012, mid]), Self::new([mid, p123, p23, p[3]]))
    }

    pub fn transform(&self, m: &Mat4<T>) -> Self {
        Self::new(apply_mat4(m, &self.points))
    }

    /// Length of the control polygon.
    pub fn polygon_length(&self) -> T {
        self.points.windows(2).map(|w| crate::scalar::dist(&w[0], &w[1])).sum()
    }
}

#[inline]
pub fn bernstein<T: Real>(tau: T) -> [T; 4] {
    let s = T::one() - tau;
    let three = T::lit(3.0);
    [s * s * s, three * s * s * tau, three * s * tau * tau, tau * tau * tau]
}

pub fn apply_mat4<T: Real, const D: usize>(m: &Mat4<T>, pts: &[[T; D]; 4]) -> [[T; D]; 4] {
    std::array::from_fn(|r| std::array::from_fn(|d| (0..4).fold(T::zero(), |acc, c| acc + m[r][c] * pts[c][d])))
}

pub fn mat4_mul<T: Real>(a: &Mat4<T>, b: &Mat4<T>) -> Mat4<T> {
    std::array::from_fn(|r| std::array::from_fn(|c| (0..4).fold(T::zero(), |acc, k| acc + a[r][k] * b[k][c])))
}

pub fn identity4<T: Real>() -> Mat4<T> {
    std::array::from_fn(|r| std::array::from_fn(|c| if r == c { T::one() } else { T::zero() }))
}

/// Control points of the left half `[0, 1/2]` of a cubic Bézier.
pub const HALVE_LEFT: Mat4<f64> = [
    [1.0, 0.0, 0.0, 0.0],
    [0.5, 0.5, 0.0, 0.0],
    [0.25, 0.5, 0.25, 0.0],
    [0.125, 0.375, 0.375, 0.125],
];

/// Control points of the right half `[1/2, 1]` of a cubic Bézier.
pub const HALVE_RIGHT: Mat4<f64> = [
    [0.125, 0.375, 0.375, 0.125],
    [0.0, 0.25, 0.5, 0.25],
    [0.0, 0.0, 0.5, 0.5],
    [0.0, 0.0, 0.0, 1.0],
];

type StackCache = Mutex<HashMap<u32, Arc<Vec<Mat4<f64>>>>>;

fn stack_cache() -> &'static StackCache {
    static CACHE: OnceLock<StackCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Checks that `count` is a power of two and returns its base-2 logarithm.
pub fn subdivision_depth(count: u32) -> Result<u32> {
    if count == 0 || !count.is_power_of_two() {
        return Err(Error::InvalidSize(format!(
            "segments per span must be a power of two, got {count}"
        )));
    }
    Ok(count.trailing_zeros())
}

/// Subdivision stack `[S_0; …; S_{count-1}]` splitting one cubic into
/// `count` equal parameter pieces by repeated halving.
///
/// Entries are dyadic rationals, so the matrices are exact in binary floating point.
pub fn subdivision_stack(count: u32) -> Result<Arc<Vec<Mat4<f64>>>> {
    let depth = subdivision_depth(count)?;
    let mut cache = stack_cache().lock().expect("subdivision cache poisoned");
    if let Some(stack) = cache.get(&count) {
        return Ok(stack.clone());
    }
    let stack: Vec<Mat4<f64>> = (0..count)
        .map(|i| {
            let mut m = identity4::<f64>();
            // most significant bit picks the first halving
            for level in (0..depth).rev() {
                let h = if (i >> level) & 1 == 0 {
                    &HALVE_LEFT
                } else {
                    &HALVE_RIGHT
                };
                m = mat4_mul(h, &m);
            }
            m
        })
        .collect();
    let stack = Arc::new(stack);
    cache.insert(count, stack.clone());
    Ok(stack)
}
