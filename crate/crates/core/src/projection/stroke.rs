use crate::scalar::Real;
use crate::spline::bernstein;

/// Screen-space cubic Bézier stroke with linearly interpolated width.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stroke2D<T> {
    /// Control points in pixels.
    pub q: [[T; 2]; 4],
    /// On-screen widths in pixels at `τ = 0` and `τ = 1`.
    pub w_start: T,
    pub w_end: T,
}

impl<T: Real> Stroke2D<T> {
    pub fn new(q: [[T; 2]; 4], w_start: T, w_end: T) -> Self {
        Self { q, w_start, w_end }
    }

    pub fn zero() -> Self {
        Self::new([[T::zero(); 2]; 4], T::zero(), T::zero())
    }

    #[inline]
    pub fn eval(&self, tau: T) -> [T; 2] {
        let b = bernstein(tau);
        std::array::from_fn(|k| (0..4).map(|i| b[i] * self.q[i][k]).sum())
    }

    #[inline]
    pub fn width(&self, tau: T) -> T {
        self.w_start + (self.w_end - self.w_start) * tau
    }

    /// Parameters flattened as `[q0x, q0y, …, q3y, w_start, w_end]`.
    pub fn to_array(&self) -> [T; 10] {
        let q = &self.q;
        [
            q[0][0],
            q[0][1],
            q[1][0],
            q[1][1],
            q[2][0],
            q[2][1],
            q[3][0],
            q[3][1],
            self.w_start,
            self.w_end,
        ]
    }

    pub fn from_array(a: &[T; 10]) -> Self {
        Self::new([[a[0], a[1]], [a[2], a[3]], [a[4], a[5]], [a[6], a[7]]], a[8], a[9])
    }

    /// Control-polygon bounding box dilated by `pad`: `(min, max)`.
    pub fn bounds(&self, pad: T) -> ([T; 2], [T; 2]) {
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for p in &self.q {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo.map(|v| v - pad), hi.map(|v| v + pad))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Accumulate `s · other` into `self`.
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        for i in 0..4 {
            for k in 0..2 {
                self.q[i][k] += s * other.q[i][k];
            }
        }
        self.w_start += s * other.w_start;
        self.w_end += s * other.w_end;
    }

    /// Uniform-in-τ samples including both endpoints.
    pub fn sample(&self, count: usize) -> Vec<[T; 2]> {
        let n = count.max(2);
        (0..n)
            .map(|i| self.eval(T::from_count(i) / T::from_count(n - 1)))
            .collect()
    }
}

/// Projected dense segments together with their routing information.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeBatch<T> {
    pub strokes: Vec<Stroke2D<T>>,
    /// `(span index, subdivision index)` per stroke.
    pub provenance: Vec<(usize, usize)>,
    /// Camera depth at each stroke endpoint.
    pub depths: Vec<[T; 2]>,
    /// Curve parameter interval `[t0, t1]` of each stroke.
    pub params: Vec<[T; 2]>,
    /// Subdivision count per span used to build the batch.
    pub counts: Vec<u32>,
}

impl<T: Real> StrokeBatch<T> {
    pub fn empty() -> Self {
        Self {
            strokes: Vec::new(),
            provenance: Vec::new(),
            depths: Vec::new(),
            params: Vec::new(),
            counts: Vec::new(),
        }
    }

    /// Batch of free-standing strokes, one per span, covering `[0, 1]` in
    /// equal parameter steps at unit depth.
    pub fn from_strokes(strokes: Vec<Stroke2D<T>>) -> Self {
        let n = strokes.len();
        let step = |i: usize| T::from_count(i) / T::from_count(n.max(1));
        Self {
            provenance: (0..n).map(|i| (i, 0)).collect(),
            depths: vec![[T::one(); 2]; n],
            params: (0..n).map(|i| [step(i), step(i + 1)]).collect(),
            counts: vec![1; n],
            strokes,
        }
    }

    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    /// Stroke containing curve parameter `t` and the local parameter there.
    pub fn locate(&self, t: T) -> Option<(usize, T)> {
        if self.params.is_empty() {
            return None;
        }
        let i = self.params.partition_point(|p| p[1] < t).min(self.params.len() - 1);
        let [t0, t1] = self.params[i];
        let tau = if t1 > t0 { (t - t0) / (t1 - t0) } else { T::zero() };
        Some((i, tau.max(T::zero()).min(T::one())))
    }

    /// Zero gradient shaped like this batch.
    pub fn zero_grad(&self) -> BatchGrad<T> {
        BatchGrad {
            strokes: vec![Stroke2D::zero(); self.len()],
            depths: vec![[T::zero(); 2]; self.len()],
        }
    }

    /// Concatenated polyline with `per_stroke` samples per stroke; shared
    /// endpoints appear once.
    pub fn flatten(&self, per_stroke: usize) -> Vec<[T; 2]> {
        let mut out = Vec::with_capacity(self.len() * per_stroke + 1);
        for (i, s) in self.strokes.iter().enumerate() {
            let pts = s.sample(per_stroke);
            let skip = usize::from(i > 0);
            out.extend_from_slice(&pts[skip..]);
        }
        out
    }
}

/// Gradient of a scalar loss with respect to every field of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGrad<T> {
    pub strokes: Vec<Stroke2D<T>>,
    pub depths: Vec<[T; 2]>,
}

impl<T: Real> BatchGrad<T> {
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.strokes.len(), other.strokes.len(), "batch size mismatch");
        for (a, b) in self.strokes.iter_mut().zip(&other.strokes) {
            a.add_scaled(b, T::one());
        }
        for (a, b) in self.depths.iter_mut().zip(&other.depths) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }
}
