use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};

use super::bezier::BezierSegment;
use super::bspline::{BSpline, Insertion};
use super::fit::{fit_bspline, FitOptions};
use super::knots::{KnotVector, Span};
use super::DEGREE;

/// Control point of a wire: position plus the unconstrained width parameter.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControlPoint4<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    /// Raw width; the rendered width is `WidthClamp::apply(w)`.
    pub w: T,
}

impl<T: Real> ControlPoint4<T> {
    pub fn new(x: T, y: T, z: T, w: T) -> Self {
        Self { x, y, z, w }
    }

    #[inline]
    pub fn position(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn to_array(&self) -> [T; 4] {
        [self.x, self.y, self.z, self.w]
    }

    #[inline]
    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Smooth sigmoid clamp of raw widths into the open interval `(min, max)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WidthClamp<T> {
    pub min: T,
    pub max: T,
}

impl<T: Real> WidthClamp<T> {
    pub fn new(min: T, max: T) -> Result<Self> {
        if !(min >= T::zero() && max > min && max.is_finite()) {
            return Err(Error::Config(format!(
                "width clamp needs 0 <= min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    #[inline]
    pub fn range(&self) -> T {
        self.max - self.min
    }

    #[inline]
    pub fn apply(&self, raw: T) -> T {
        self.min + self.range() * sigmoid(raw)
    }

    /// `d apply / d raw`.
    #[inline]
    pub fn derivative(&self, raw: T) -> T {
        let s = sigmoid(raw);
        self.range() * s * (T::one() - s)
    }

    /// Raw value mapping to `width`; widths at or beyond the bounds are pulled
    /// just inside them.
    pub fn invert(&self, width: T) -> T {
        let eps = T::epsilon() * T::lit(16.0);
        let f = ((width - self.min) / self.range()).max(eps).min(T::one() - eps);
        (f / (T::one() - f)).ln()
    }

    pub fn cast<U: Real>(&self) -> WidthClamp<U> {
        WidthClamp {
            min: U::lit(self.min.as_f64()),
            max: U::lit(self.max.as_f64()),
        }
    }
}

/// The single optimizable primitive: a clamped cubic B-spline in
/// `(x, y, z, w)`.
///
/// Geometry queries act on the rendered curve, whose width channel
/// interpolates the clamped control widths.
#[derive(Clone, Debug, PartialEq)]
pub struct Wire<T> {
    knots: KnotVector<T>,
    controls: Vec<ControlPoint4<T>>,
    clamp: WidthClamp<T>,
}

impl<T: Real> Wire<T> {
    pub fn new(knots: KnotVector<T>, controls: Vec<ControlPoint4<T>>, clamp: WidthClamp<T>) -> Result<Self> {
        if knots.control_count() != controls.len() {
            return Err(Error::InvalidSize(format!(
                "{} knots imply {} controls, got {}",
                knots.len(),
                knots.control_count(),
                controls.len()
            )));
        }
        if controls.iter().flat_map(|c| c.to_array()).any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite control coordinate".into()));
        }
        Ok(Self { knots, controls, clamp })
    }

    /// Wire on clamped uniform knots.
    pub fn uniform(controls: Vec<ControlPoint4<T>>, clamp: WidthClamp<T>) -> Result<Self> {
        let knots = KnotVector::clamped_uniform(controls.len())?;
        Self::new(knots, controls, clamp)
    }

    /// Wire whose rendered curve is `curve`; widths are inverted through the clamp.
    pub fn from_curve(curve: &BSpline<T, 4>, clamp: WidthClamp<T>) -> Result<Self> {
        let controls = curve
            .controls()
            .iter()
            .map(|c| ControlPoint4::new(c[0], c[1], c[2], clamp.invert(c[3])))
            .collect();
        Self::new(curve.knots().clone(), controls, clamp)
    }

    #[inline]
    pub fn knots(&self) -> &KnotVector<T> {
        &self.knots
    }

    #[inline]
    pub fn controls(&self) -> &[ControlPoint4<T>] {
        &self.controls
    }

    #[inline]
    pub fn controls_mut(&mut self) -> &mut [ControlPoint4<T>] {
        &mut self.controls
    }

    #[inline]
    pub fn clamp(&self) -> &WidthClamp<T> {
        &self.clamp
    }

    #[inline]
    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    #[inline]
    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn spans(&self) -> Vec<Span<T>> {
        self.knots.spans()
    }

    pub fn clamped_width(&self, index: usize) -> T {
        self.clamp.apply(self.controls[index].w)
    }

    pub fn clamped_widths(&self) -> Vec<T> {
        self.controls.iter().map(|c| self.clamp.apply(c.w)).collect()
    }

    /// Rendered curve `(x, y, z, clamp(w))`.
    pub fn curve(&self) -> BSpline<T, 4> {
        let controls = self
            .controls
            .iter()
            .map(|c| [c.x, c.y, c.z, self.clamp.apply(c.w)])
            .collect();
        BSpline::new(self.knots.clone(), controls).expect("wire invariants hold")
    }

    /// Spatial curve only.
    pub fn spatial_curve(&self) -> BSpline<T, 3> {
        let controls = self.controls.iter().map(|c| c.position()).collect();
        BSpline::new(self.knots.clone(), controls).expect("wire invariants hold")
    }

    pub fn evaluate(&self, t: T, order: usize) -> Result<[T; 4]> {
        self.curve().evaluate(t, order)
    }

    pub fn to_bezier_segments(&self, segments_per_span: u32) -> Result<Vec<BezierSegment<T, 4>>> {
        self.curve().to_bezier_segments(segments_per_span)
    }

    /// Knot insertion on the rendered curve; rendered geometry is unchanged.
    pub fn insert_knot(&self, u_hat: T) -> Result<(Self, Insertion)> {
        let (curve, ins) = self.curve().insert_knot(u_hat)?;
        let mut out = Self::from_curve(&curve, self.clamp)?;
        // untouched controls keep their raw values bit-exactly
        for i in 0..ins.first_changed {
            out.controls[i] = self.controls[i];
        }
        for i in ins.last_changed + 1..out.controls.len() {
            out.controls[i] = self.controls[i - 1];
        }
        Ok((out, ins))
    }

    /// Jerk energy of the rendered curve over all four channels and its
    /// gradient with respect to the raw control parameters.
    pub fn jerk_energy(&self) -> (T, Vec<[T; 4]>) {
        let (e, mut g) = self.curve().jerk_energy();
        for (gi, c) in g.iter_mut().zip(&self.controls) {
            gi[3] *= self.clamp.derivative(c.w);
        }
        (e, g)
    }

    /// Raw parameters flattened as `[x0, y0, z0, w0, x1, …]`.
    pub fn params(&self) -> Vec<T> {
        self.controls.iter().flat_map(|c| c.to_array()).collect()
    }

    pub fn set_params(&mut self, params: &[T]) {
        assert_eq!(params.len(), 4 * self.controls.len(), "parameter length mismatch");
        for (c, p) in self.controls.iter_mut().zip(params.chunks_exact(4)) {
            *c = ControlPoint4::new(p[0], p[1], p[2], p[3]);
        }
    }

    pub fn cast<U: Real>(&self) -> Wire<U> {
        Wire {
            knots: self.knots.cast(),
            controls: self
                .controls
                .iter()
                .map(|c| ControlPoint4::from_array(c.to_array().map(|v| U::lit(v.as_f64()))))
                .collect(),
            clamp: self.clamp.cast(),
        }
    }

    pub fn to_file(&self) -> WireFile {
        WireFile {
            version: 1,
            degree: DEGREE as u32,
            knots: self.knots.as_slice().iter().map(|k| k.as_f64()).collect(),
            controls: self.controls.iter().map(|c| c.to_array().map(|v| v.as_f64())).collect(),
            width_clamp: [self.clamp.min.as_f64(), self.clamp.max.as_f64()],
        }
    }

    pub fn from_file(file: &WireFile) -> Result<Self> {
        if file.version != 1 {
            return Err(Error::InvalidSize(format!("unsupported wire version {}", file.version)));
        }
        if file.degree as usize != DEGREE {
            return Err(Error::InvalidSize(format!(
                "only degree 3 wires are supported, got {}",
                file.degree
            )));
        }
        let knots = KnotVector::new(file.knots.iter().map(|&k| T::lit(k)).collect())?;
        let controls = file
            .controls
            .iter()
            .map(|c| ControlPoint4::from_array(c.map(T::lit)))
            .collect();
        let clamp = WidthClamp::new(T::lit(file.width_clamp[0]), T::lit(file.width_clamp[1]))?;
        Self::new(knots, controls, clamp)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: WireFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_file(&file).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file().to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Versioned on-disk form of a wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireFile {
    pub version: u32,
    pub degree: u32,
    pub knots: Vec<f64>,
    pub controls: Vec<[f64; 4]>,
    pub width_clamp: [f64; 2],
}

impl WireFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("wire file serializes");
        s.push('\n');
        s
    }
}

/// Polyline samples to fit: positions only, or positions with widths.
#[derive(Clone, Copy, Debug)]
pub enum Polyline<'a, T> {
    Xyz(&'a [[T; 3]]),
    Xyzw(&'a [[T; 4]]),
}

/// Result of [`fit_to_polyline`].
#[derive(Clone, Debug)]
pub struct PolylineFit<T> {
    pub wire: Wire<T>,
    /// RMS distance of the input points from the fitted curve.
    pub rms: T,
}

/// Least-squares wire through a polyline with interpolated endpoints.
///
/// Positions-only input gets the uniform `initial_width` on every control.
pub fn fit_to_polyline<T: Real>(
    points: Polyline<'_, T>,
    control_count: usize,
    initial_width: T,
    clamp: WidthClamp<T>,
    options: FitOptions,
) -> Result<PolylineFit<T>> {
    match points {
        Polyline::Xyz(pts) => {
            let (spatial, rms) = fit_bspline(pts, control_count, options)?;
            let raw = clamp.invert(initial_width);
            let controls = spatial
                .controls()
                .iter()
                .map(|c| ControlPoint4::new(c[0], c[1], c[2], raw))
                .collect();
            let wire = Wire::new(spatial.knots().clone(), controls, clamp)?;
            Ok(PolylineFit { wire, rms })
        }
        Polyline::Xyzw(pts) => {
            let (curve, rms) = fit_bspline(pts, control_count, options)?;
            let wire = Wire::from_curve(&curve, clamp)?;
            Ok(PolylineFit { wire, rms })
        }
    }
}
