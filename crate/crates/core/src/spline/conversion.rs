//! The dense B-spline → Bézier linear map and its transpose.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::bezier::{apply_mat4, mat4_mul, subdivision_stack, BezierSegment, Mat4};
use super::bspline::extraction_matrix;
use super::knots::{KnotVector, Span};

/// Uniform cubic B-spline → Bézier basis change for an interior span of a
/// uniform knot vector.
pub const UNIFORM_BSPLINE_TO_BEZIER: Mat4<f64> = [
    [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0, 0.0],
    [0.0, 4.0 / 6.0, 2.0 / 6.0, 0.0],
    [0.0, 2.0 / 6.0, 4.0 / 6.0, 0.0],
    [0.0, 1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0],
];

#[derive(Clone, Debug)]
struct SpanBlock<T> {
    span: Span<T>,
    first_control: usize,
    /// One `S_i · M_{B→Z}` block per dense segment of this span.
    blocks: Vec<Mat4<T>>,
}

/// Sparse representation of `M_dense = SubdivisionStack · M_{B→Z}`.
///
/// Each dense segment depends on exactly four consecutive controls, so the
/// operator is stored as one 4×4 block per segment.
#[derive(Clone, Debug)]
pub struct DenseConversion<T> {
    control_count: usize,
    spans: Vec<SpanBlock<T>>,
}

impl<T: Real> DenseConversion<T> {
    /// `counts[j]` dense segments for the `j`-th non-empty span; each count a
    /// power of two.
    pub fn new(knots: &KnotVector<T>, counts: &[u32]) -> Result<Self> {
        let spans = knots.spans();
        if spans.len() != counts.len() {
            return Err(Error::InvalidSize(format!(
                "{} spans but {} subdivision counts",
                spans.len(),
                counts.len()
            )));
        }
        let u = knots.as_slice();
        let spans = spans
            .into_iter()
            .zip(counts)
            .map(|(span, &count)| {
                let stack = subdivision_stack(count)?;
                let ext = extraction_matrix(u, &span);
                let blocks = stack
                    .iter()
                    .map(|s| {
                        let s: Mat4<T> = std::array::from_fn(|r| std::array::from_fn(|c| T::lit(s[r][c])));
                        mat4_mul(&s, &ext)
                    })
                    .collect();
                Ok(SpanBlock {
                    span,
                    first_control: span.first_control(),
                    blocks,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            control_count: knots.control_count(),
            spans,
        })
    }

    pub fn control_count(&self) -> usize {
        self.control_count
    }

    pub fn segment_count(&self) -> usize {
        self.spans.iter().map(|s| s.blocks.len()).sum()
    }

    pub fn span_count(&self) -> usize {
        self.spans.len()
    }

    pub fn counts(&self) -> Vec<u32> {
        self.spans.iter().map(|s| s.blocks.len() as u32).collect()
    }

    /// `(span index, subdivision index)` for every dense segment in order.
    pub fn provenance(&self) -> Vec<(usize, usize)> {
        self.spans
            .iter()
            .enumerate()
            .flat_map(|(j, s)| (0..s.blocks.len()).map(move |i| (j, i)))
            .collect()
    }

    /// Parameter interval `[t0, t1]` covered by every dense segment.
    pub fn segment_parameters(&self) -> Vec<(T, T)> {
        self.spans
            .iter()
            .flat_map(|s| {
                let n = T::from_count(s.blocks.len());
                let (a, len) = (s.span.start, s.span.len());
                (0..s.blocks.len()).map(move |i| {
                    let i = T::from_count(i);
                    (a + len * i / n, a + len * (i + T::one()) / n)
                })
            })
            .collect()
    }

    /// `P_dense = M_dense · P_sparse`, grouped into Bézier segments.
    pub fn apply<const D: usize>(&self, controls: &[[T; D]]) -> Vec<BezierSegment<T, D>> {
        assert_eq!(controls.len(), self.control_count, "control count mismatch");
        let mut out = Vec::with_capacity(self.segment_count());
        for s in &self.spans {
            let local: [[T; D]; 4] = std::array::from_fn(|r| controls[s.first_control + r]);
            for b in &s.blocks {
                out.push(BezierSegment::new(apply_mat4(b, &local)));
            }
        }
        out
    }

    /// `∂L/∂P_sparse = M_denseᵀ · ∂L/∂P_dense`.
    pub fn apply_transpose<const D: usize>(&self, dense_grad: &[[[T; D]; 4]]) -> Vec<[T; D]> {
        assert_eq!(dense_grad.len(), self.segment_count(), "segment count mismatch");
        let mut out = vec![[T::zero(); D]; self.control_count];
        let mut seg = 0;
        for s in &self.spans {
            for b in &s.blocks {
                let g = &dense_grad[seg];
                for r in 0..4 {
                    for c in 0..4 {
                        let w = b[r][c];
                        if w != T::zero() {
                            for d in 0..D {
                                out[s.first_control + c][d] += w * g[r][d];
                            }
                        }
                    }
                }
                seg += 1;
            }
        }
        out
    }

    /// Materialized `M_dense` with `4 · segment_count` rows and
    /// `control_count` columns.
    pub fn to_matrix(&self) -> Vec<Vec<T>> {
        let mut rows = Vec::with_capacity(4 * self.segment_count());
        for s in &self.spans {
            for b in &s.blocks {
                for r in 0..4 {
                    let mut row = vec![T::zero(); self.control_count];
                    for c in 0..4 {
                        row[s.first_control + c] = b[r][c];
                    }
                    rows.push(row);
                }
            }
        }
        rows
    }
}

/// `M_dense` for a clamped uniform spline with `control_count` controls and
/// `segments_per_span` dense segments in every span.
pub fn dense_conversion_matrix<T: Real>(control_count: usize, segments_per_span: u32) -> Result<Vec<Vec<T>>> {
    let knots = KnotVector::clamped_uniform(control_count)?;
    let counts = vec![segments_per_span; knots.spans().len()];
    Ok(DenseConversion::new(&knots, &counts)?.to_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::BSpline;

    #[test]
    fn uniform_constant_matches_interior_extraction() {
        let s = BSpline::<f64, 1>::uniform(vec![[0.0]; 12]).unwrap();
        let spans = s.spans();
        for span in &spans[3..spans.len() - 3] {
            let ext = s.extraction(span);
            for r in 0..4 {
                for c in 0..4 {
                    assert!((ext[r][c] - UNIFORM_BSPLINE_TO_BEZIER[r][c]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn interior_span_of_ramp() {
        // controls 2..=5 are [0, 1, 2, 3]; span 2 is the first fully uniform one
        let ctrl: Vec<[f64; 1]> = [9.0, -4.0, 0.0, 1.0, 2.0, 3.0, 7.0, 1.0, 5.0, 2.0]
            .iter()
            .map(|&v| [v])
            .collect();
        let s = BSpline::uniform(ctrl).unwrap();
        let segs = s.to_bezier_segments(1).unwrap();
        let expect = [1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0];
        for (p, e) in segs[2].points.iter().zip(expect) {
            assert!((p[0] - e).abs() < 1e-14, "{} vs {e}", p[0]);
        }
    }

    #[test]
    fn single_subdivision_is_pure_basis_conversion() {
        let m1 = dense_conversion_matrix::<f64>(7, 1).unwrap();
        let knots = KnotVector::<f64>::clamped_uniform(7).unwrap();
        assert_eq!(m1.len(), 4 * 4);
        for (j, span) in knots.spans().iter().enumerate() {
            let ext = extraction_matrix(knots.as_slice(), span);
            for r in 0..4 {
                for c in 0..4 {
                    assert_eq!(m1[4 * j + r][span.first_control() + c], ext[r][c]);
                }
            }
        }
        assert!(dense_conversion_matrix::<f64>(3, 1).is_err());
        assert!(dense_conversion_matrix::<f64>(7, 3).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        let knots = KnotVector::<f64>::clamped_uniform(9).unwrap();
        let conv = DenseConversion::new(&knots, &[1, 2, 4, 1, 8, 2]).unwrap();
        let ctrl: Vec<[f64; 2]> = (0..9).map(|i| [i as f64 * 0.3, (i as f64).sin()]).collect();
        let g: Vec<[[f64; 2]; 4]> = (0..conv.segment_count())
            .map(|k| std::array::from_fn(|r| [((k + r) as f64).cos(), (k * r) as f64 * 0.01]))
            .collect();
        let fwd = conv.apply(&ctrl);
        let lhs: f64 = fwd
            .iter()
            .zip(&g)
            .map(|(s, gg)| {
                (0..4)
                    .map(|r| s.points[r][0] * gg[r][0] + s.points[r][1] * gg[r][1])
                    .sum::<f64>()
            })
            .sum();
        let back = conv.apply_transpose(&g);
        let rhs: f64 = back.iter().zip(&ctrl).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(conv.provenance().len(), conv.segment_count());
    }
}
