//! Width-guided pruning and reinitialization, and gradient-driven knot
//! insertion.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spline::{Insertion, Wire};

/// Sampling region for reinitialized controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bounds {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Bounds::Box { min, max } => (0..3).all(|k| min[k].is_finite() && max[k].is_finite() && min[k] <= max[k]),
            Bounds::Sphere { center, radius } => {
                center.iter().all(|c| c.is_finite()) && radius.is_finite() && *radius >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("empty reinitialization bounds {self:?}")))
        }
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        match self {
            Bounds::Box { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
            Bounds::Sphere { center, radius } => {
                (0..3).map(|k| (p[k] - center[k]).powi(2)).sum::<f64>() <= radius * radius
            }
        }
    }

    /// Axis-aligned bounding box of a point set.
    pub fn enclosing(points: &[[f64; 3]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("cannot bound an empty point set".into()));
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Ok(Bounds::Box { min, max })
    }

    /// Uniform sample from the region.
    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        match *self {
            Bounds::Box { min, max } => std::array::from_fn(|k| {
                if max[k] > min[k] {
                    rng.gen_range(min[k]..=max[k])
                } else {
                    min[k]
                }
            }),
            Bounds::Sphere { center, radius } => loop {
                let d: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
                if d.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    break std::array::from_fn(|k| center[k] + radius * d[k]);
                }
            },
        }
    }
}

/// Outcome of one reinitialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub pruned_indices: Vec<usize>,
    pub new_positions: Vec<[f64; 3]>,
    pub reset_width: f64,
}

/// Topology event line of the run log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopologyEvent {
    pub iter: usize,
    pub pruned: Vec<usize>,
    pub inserted_spans: Vec<usize>,
}

/// Controls whose clamped width fell below `width_epsilon`.
pub fn detect_prune_set<T: Real>(wire: &Wire<T>, width_epsilon: T) -> Result<Vec<usize>> {
    if !(width_epsilon > T::zero()) {
        return Err(Error::Config(format!(
            "width_epsilon must be positive, got {width_epsilon}"
        )));
    }
    Ok(wire
        .clamped_widths()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w < width_epsilon)
        .map(|(i, _)| i)
        .collect())
}

/// Move pruned controls to random positions inside `bounds` and reset their
/// width to `reset_width`. Control count and knots are unchanged.
pub fn width_guided_reinit<T: Real>(
    wire: &Wire<T>,
    prune: &[usize],
    bounds: &Bounds,
    reset_width: T,
    seed: u64,
) -> Result<(Wire<T>, PruneReport)> {
    bounds.validate()?;
    let mut seen = vec![false; wire.control_count()];
    for &i in prune {
        if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidSize(format!(
                "prune index {i} is out of range or repeated"
            )));
        }
    }
    let mut out = wire.clone();
    let raw = wire.clamp().invert(reset_width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PruneReport {
        pruned_indices: prune.to_vec(),
        new_positions: Vec::with_capacity(prune.len()),
        reset_width: wire.clamp().apply(raw).as_f64(),
    };
    for &i in prune {
        let p = bounds.sample(&mut rng);
        let c = &mut out.controls_mut()[i];
        c.x = T::lit(p[0]);
        c.y = T::lit(p[1]);
        c.z = T::lit(p[2]);
        c.w = raw;
        report.new_positions.push(p);
    }
    Ok((out, report))
}

/// Per-control gradient magnitudes over a trailing window of iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientHistory {
    window: usize,
    entries: VecDeque<Vec<f64>>,
}

impl GradientHistory {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("gradient history window must be >= 1".into()));
        }
        Ok(Self {
            window,
            entries: VecDeque::with_capacity(window),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Record one iteration of per-control gradient magnitudes.
    pub fn push(&mut self, magnitudes: Vec<f64>) {
        if let Some(last) = self.entries.back() {
            if last.len() != magnitudes.len() {
                // control count changed; older rows no longer line up
                self.entries.clear();
            }
        }
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back(magnitudes);
    }

    /// Record the norms of a raw-parameter gradient.
    pub fn push_gradient<T: Real>(&mut self, grad: &[[T; 4]]) {
        self.push(
            grad.iter()
                .map(|g| g.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt())
                .collect(),
        );
    }

    /// Sum over the window per control, for `control_count` controls.
    pub fn accumulated(&self, control_count: usize) -> Vec<f64> {
        let mut acc = vec![0.0; control_count];
        for row in &self.entries {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Result of [`gradient_knot_refine`].
#[derive(Clone, Debug, PartialEq)]
pub struct Refinement<T> {
    pub wire: Wire<T>,
    /// Refined spans, in the numbering of the input wire.
    pub spans: Vec<usize>,
    /// Insertions in the order they were applied.
    pub insertions: Vec<Insertion>,
}

/// Insert `k` knots at the midpoints of the spans with the largest
/// accumulated gradient over their four supporting controls.
pub fn gradient_knot_refine<T: Real>(wire: &Wire<T>, history: &GradientHistory, k: usize) -> Result<Refinement<T>> {
    if k == 0 {
        return Err(Error::Config("insert count must be >= 1".into()));
    }
    let spans = wire.spans();
    if spans.len() < k {
        return Err(Error::InvalidKnots(format!(
            "{} insertions requested but only {} spans",
            k,
            spans.len()
        )));
    }
    let acc = history.accumulated(wire.control_count());
    let saliency: Vec<f64> = spans
        .iter()
        .map(|s| (0..4).map(|j| acc[s.first_control() + j]).fold(0.0, f64::max))
        .collect();
    let mut order: Vec<usize> = (0..spans.len()).collect();
    // stable sort keeps lower span index first among ties
    order.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]));
    let mut chosen: Vec<usize> = order[..k].to_vec();
    chosen.sort_unstable();
    let mut out = wire.clone();
    let mut insertions = Vec::with_capacity(k);
    for &j in &chosen {
        let (w, ins) = out.insert_knot(spans[j].midpoint())?;
        out = w;
        insertions.push(ins);
    }
    Ok(Refinement {
        wire: out,
        spans: chosen,
        insertions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_wire;
    use crate::spline::{ControlPoint4, WidthClamp};

    fn wire_with_widths(widths: &[f64]) -> Wire<f64> {
        let clamp = WidthClamp::new(0.0, 1.0).unwrap();
        let controls = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| ControlPoint4::new(i as f64, 0.0, 0.0, clamp.invert(w)))
            .collect();
        Wire::uniform(controls, clamp).unwrap()
    }

    #[test]
    fn prune_threshold() {
        let w = wire_with_widths(&[0.5, 0.0001, 0.3, 0.6]);
        assert_eq!(detect_prune_set(&w, 0.01).unwrap(), vec![1]);
        assert!(detect_prune_set(&w, 1e-6).unwrap().is_empty());
        assert_eq!(detect_prune_set(&w, 0.99).unwrap(), vec![0, 1, 2, 3]);
        assert!(detect_prune_set(&w, 0.0).is_err());
    }

    #[test]
    fn empty_reinit_is_identity() {
        let w = random_wire::<f64>(10, 2);
        let b = Bounds::Sphere {
            center: [0.0; 3],
            radius: 1.0,
        };
        let (out, report) = width_guided_reinit(&w, &[], &b, 0.01, 5).unwrap();
        assert_eq!(out, w);
        assert!(report.pruned_indices.is_empty());
    }

    #[test]
    fn reinit_is_local_and_seeded() {
        let w = random_wire::<f64>(10, 2);
        let b = Bounds::Box {
            min: [2.0, 2.0, 2.0],
            max: [3.0, 4.0, 5.0],
        };
        let (out, report) = width_guided_reinit(&w, &[4], &b, 0.01, 5).unwrap();
        assert_eq!(out.knots(), w.knots());
        assert_eq!(out.control_count(), w.control_count());
        for i in 0..10 {
            if i == 4 {
                assert!(b.contains(&out.controls()[i].position()));
                assert!((out.clamped_width(i) - 0.01).abs() < 1e-12);
            } else {
                assert_eq!(out.controls()[i], w.controls()[i]);
            }
        }
        let (again, _) = width_guided_reinit(&w, &[4], &b, 0.01, 5).unwrap();
        assert_eq!(out, again);
        assert_eq!(report.new_positions[0], out.controls()[4].position());
        let (other, _) = width_guided_reinit(&w, &[4], &b, 0.01, 6).unwrap();
        assert_ne!(out, other);
    }

    #[test]
    fn reinit_rejects_bad_input() {
        let w = random_wire::<f64>(6, 2);
        let bad = Bounds::Box {
            min: [0.0; 3],
            max: [1.0, -1.0, 1.0],
        };
        assert!(width_guided_reinit(&w, &[1], &bad, 0.01, 0).is_err());
        let b = Bounds::Sphere {
            center: [0.0; 3],
            radius: 1.0,
        };
        assert!(width_guided_reinit(&w, &[6], &b, 0.01, 0).is_err());
        assert!(width_guided_reinit(&w, &[1, 1], &b, 0.01, 0).is_err());
    }

    #[test]
    fn uniform_history_refines_first_span() {
        let w = random_wire::<f64>(8, 1);
        let mut h = GradientHistory::new(3).unwrap();
        h.push(vec![1.0; 8]);
        let r = gradient_knot_refine(&w, &h, 1).unwrap();
        assert_eq!(r.spans, vec![0]);
        assert_eq!(r.wire.control_count(), 9);
        let new_knot = r.wire.knots().as_slice()[4];
        assert!((new_knot - w.spans()[0].midpoint()).abs() < 1e-15);
    }

    #[test]
    fn peaked_history_targets_its_spans() {
        let w = random_wire::<f64>(10, 1);
        let mut h = GradientHistory::new(50).unwrap();
        let mut g = vec![0.1; 10];
        g[9] = 5.0;
        h.push(g);
        // control 9 supports only the last span
        let r = gradient_knot_refine(&w, &h, 1).unwrap();
        assert_eq!(r.spans, vec![6]);
        let r = gradient_knot_refine(&w, &h, 3).unwrap();
        assert_eq!(r.spans, vec![0, 1, 6]);
        assert_eq!(r.wire.control_count(), 13);
        for j in 0..200 {
            let t = j as f64 / 199.0;
            let a = w.evaluate(t, 0).unwrap();
            let b = r.wire.evaluate(t, 0).unwrap();
            assert!((0..4).all(|d| (a[d] - b[d]).abs() < 1e-9));
        }
        assert!(gradient_knot_refine(&w, &h, 8).is_err());
        assert!(gradient_knot_refine(&w, &h, 0).is_err());
    }

    #[test]
    fn history_window_slides() {
        let mut h = GradientHistory::new(2).unwrap();
        h.push(vec![1.0, 2.0]);
        h.push(vec![3.0, 4.0]);
        h.push(vec![5.0, 6.0]);
        assert_eq!(h.accumulated(2), vec![8.0, 10.0]);
        h.push(vec![1.0, 1.0, 1.0]);
        assert_eq!(h.len(), 1);
        assert!(GradientHistory::new(0).is_err());
    }

    #[test]
    fn event_line_format() {
        let e = TopologyEvent {
            iter: 150,
            pruned: vec![3, 9],
            inserted_spans: vec![],
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"iter":150,"pruned":[3,9],"inserted_spans":[]}"#
        );
    }
}
