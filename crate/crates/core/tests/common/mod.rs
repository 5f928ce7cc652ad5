//! Oracles and generators shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wire4d::fixtures::normalize_unit_diagonal;
use wire4d::optimize::{total_loss, LossSettings, RunConfig, ViewTarget};
use wire4d::spline::DenseConversion;
use wire4d::{Camera, ControlPoint4, ImageBuffer, KnotVector, WidthClamp, Wire};

/// Random wire on non-uniform clamped knots, rescaled to unit diagonal.
pub fn general_wire(seed: u64) -> Wire<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..=24usize);
    let spans = n - 3;
    let mut cuts: Vec<f64> = Vec::with_capacity(spans);
    let mut acc = 0.0;
    for _ in 0..spans {
        acc += rng.gen_range(0.3..1.7);
        cuts.push(acc);
    }
    let mut knots = vec![0.0; 4];
    knots.extend(cuts[..spans - 1].iter().map(|c| c / acc));
    knots.extend([1.0; 4]);
    let mut p = [0.0f64; 3];
    let mut v = [0.0f64; 3];
    let controls = (0..n)
        .map(|_| {
            for k in 0..3 {
                v[k] = 0.5 * v[k] + rng.gen_range(-1.0..1.0);
                p[k] += v[k];
            }
            ControlPoint4::new(p[0], p[1], p[2], rng.gen_range(-2.0..2.0))
        })
        .collect();
    let clamp = WidthClamp::new(0.001, 0.05).unwrap();
    let wire = Wire::new(KnotVector::new(knots).unwrap(), controls, clamp).unwrap();
    normalize_unit_diagonal(&wire)
}

/// Rendered controls as plain arrays.
pub fn rendered(wire: &Wire<f64>) -> Vec<[f64; 4]> {
    wire.curve().controls().to_vec()
}

/// Derivative control polygon: knots trimmed by one at each end.
fn hodograph(knots: &[f64], ctrl: &[[f64; 4]], p: usize) -> (Vec<f64>, Vec<[f64; 4]>) {
    let q = (0..ctrl.len() - 1)
        .map(|i| {
            let d = knots[i + p + 1] - knots[i + 1];
            std::array::from_fn(|k| {
                if d > 0.0 {
                    p as f64 * (ctrl[i + 1][k] - ctrl[i][k]) / d
                } else {
                    0.0
                }
            })
        })
        .collect();
    (knots[1..knots.len() - 1].to_vec(), q)
}

/// de Boor on the polynomial piece of span `k` (`u_k <= t <= u_{k+1}`).
fn de_boor(knots: &[f64], ctrl: &[[f64; 4]], p: usize, k: usize, t: f64) -> [f64; 4] {
    let mut d: Vec<[f64; 4]> = (0..=p).map(|j| ctrl[j + k - p]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let i = j + k - p;
            let den = knots[i + p + 1 - r] - knots[i];
            let a = if den > 0.0 { (t - knots[i]) / den } else { 0.0 };
            d[j] = std::array::from_fn(|c| (1.0 - a) * d[j - 1][c] + a * d[j][c]);
        }
    }
    d[p]
}

/// Order-`order` derivative of the piece on knot span `k`, independent of the
/// library's evaluation path.
pub fn piece_derivative(knots: &[f64], ctrl: &[[f64; 4]], k: usize, order: usize, t: f64) -> [f64; 4] {
    let mut p = 3;
    let (mut u, mut c) = (knots.to_vec(), ctrl.to_vec());
    let mut k = k;
    for _ in 0..order {
        (u, c) = hodograph(&u, &c, p);
        p -= 1;
        k -= 1;
    }
    if p == 0 {
        return c[k];
    }
    de_boor(&u, &c, p, k, t)
}

/// Span index holding `t`, the last non-empty span for `t = 1`.
pub fn span_of(knots: &[f64], t: f64) -> usize {
    let n = knots.len() - 4;
    if t >= knots[n] {
        return (3..n).rev().find(|&k| knots[k] < knots[k + 1]).unwrap();
    }
    (3..n).rev().find(|&k| knots[k] <= t).unwrap()
}

/// Reference evaluation of the rendered curve at `t`.
pub fn oracle_eval(wire: &Wire<f64>, t: f64) -> [f64; 4] {
    let u = wire.knots().as_slice();
    piece_derivative(u, &rendered(wire), span_of(u, t), 0, t)
}

pub fn max_abs_diff(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn norm(a: &[f64; 4]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest deviation between the oracle and the Bézier segments produced by
/// the dense conversion with `counts` segments per span, over `samples`
/// uniform parameters.
pub fn conversion_deviation(wire: &Wire<f64>, counts: &[u32], samples: usize) -> f64 {
    let conv = DenseConversion::new(wire.knots(), counts).unwrap();
    let segs = conv.apply(&rendered(wire));
    let params = conv.segment_parameters();
    (0..samples)
        .map(|i| {
            let t = i as f64 / (samples - 1) as f64;
            let j = params.iter().position(|&(a, b)| a <= t && t <= b).unwrap();
            let (a, b) = params[j];
            let got = segs[j].eval((t - a) / (b - a));
            max_abs_diff(&got, &oracle_eval(wire, t))
        })
        .fold(0.0, f64::max)
}

/// Largest deviation between the library's Cox–de Boor evaluation and the
/// oracle.
pub fn basis_deviation(wire: &Wire<f64>, samples: usize) -> f64 {
    (0..samples)
        .map(|i| {
            let t = i as f64 / (samples - 1) as f64;
            max_abs_diff(&wire.evaluate(t, 0).unwrap(), &oracle_eval(wire, t))
        })
        .fold(0.0, f64::max)
}

/// Largest change of the rendered curve after inserting `u`.
pub fn insertion_deviation(wire: &Wire<f64>, u: f64, samples: usize) -> (f64, Wire<f64>) {
    let (refined, _) = wire.insert_knot(u).unwrap();
    let dev = (0..samples)
        .map(|i| {
            let t = i as f64 / (samples - 1) as f64;
            max_abs_diff(&refined.evaluate(t, 0).unwrap(), &wire.evaluate(t, 0).unwrap())
        })
        .fold(0.0, f64::max);
    (dev, refined)
}

/// Largest relative jump of orders 0..=2 across the interior knots, from the
/// one-sided polynomial pieces.
pub fn c2_jump(wire: &Wire<f64>) -> f64 {
    let u = wire.knots().as_slice();
    let ctrl = rendered(wire);
    let n = ctrl.len();
    let mut worst = 0.0f64;
    for k in 4..n {
        if u[k] == u[k - 1] || u[k] == u[k + 1] {
            continue;
        }
        let left = (3..k).rev().find(|&j| u[j] < u[j + 1]).unwrap();
        for order in 0..=2 {
            let a = piece_derivative(u, &ctrl, left, order, u[k]);
            let b = piece_derivative(u, &ctrl, k, order, u[k]);
            let scale = norm(&a).max(norm(&b)).max(1e-300);
            worst = worst.max(max_abs_diff(&a, &b) / scale);
        }
    }
    worst
}

/// Per-parameter relative error of the jerk gradient against central
/// differences; entries below `1e-6` of the largest are compared absolutely
/// against that floor.
pub fn jerk_fd_error(wire: &Wire<f64>) -> f64 {
    let (_, g) = wire.jerk_energy();
    let grads: Vec<f64> = g.iter().flatten().copied().collect();
    let params = wire.params();
    let scale = grads.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let h = 1e-5 * params[i].abs().max(1.0);
        let at = |d: f64| {
            let mut p = params.clone();
            p[i] += d;
            let mut w = wire.clone();
            w.set_params(&p);
            w.jerk_energy().0
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let den = grads[i].abs().max(fd.abs()).max(1e-6 * scale);
        worst = worst.max((grads[i] - fd).abs() / den);
    }
    worst
}

/// Relative errors of the composed project + rasterize + MMSE gradient on
/// `count` random parameters whose analytic gradient is not negligible.
pub fn composed_fd_errors(wire: &Wire<f64>, view: &ViewTarget<f64>, count: usize, seed: u64) -> Vec<f64> {
    let cfg = RunConfig {
        lambda_g: 0.0,
        ..Default::default()
    };
    let s = LossSettings::from_config(&cfg, 1.0);
    let loss = |w: &Wire<f64>| total_loss(w, std::slice::from_ref(view), &s, None, 0.0).unwrap();
    let eval = loss(wire);
    let grads: Vec<f64> = eval.grad.iter().flatten().copied().collect();
    let scale = grads.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let params = wire.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.gen_range(0..params.len());
        if grads[i].abs() < 1e-3 * scale {
            continue;
        }
        let h = 1e-6;
        let at = |d: f64| {
            let mut p = params.clone();
            p[i] += d;
            let mut w = wire.clone();
            w.set_params(&p);
            loss(&w).total
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        out.push((grads[i] - fd).abs() / grads[i].abs().max(fd.abs()));
    }
    out
}

/// 64×64 view of a unit-diagonal wire at the origin with a random target.
pub fn small_view(size: usize, seed: u64) -> ViewTarget<f64> {
    let camera = Camera::look_at([0.0, 0.0, 2.0], [0.0; 3], [0.0, 1.0, 0.0], 40.0, size, size, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = (0..size * size)
        .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
        .collect();
    let mask = ImageBuffer::from_vec(size, size, bits).unwrap();
    ViewTarget {
        camera,
        mask: Some(mask),
        depth: None,
        guidance_id: None,
    }
}
