//! SVG strokes of a projected wire and tube meshes for OBJ export.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::total_length;
use crate::projection::{project_wire, Camera, StrokeBatch};
use crate::scene::TriangleMesh;
use crate::spline::Wire;

/// Smallest tube radius; thinner cross-sections are clamped to it.
pub const MIN_TUBE_RADIUS: f64 = 1e-4;

/// One `<path>` per stroke with a cubic `d` and the mean endpoint width.
/// Strokes whose mean width is zero are left out.
pub fn strokes_to_svg(batch: &StrokeBatch<f64>, width: usize, height: usize) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    for st in &batch.strokes {
        let w = 0.5 * (st.w_start + st.w_end);
        if !(w > 0.0) {
            continue;
        }
        let [a, b, c, d] = st.q;
        writeln!(
            s,
            r#"<path d="M {} {} C {} {} {} {} {} {}" stroke="black" stroke-width="{}" stroke-linecap="round" fill="none"/>"#,
            a[0], a[1], b[0], b[1], c[0], c[1], d[0], d[1], w
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Project `wire` at `epsilon_px` and write it as SVG.
pub fn export_svg(wire: &Wire<f64>, camera: &Camera<f64>, epsilon_px: f64) -> Result<String> {
    let batch = project_wire(wire, camera, epsilon_px)?;
    Ok(strokes_to_svg(&batch, camera.width, camera.height))
}

/// Result of [`tube_mesh`].
#[derive(Clone, Debug)]
pub struct Tube {
    pub mesh: TriangleMesh,
    /// Rings whose radius was raised to [`MIN_TUBE_RADIUS`].
    pub clamped_rings: usize,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn axpy(a: f64, x: [f64; 3], y: [f64; 3]) -> [f64; 3] {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(v, v).sqrt();
    (n > 1e-12).then(|| v.map(|c| c / n))
}

fn any_normal(t: [f64; 3]) -> [f64; 3] {
    let helper = if t[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    unit(cross(t, helper)).expect("helper is not parallel")
}

/// Closed tube of radius `w(t) / 2` around the curve: `samples` rings of
/// `sides` vertices swept with rotation-minimizing frames (double
/// reflection), plus two fan caps. Every edge is shared by exactly two
/// consistently oriented faces.
pub fn tube_mesh(wire: &Wire<f64>, sides: usize, samples: usize) -> Result<Tube> {
    if sides < 3 || samples < 2 {
        return Err(Error::Config(format!(
            "tube needs sides >= 3 and samples >= 2, got {sides} and {samples}"
        )));
    }
    if !(total_length(wire) > 1e-9) {
        return Err(Error::Degenerate("wire has zero length".into()));
    }
    let curve = wire.curve();
    let ts: Vec<f64> = (0..samples).map(|i| i as f64 / (samples - 1) as f64).collect();
    let pts: Vec<[f64; 4]> = ts.iter().map(|&t| curve.evaluate(t, 0)).collect::<Result<_>>()?;
    let pos: Vec<[f64; 3]> = pts.iter().map(|p| [p[0], p[1], p[2]]).collect();
    let mut tangents = Vec::with_capacity(samples);
    for (i, &t) in ts.iter().enumerate() {
        let d = curve.evaluate(t, 1)?;
        let chord = sub(pos[(i + 1).min(samples - 1)], pos[i.saturating_sub(1)]);
        let tan = unit([d[0], d[1], d[2]])
            .or_else(|| unit(chord))
            .or_else(|| tangents.last().copied())
            .unwrap_or([1.0, 0.0, 0.0]);
        tangents.push(tan);
    }
    let mut normals = vec![any_normal(tangents[0])];
    for i in 0..samples - 1 {
        let r = normals[i];
        let v1 = sub(pos[i + 1], pos[i]);
        let c1 = dot(v1, v1);
        let (r_l, t_l) = if c1 > 1e-24 {
            (
                axpy(-2.0 / c1 * dot(v1, r), v1, r),
                axpy(-2.0 / c1 * dot(v1, tangents[i]), v1, tangents[i]),
            )
        } else {
            (r, tangents[i])
        };
        let v2 = sub(tangents[i + 1], t_l);
        let c2 = dot(v2, v2);
        let next = if c2 > 1e-24 {
            axpy(-2.0 / c2 * dot(v2, r_l), v2, r_l)
        } else {
            r_l
        };
        // re-orthogonalize against drift
        let t = tangents[i + 1];
        let next = unit(axpy(-dot(next, t), t, next)).unwrap_or_else(|| any_normal(t));
        normals.push(next);
    }

    let mut clamped_rings = 0;
    let mut vertices = Vec::with_capacity(samples * sides + 2);
    for i in 0..samples {
        let half = pts[i][3] / 2.0;
        let radius = if half < MIN_TUBE_RADIUS {
            clamped_rings += 1;
            MIN_TUBE_RADIUS
        } else {
            half
        };
        let r = normals[i];
        let s = cross(tangents[i], r);
        for j in 0..sides {
            let a = std::f64::consts::TAU * j as f64 / sides as f64;
            let off = axpy(a.sin(), s, r.map(|c| c * a.cos()));
            vertices.push(axpy(radius, off, pos[i]));
        }
    }
    if clamped_rings > 0 {
        log::warn!("{clamped_rings} tube rings raised to the minimum radius {MIN_TUBE_RADIUS}");
    }
    let start_cap = vertices.len();
    vertices.push(pos[0]);
    vertices.push(pos[samples - 1]);
    let end_cap = start_cap + 1;

    let at = |i: usize, j: usize| i * sides + j % sides;
    let mut faces = Vec::with_capacity(2 * sides * samples);
    for i in 0..samples - 1 {
        for j in 0..sides {
            let (a, b, c, d) = (at(i, j), at(i, j + 1), at(i + 1, j + 1), at(i + 1, j));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for j in 0..sides {
        faces.push([start_cap, at(0, j + 1), at(0, j)]);
        faces.push([end_cap, at(samples - 1, j), at(samples - 1, j + 1)]);
    }
    Ok(Tube {
        mesh: TriangleMesh::new(vertices, faces)?,
        clamped_rings,
    })
}

/// Checks that every undirected edge belongs to exactly two faces that
/// traverse it in opposite directions.
pub fn edge_manifold_audit(mesh: &TriangleMesh) -> std::result::Result<(), String> {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(format!("face {fi} repeats a vertex"));
        }
        for k in 0..3 {
            let e = (f[k], f[(k + 1) % 3]);
            if let Some(prev) = directed.insert(e, fi) {
                return Err(format!(
                    "edge {e:?} is used in the same direction by faces {prev} and {fi}"
                ));
            }
        }
    }
    for &(a, b) in directed.keys() {
        if !directed.contains_key(&(b, a)) {
            return Err(format!("edge ({a}, {b}) is a boundary edge"));
        }
    }
    Ok(())
}

/// Wavefront OBJ text with 1-based face indices.
pub fn to_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(40 * (mesh.vertices.len() + mesh.faces.len()));
    for v in &mesh.vertices {
        writeln!(s, "v {} {} {}", v[0], v[1], v[2]).unwrap();
    }
    for f in &mesh.faces {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}
