//! Triangle meshes, depth buffers and soft visibility attenuation.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::projection::{BatchGrad, Camera, StrokeBatch};
use crate::scalar::{sigmoid, Real};

/// Depth used in place of the background sentinel when sampling.
pub const BACKGROUND_DEPTH: f64 = 1e6;
/// Faces with area at or below this are dropped on load.
const MIN_FACE_AREA: f64 = 1e-12;
const BAND_ROWS: usize = 16;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidSize(format!("face {i} references a missing vertex")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let n = cross3(&sub3(&b, &a), &sub3(&c, &a));
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    /// Drop faces with (near) zero area.
    pub fn remove_degenerate(&mut self) {
        let keep: Vec<bool> = (0..self.faces.len())
            .map(|f| self.face_area(f) > MIN_FACE_AREA)
            .collect();
        let mut it = keep.iter();
        self.faces.retain(|_| *it.next().expect("same length"));
    }

    /// Translate the bounding-box center to the origin and scale so the
    /// farthest vertex lies on the unit sphere.
    pub fn normalize_unit_sphere(&mut self) {
        if self.vertices.is_empty() {
            return;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let c: [f64; 3] = std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]));
        let r = self
            .vertices
            .iter()
            .map(|v| {
                let d = sub3(v, &c);
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .fold(0.0, f64::max);
        let s = if r > 0.0 { 1.0 / r } else { 1.0 };
        for v in &mut self.vertices {
            *v = std::array::from_fn(|k| (v[k] - c[k]) * s);
        }
    }

    /// Latitude–longitude sphere of the given radius about the origin.
    pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> Self {
        let stacks = stacks.max(2);
        let slices = slices.max(3);
        let mut vertices = vec![[0.0, radius, 0.0]];
        for i in 1..stacks {
            let phi = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let th = std::f64::consts::TAU * j as f64 / slices as f64;
                vertices.push([
                    radius * phi.sin() * th.cos(),
                    radius * phi.cos(),
                    radius * phi.sin() * th.sin(),
                ]);
            }
        }
        vertices.push([0.0, -radius, 0.0]);
        let bottom = vertices.len() - 1;
        let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
        let mut faces = Vec::new();
        for j in 0..slices {
            faces.push([0, ring(1, j + 1), ring(1, j)]);
            faces.push([bottom, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        Self { vertices, faces }
    }
}

fn parse_index(token: &str, count: usize) -> std::result::Result<usize, String> {
    let first = token.split('/').next().unwrap_or("");
    let i: i64 = first.parse().map_err(|_| format!("bad vertex index '{token}'"))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err("vertex index 0 is not valid in OBJ".into());
    };
    if idx < 0 || idx as usize >= count {
        return Err(format!("vertex index {i} out of range (have {count} vertices)"));
    }
    Ok(idx as usize)
}

/// Parse ASCII OBJ `v`/`f` records; polygons are fan-triangulated.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad coordinate '{t}'"))))
                    .collect::<Result<_>>()?;
                if coords.len() < 3 || coords.len() > 4 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(err("vertex needs three finite coordinates".into()));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|t| parse_index(t, vertices.len()).map_err(&err))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriangleMesh { vertices, faces };
    mesh.remove_degenerate();
    if mesh.faces.is_empty() {
        return Err(Error::format(path, "mesh has no non-degenerate faces"));
    }
    Ok(mesh)
}

/// Load an OBJ file, optionally normalizing it to the unit sphere.
pub fn load_mesh(path: impl AsRef<Path>, normalize: bool) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = parse_obj(&text, path)?;
    if normalize {
        mesh.normalize_unit_sphere();
    }
    Ok(mesh)
}

/// Clip a camera-space polygon against `z >= near`.
fn clip_near(poly: &[[f64; 3]], near: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a[2] >= near, b[2] >= near);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (near - a[2]) / (b[2] - a[2]);
            out.push(std::array::from_fn(|k| a[k] + t * (b[k] - a[k])));
        }
    }
    out
}

/// Screen-space triangle with per-vertex inverse depth.
struct ScreenTri {
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    area: f64,
    bounds: (f64, f64, f64, f64),
}

/// Camera-space depth of the nearest surface per pixel; `+∞` where no
/// triangle is visible.
pub fn render_depth<T: Real>(mesh: &TriangleMesh, camera: &Camera<T>) -> ImageBuffer<T> {
    let cam: Camera<f64> = camera.cast();
    let (w, h) = (cam.width, cam.height);
    let mut tris = Vec::new();
    for f in &mesh.faces {
        let poly: Vec<[f64; 3]> = f.iter().map(|&i| cam.to_camera(&mesh.vertices[i])).collect();
        let clipped = clip_near(&poly, cam.near);
        if clipped.len() < 3 {
            continue;
        }
        let proj: Vec<([f64; 2], f64)> = clipped
            .iter()
            .map(|c| {
                (
                    [cam.fx * c[0] / c[2] + cam.cx, cam.fy * c[1] / c[2] + cam.cy],
                    1.0 / c[2],
                )
            })
            .collect();
        for k in 1..proj.len() - 1 {
            let v = [proj[0], proj[k], proj[k + 1]];
            let p = v.map(|x| x.0);
            let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            if area.abs() < 1e-18 {
                continue;
            }
            let xs = p.map(|q| q[0]);
            let ys = p.map(|q| q[1]);
            let min = |a: [f64; 3]| a[0].min(a[1]).min(a[2]);
            let max = |a: [f64; 3]| a[0].max(a[1]).max(a[2]);
            tris.push(ScreenTri {
                p,
                inv_z: v.map(|x| x.1),
                area,
                bounds: (min(xs), min(ys), max(xs), max(ys)),
            });
        }
    }
    let rows: Vec<(usize, Vec<f64>)> = (0..h)
        .step_by(BAND_ROWS)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|y0| {
            let rows = BAND_ROWS.min(h - y0);
            let mut buf = vec![f64::INFINITY; rows * w];
            for t in &tris {
                let (bx0, by0, bx1, by1) = t.bounds;
                let ylo = (by0 - 0.5).ceil().max(y0 as f64);
                let yhi = (by1 - 0.5).floor().min((y0 + rows) as f64 - 1.0);
                let xlo = (bx0 - 0.5).ceil().max(0.0);
                let xhi = (bx1 - 0.5).floor().min(w as f64 - 1.0);
                if ylo > yhi || xlo > xhi {
                    continue;
                }
                for y in ylo as usize..=yhi as usize {
                    let py = y as f64 + 0.5;
                    for x in xlo as usize..=xhi as usize {
                        let px = x as f64 + 0.5;
                        let edge =
                            |a: &[f64; 2], b: &[f64; 2]| (b[0] - a[0]) * (py - a[1]) - (px - a[0]) * (b[1] - a[1]);
                        let l0 = edge(&t.p[1], &t.p[2]) / t.area;
                        let l1 = edge(&t.p[2], &t.p[0]) / t.area;
                        let l2 = edge(&t.p[0], &t.p[1]) / t.area;
                        if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                            continue;
                        }
                        // 1/z is affine in screen space
                        let z = 1.0 / (l0 * t.inv_z[0] + l1 * t.inv_z[1] + l2 * t.inv_z[2]);
                        let k = (y - y0) * w + x;
                        if z < buf[k] {
                            buf[k] = z;
                        }
                    }
                }
            }
            (y0, buf)
        })
        .collect();
    let mut img = ImageBuffer::filled(w, h, T::infinity());
    let data = img.data_mut();
    for (y0, buf) in rows {
        for (i, v) in buf.into_iter().enumerate() {
            data[y0 * w + i] = T::lit(v);
        }
    }
    img
}

/// Write a depth buffer: little-endian `u32` width and height, then `f32`
/// row-major values.
pub fn save_depth<T: Real>(path: impl AsRef<Path>, depth: &ImageBuffer<T>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(8 + 4 * depth.data().len());
    bytes.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    bytes.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    for v in depth.data() {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn load_depth<T: Real>(path: impl AsRef<Path>) -> Result<ImageBuffer<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(path, "depth file shorter than its header"));
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * w * h {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes for {w}x{h}, got {}", 4 * w * h, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    ImageBuffer::from_vec(w, h, data)
}

/// Bilinear depth at pixel coordinates `(u, v)`; pixel centers sit at
/// half-integers and background reads as [`BACKGROUND_DEPTH`].
pub fn sample_depth<T: Real>(depth: &ImageBuffer<T>, u: T, v: T) -> T {
    let (w, h) = depth.dims();
    if w == 0 || h == 0 {
        return T::lit(BACKGROUND_DEPTH);
    }
    let fetch = |x: i64, y: i64| {
        let x = x.clamp(0, w as i64 - 1) as usize;
        let y = y.clamp(0, h as i64 - 1) as usize;
        let d = depth.get(x, y);
        if d.is_finite() {
            d.min(T::lit(BACKGROUND_DEPTH))
        } else {
            T::lit(BACKGROUND_DEPTH)
        }
    };
    let fx = u - T::lit(0.5);
    let fy = v - T::lit(0.5);
    if !(fx.is_finite() && fy.is_finite()) {
        return T::lit(BACKGROUND_DEPTH);
    }
    let x0 = fx.floor();
    let y0 = fy.floor();
    let (ax, ay) = (fx - x0, fy - y0);
    let (xi, yi) = (x0.as_f64() as i64, y0.as_f64() as i64);
    let top = fetch(xi, yi) * (T::one() - ax) + fetch(xi + 1, yi) * ax;
    let bottom = fetch(xi, yi + 1) * (T::one() - ax) + fetch(xi + 1, yi + 1) * ax;
    top * (T::one() - ay) + bottom * ay
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilityParams {
    /// Sharpness in inverse scene units.
    pub k: f64,
    /// Shift bias in scene units.
    pub b: f64,
}

impl Default for VisibilityParams {
    fn default() -> Self {
        Self { k: 100.0, b: 0.05 }
    }
}

impl VisibilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite() && self.b.is_finite()) {
            return Err(Error::Config(format!(
                "visibility needs k > 0 and finite b, got k={} b={}",
                self.k, self.b
            )));
        }
        Ok(())
    }
}

/// `V = σ(k (z_mesh − z_curve + b))` and `dV/dz_curve`.
pub fn soft_visibility<T: Real>(z_mesh: T, z_curve: T, params: &VisibilityParams) -> (T, T) {
    let zm = if z_mesh.is_finite() {
        z_mesh.min(T::lit(BACKGROUND_DEPTH))
    } else {
        T::lit(BACKGROUND_DEPTH)
    };
    let k = T::lit(params.k);
    let v = sigmoid(k * (zm - z_curve + T::lit(params.b)));
    (v, -k * v * (T::one() - v))
}

/// Visibility factors applied to a batch, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Attenuation<T> {
    /// `V` at each stroke endpoint.
    pub v: Vec<[T; 2]>,
    /// `dV/dz_curve` at each stroke endpoint.
    pub dv: Vec<[T; 2]>,
}

/// Scale stroke endpoint widths by soft visibility against a depth buffer.
/// The mesh depth is sampled where each endpoint projects and is treated as
/// a constant.
pub fn attenuate_batch<T: Real>(
    batch: &StrokeBatch<T>,
    depth: &ImageBuffer<T>,
    params: &VisibilityParams,
) -> (StrokeBatch<T>, Attenuation<T>) {
    let mut out = batch.clone();
    let mut att = Attenuation {
        v: Vec::with_capacity(batch.len()),
        dv: Vec::with_capacity(batch.len()),
    };
    for (s, z) in out.strokes.iter_mut().zip(&batch.depths) {
        let ends = [s.q[0], s.q[3]];
        let mut v = [T::zero(); 2];
        let mut dv = [T::zero(); 2];
        for e in 0..2 {
            let zm = sample_depth(depth, ends[e][0], ends[e][1]);
            (v[e], dv[e]) = soft_visibility(zm, z[e], params);
        }
        s.w_start *= v[0];
        s.w_end *= v[1];
        att.v.push(v);
        att.dv.push(dv);
    }
    (out, att)
}

/// Pull a gradient on the attenuated batch back to the unattenuated one.
pub fn attenuate_backward<T: Real>(base: &StrokeBatch<T>, att: &Attenuation<T>, grad: &BatchGrad<T>) -> BatchGrad<T> {
    let mut out = grad.clone();
    for i in 0..base.len() {
        let s = &base.strokes[i];
        let g = &grad.strokes[i];
        out.strokes[i].w_start = g.w_start * att.v[i][0];
        out.strokes[i].w_end = g.w_end * att.v[i][1];
        out.depths[i][0] += g.w_start * s.w_start * att.dv[i][0];
        out.depths[i][1] += g.w_end * s.w_end * att.dv[i][1];
    }
    out
}
