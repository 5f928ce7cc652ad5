use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm, Real};

/// Pinhole camera: intrinsics in pixels, rigid world → camera transform.
///
/// Camera space looks down `+z` with `x` to the right and `y` down the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    /// Row-major world → camera rotation.
    pub rotation: [[T; 3]; 3],
    pub translation: [T; 3],
    pub near: T,
}

/// JSON form of a camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub near: f64,
}

fn cross<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalized<T: Real>(a: [T; 3]) -> [T; 3] {
    let n = norm(&a);
    a.map(|v| v / n)
}

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        rotation: [[T; 3]; 3],
        translation: [T; 3],
        near: T,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
            near,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.near > T::zero()) {
            return Err(Error::InvalidCamera("near plane must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be non-zero".into()));
        }
        let all = [self.fx, self.fy, self.cx, self.cy, self.near]
            .into_iter()
            .chain(self.rotation.iter().flatten().copied())
            .chain(self.translation);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        let tol = 1e-9f64.max(64.0 * T::epsilon().as_f64());
        let r = self.rotation.map(|row| row.map(|v| v.as_f64()));
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (d - expect).abs() > tol {
                    return Err(Error::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidCamera("rotation determinant is not 1".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with vertical field of view in
    /// degrees and the principal point at the image center.
    pub fn look_at(
        eye: [T; 3],
        target: [T; 3],
        up: [T; 3],
        fov_y_degrees: T,
        width: usize,
        height: usize,
        near: T,
    ) -> Result<Self> {
        let forward = normalized(std::array::from_fn(|i| target[i] - eye[i]));
        let right = cross(&forward, &up);
        if !(norm(&right) > T::lit(1e-12)) {
            return Err(Error::InvalidCamera("up vector parallel to view direction".into()));
        }
        let right = normalized(right);
        let down = cross(&forward, &right);
        let rotation = [right, down, forward];
        let translation =
            std::array::from_fn(|i| -(rotation[i][0] * eye[0] + rotation[i][1] * eye[1] + rotation[i][2] * eye[2]));
        let half = T::lit(0.5);
        let fy = T::from_count(height) * half / (fov_y_degrees.to_radians() * half).tan();
        Self::new(
            fy,
            fy,
            T::from_count(width) * half,
            T::from_count(height) * half,
            width,
            height,
            rotation,
            translation,
            near,
        )
    }

    /// World point in camera coordinates.
    #[inline]
    pub fn to_camera(&self, p: &[T; 3]) -> [T; 3] {
        std::array::from_fn(|i| {
            self.rotation[i][0] * p[0] + self.rotation[i][1] * p[1] + self.rotation[i][2] * p[2] + self.translation[i]
        })
    }

    /// Camera-space point back to world coordinates.
    pub fn to_world(&self, c: &[T; 3]) -> [T; 3] {
        let d: [T; 3] = std::array::from_fn(|i| c[i] - self.translation[i]);
        std::array::from_fn(|i| self.rotation[0][i] * d[0] + self.rotation[1][i] * d[1] + self.rotation[2][i] * d[2])
    }

    /// Camera-space vector rotated back to world axes.
    #[inline]
    pub(crate) fn rotate_to_world(&self, v: &[T; 3]) -> [T; 3] {
        std::array::from_fn(|i| self.rotation[0][i] * v[0] + self.rotation[1][i] * v[1] + self.rotation[2][i] * v[2])
    }

    /// Pinhole projection of a camera-space point.
    #[inline]
    pub fn project_camera(&self, c: &[T; 3]) -> Result<[T; 2]> {
        if !(c[2] > self.near) {
            return Err(Error::Clipped {
                depth: c[2].as_f64(),
                near: self.near.as_f64(),
            });
        }
        Ok([self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy])
    }

    /// Pixel coordinates and camera depth of a world point.
    pub fn project_point(&self, p: &[T; 3]) -> Result<([T; 2], T)> {
        let c = self.to_camera(p);
        Ok((self.project_camera(&c)?, c[2]))
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> [T; 3] {
        self.to_world(&[T::zero(); 3])
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.as_f64());
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            width: self.width,
            height: self.height,
            rotation: self.rotation.map(|r| r.map(c)),
            translation: self.translation.map(c),
            near: c(self.near),
        }
    }

    pub fn to_file(&self) -> CameraFile {
        let r = self.rotation.map(|row| row.map(|v| v.as_f64()));
        CameraFile {
            fx: self.fx.as_f64(),
            fy: self.fy.as_f64(),
            cx: self.cx.as_f64(),
            cy: self.cy.as_f64(),
            width: self.width,
            height: self.height,
            rotation: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ],
            translation: self.translation.map(|v| v.as_f64()),
            near: self.near.as_f64(),
        }
    }

    pub fn from_file(f: &CameraFile) -> Result<Self> {
        let r = f.rotation.map(T::lit);
        Self::new(
            T::lit(f.fx),
            T::lit(f.fy),
            T::lit(f.cx),
            T::lit(f.cy),
            f.width,
            f.height,
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            f.translation.map(T::lit),
            T::lit(f.near),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CameraFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_file(&file).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.to_file()).expect("camera serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const I3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn unit_cam() -> Camera<f64> {
        Camera::new(1.0, 1.0, 0.0, 0.0, 64, 64, I3, [0.0; 3], 0.01).unwrap()
    }

    #[test]
    fn pinhole_division() {
        let (uv, z) = unit_cam().project_point(&[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(uv, [0.5, 0.5]);
        assert_eq!(z, 2.0);
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = Camera::new(300.0, 310.0, 32.5, 31.0, 64, 64, I3, [0.0; 3], 0.01).unwrap();
        let (uv, _) = cam.project_point(&[0.0, 0.0, 5.0]).unwrap();
        assert_eq!(uv, [32.5, 31.0]);
    }

    #[test]
    fn rigid_translation_invariance() {
        let offset = [0.3, -1.2, 4.0];
        let a = unit_cam();
        let mut b = unit_cam();
        b.translation = offset.map(|v: f64| -v);
        let p = [0.2, 0.7, 3.0];
        let moved = [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]];
        assert_eq!(a.project_point(&p).unwrap(), b.project_point(&moved).unwrap());
    }

    #[test]
    fn behind_near_plane_is_clipped() {
        assert!(matches!(
            unit_cam().project_point(&[0.0, 0.0, 0.005]),
            Err(Error::Clipped { .. })
        ));
        assert!(unit_cam().project_point(&[0.0, 0.0, -1.0]).is_err());
    }

    #[test]
    fn look_at_conventions() {
        let cam: Camera<f64> = Camera::look_at([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 40.0, 128, 96, 0.1).unwrap();
        let (c, z) = cam.project_point(&[0.0, 0.0, 0.0]).unwrap();
        assert!((z - 3.0).abs() < 1e-12);
        assert!((c[0] - 64.0).abs() < 1e-12 && (c[1] - 48.0).abs() < 1e-12);
        // world +x appears to the right, world +y appears up (smaller v)
        let (px, _) = cam.project_point(&[0.5, 0.0, 0.0]).unwrap();
        let (py, _) = cam.project_point(&[0.0, 0.5, 0.0]).unwrap();
        assert!(px[0] > 64.0 && py[1] < 48.0);
        let center = cam.center();
        assert!((center[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_rotation_rejected() {
        let mut r = I3;
        r[0][0] = -1.0;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 8, 8, r, [0.0; 3], 0.1).is_err());
        r[0][0] = 1.1;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 8, 8, r, [0.0; 3], 0.1).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let cam = Camera::look_at([1.0, 2.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 32, 16, 0.05).unwrap();
        let back = Camera::<f64>::from_file(&cam.to_file()).unwrap();
        assert_eq!(cam, back);
    }
}
