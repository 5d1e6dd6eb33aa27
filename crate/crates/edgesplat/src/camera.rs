//! Pinhole camera model.
//!
//! World-to-camera transform `x_cam = R·x + t` followed by the pinhole
//! projection `u = fx·x/z + cx`, `v = fy·y/z + cy` (camera looks along +z;
//! depth is the camera-space z). Pixel `(i, j)` covers the unit square with
//! center `(i + 0.5, j + 0.5)` in continuous image coordinates.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Orthonormality tolerance for rotation matrices built in code.
pub const ROT_ORTHO_TOL: f64 = 1e-9;

/// Looser tolerance used when loading cameras from JSON, where entries are
/// quantized to 9 significant digits by the canonical float formatting.
pub const ROT_ORTHO_TOL_FILE: f64 = 1e-6;

/// Near plane in meters: splats at or behind this depth are culled.
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// World-to-camera rotation (rows are the camera axes in world frame).
    pub rot: Matrix3<f64>,
    /// World-to-camera translation.
    pub trans: Vector3<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rot: Matrix3<f64>,
        trans: Vector3<f64>,
    ) -> Result<Self> {
        Self::with_rotation_tolerance(fx, fy, cx, cy, width, height, rot, trans, ROT_ORTHO_TOL)
    }

    /// Constructor with an explicit orthonormality tolerance (file loading).
    #[allow(clippy::too_many_arguments)]
    pub fn with_rotation_tolerance(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rot: Matrix3<f64>,
        trans: Vector3<f64>,
        ortho_tol: f64,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::contract(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::contract("principal point must be finite"));
        }
        if width == 0 || height == 0 {
            return Err(Error::contract("image dimensions must be at least 1x1"));
        }
        if !trans.iter().all(|v| v.is_finite()) || !rot.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("camera extrinsics must be finite"));
        }
        let dev = (rot * rot.transpose() - Matrix3::identity()).abs().max();
        if dev > ortho_tol {
            return Err(Error::contract(format!(
                "rotation is not orthonormal: max |R Rᵀ - I| = {dev:.3e} > {ortho_tol:.0e}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height, rot, trans })
    }

    /// Camera at `pos` looking at `target`; `up` picks the image orientation.
    ///
    /// Falls back to +x as the up hint when the view direction is within ~8°
    /// of `up`.
    pub fn look_at(
        pos: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - pos)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::contract("look_at: camera position equals target"))?;
        let up_hint = if forward.dot(&up.normalize()).abs() > 0.99 {
            Vector3::x()
        } else {
            up.normalize()
        };
        let x_axis = up_hint.cross(&forward).normalize();
        let y_axis = forward.cross(&x_axis); // right-handed, unit by construction
        let rot = Matrix3::from_rows(&[x_axis.transpose(), y_axis.transpose(), forward.transpose()]);
        let trans = -rot * pos;
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height, rot, trans)
    }

    /// World point to camera space.
    pub fn to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    /// Pinhole projection of a camera-space point (caller ensures z > 0).
    pub fn project_cam(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        )
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rot.transpose() * self.trans)
    }

    /// Continuous image coordinates lie inside the image rectangle.
    pub fn in_image(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.x < self.width as f64 && uv.y >= 0.0 && uv.y < self.height as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut rot = Matrix3::identity();
        rot[(0, 1)] = 1e-6; // shear well beyond tolerance
        let err = Camera::new(100.0, 100.0, 32.0, 32.0, 64, 64, rot, Vector3::zeros());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn look_at_centers_target() {
        let pos = Vector3::new(1.0, -2.0, 0.5);
        let target = Vector3::new(0.5, 0.5, 0.5);
        let cam = Camera::look_at(pos, target, Vector3::z(), 300.0, 300.0, 256, 256).unwrap();
        let pc = cam.to_cam(&target);
        assert_abs_diff_eq!(pc.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pc.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pc.z, (target - pos).norm(), epsilon = 1e-12);
        let uv = cam.project_cam(&pc);
        assert_abs_diff_eq!(uv.x, 128.0, epsilon = 1e-9);
        assert_abs_diff_eq!(uv.y, 128.0, epsilon = 1e-9);
    }

    #[test]
    fn look_at_rotation_is_orthonormal_and_right_handed() {
        for (px, py, pz) in [(2.0, 0.1, 0.3), (-1.0, 2.0, -0.5), (0.0, 0.0, 3.0)] {
            let cam = Camera::look_at(
                Vector3::new(px, py, pz),
                Vector3::zeros(),
                Vector3::z(),
                200.0,
                200.0,
                128,
                128,
            )
            .unwrap();
            let dev = (cam.rot * cam.rot.transpose() - Matrix3::identity()).abs().max();
            assert!(dev < 1e-12);
            assert_abs_diff_eq!(cam.rot.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_is_rigid_invariant() {
        // Translating world content and the camera by the same offset leaves
        // the projection unchanged (up to roundoff).
        let cam = Camera::look_at(
            Vector3::new(2.0, 1.0, 1.5),
            Vector3::new(0.5, 0.5, 0.5),
            Vector3::z(),
            250.0,
            250.0,
            256,
            256,
        )
        .unwrap();
        let p = Vector3::new(0.4, 0.6, 0.55);
        let uv0 = cam.project_cam(&cam.to_cam(&p));

        let offset = Vector3::new(-3.0, 0.25, 7.0);
        let moved = Camera::new(
            cam.fx,
            cam.fy,
            cam.cx,
            cam.cy,
            cam.width,
            cam.height,
            cam.rot,
            cam.trans - cam.rot * offset,
        )
        .unwrap();
        let uv1 = moved.project_cam(&moved.to_cam(&(p + offset)));
        assert_abs_diff_eq!((uv0 - uv1).norm(), 0.0, epsilon = 1e-9);
    }
}
