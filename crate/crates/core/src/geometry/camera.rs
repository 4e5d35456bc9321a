use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with world-to-camera extrinsics `x_cam = R x_world + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    /// Intrinsics `[fx 0 cx; 0 fy cy; 0 0 1]`.
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    /// `(d_min, d_max)` in scene units.
    pub depth_range: (f64, f64),
}

impl Camera {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        depth_range: (f64, f64),
    ) -> Result<Self> {
        let cam = Self {
            k,
            r,
            t,
            depth_range,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn intrinsics(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
    }

    /// Camera at `eye` looking at `target`; image y points along `-up`.
    pub fn look_at(
        k: Matrix3<f64>,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        depth_range: (f64, f64),
    ) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Geometry("eye and target coincide".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Geometry("up vector parallel to viewing direction".into()))?;
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        Self::new(k, r, t, depth_range)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.k;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::Geometry("focal lengths must be positive".into()));
        }
        if k[(0, 1)] != 0.0
            || k[(1, 0)] != 0.0
            || k[(2, 0)] != 0.0
            || k[(2, 1)] != 0.0
            || k[(2, 2)] != 1.0
        {
            return Err(Error::Geometry(
                "intrinsics must be [fx 0 cx; 0 fy cy; 0 0 1]".into(),
            ));
        }
        let orth = (self.r.transpose() * self.r - Matrix3::identity())
            .abs()
            .max();
        if orth > 1e-9 || (self.r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Geometry(
                "rotation is not orthonormal with det +1".into(),
            ));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Geometry(format!(
                "depth range ({lo}, {hi}) must satisfy 0 < d_min < d_max"
            )));
        }
        if !self.t.iter().chain(self.k.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("camera parameters".into()));
        }
        Ok(())
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }

    /// Closed-form inverse of the zero-skew intrinsics.
    pub fn k_inv(&self) -> Matrix3<f64> {
        let (fx, fy, cx, cy) = (self.fx(), self.fy(), self.cx(), self.cy());
        Matrix3::new(
            1.0 / fx,
            0.0,
            -cx / fx,
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera center `-R^T t` in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// Unit principal axis in world coordinates (third row of `R`).
    pub fn principal_axis(&self) -> Vector3<f64> {
        self.r.row(2).transpose()
    }

    /// Same pose with intrinsics for an image resampled by `factor`
    /// (`0.25` for quarter-resolution feature maps). Pixel `(i, j)` keeps
    /// coordinate `(i, j)`: no half-pixel shift is applied.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut k = self.k;
        k[(0, 0)] *= factor;
        k[(1, 1)] *= factor;
        k[(0, 2)] *= factor;
        k[(1, 2)] *= factor;
        Self { k, ..self.clone() }
    }

    pub fn world_to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }

    /// Pixel coordinates and camera-frame depth of a world point. Points at
    /// or behind the camera plane are rejected.
    pub fn project(&self, x: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let pc = self.world_to_camera(x);
        let depth = pc.z;
        if !(depth > 0.0) {
            return Err(Error::Geometry(format!(
                "point has non-positive depth {depth} in camera frame"
            )));
        }
        let u = self.fx() * pc.x / depth + self.cx();
        let v = self.fy() * pc.y / depth + self.cy();
        Ok((Vector2::new(u, v), depth))
    }

    /// World point at camera-frame depth `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let pc = Vector3::new(
            (pixel.x - self.cx()) / self.fx() * depth,
            (pixel.y - self.cy()) / self.fy() * depth,
            depth,
        );
        self.r.transpose() * (pc - self.t)
    }

    /// World-space ray direction through `pixel`, scaled so that its
    /// camera-frame z component is exactly one.
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let pc = Vector3::new(
            (pixel.x - self.cx()) / self.fx(),
            (pixel.y - self.cy()) / self.fy(),
            1.0,
        );
        self.r.transpose() * pc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::new(
            Camera::intrinsics(100.0, 120.0, 32.0, 24.0),
            Matrix3::identity(),
            Vector3::zeros(),
            (1.0, 10.0),
        )
        .unwrap()
    }

    #[test]
    fn principal_axis_point_projects_to_principal_point() {
        let (p, d) = cam().project(&Vector3::new(0.0, 0.0, 7.0)).unwrap();
        assert_eq!((p.x, p.y, d), (32.0, 24.0, 7.0));
    }

    #[test]
    fn unproject_principal_point() {
        let x = cam().unproject(&Vector2::new(32.0, 24.0), 5.0);
        assert_eq!(x, Vector3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn camera_center_is_rejected() {
        assert!(cam().project(&Vector3::zeros()).is_err());
        assert!(cam().project(&Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn invalid_cameras_are_rejected() {
        let k = Camera::intrinsics(100.0, 100.0, 0.0, 0.0);
        assert!(Camera::new(k, Matrix3::identity() * 2.0, Vector3::zeros(), (1.0, 2.0)).is_err());
        assert!(Camera::new(k, Matrix3::identity(), Vector3::zeros(), (2.0, 1.0)).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Camera::new(k, reflect, Vector3::zeros(), (1.0, 2.0)).is_err());
    }

    #[test]
    fn unproject_is_linear_in_depth() {
        let c = Camera::look_at(
            Camera::intrinsics(80.0, 80.0, 16.0, 12.0),
            Vector3::new(1.0, -2.0, 3.0),
            Vector3::new(0.0, 0.5, 0.0),
            Vector3::z(),
            (0.5, 20.0),
        )
        .unwrap();
        let p = Vector2::new(3.25, 17.5);
        let a = c.unproject(&p, 2.0) - c.center();
        let b = c.unproject(&p, 6.0) - c.center();
        assert!((b - a * 3.0).norm() < 1e-12);
    }
}
