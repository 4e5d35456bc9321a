use nalgebra::Matrix3;

use super::Camera;
use crate::error::{Error, Result};

fn check_intrinsics(cam: &Camera) -> Result<()> {
    let det = cam.k.determinant();
    if !(det.is_finite() && det.abs() > 0.0) {
        return Err(Error::Geometry("intrinsics are not invertible".into()));
    }
    Ok(())
}

/// Homography induced by the reference fronto-parallel plane at depth `d`,
/// mapping reference pixels `[u, v, 1]` to source pixels:
///
/// `H(d) = K_s R_s (I - (c_s - c_r) n_r^T / d) R_r^T K_r^{-1}`
///
/// where `n_r` is the reference principal axis and `c` are camera centers
/// (`-R^T t`). The inverse of the reference intrinsics is required here;
/// its transpose would not map pixels to rays.
pub fn homography(reference: &Camera, source: &Camera, d: f64) -> Result<Matrix3<f64>> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Geometry(format!(
            "plane depth must be positive, got {d}"
        )));
    }
    check_intrinsics(reference)?;
    check_intrinsics(source)?;
    if reference == source {
        return Ok(Matrix3::identity());
    }
    let n = reference.principal_axis();
    let baseline = source.center() - reference.center();
    let plane = Matrix3::identity() - baseline * n.transpose() / d;
    Ok(source.k * source.r * plane * reference.r.transpose() * reference.k_inv())
}

/// Limit of [`homography`] as the plane recedes to infinity.
pub fn infinite_homography(reference: &Camera, source: &Camera) -> Result<Matrix3<f64>> {
    check_intrinsics(reference)?;
    check_intrinsics(source)?;
    Ok(source.k * source.r * reference.r.transpose() * reference.k_inv())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};

    fn shared_k() -> Matrix3<f64> {
        Camera::intrinsics(100.0, 100.0, 32.0, 24.0)
    }

    #[test]
    fn same_camera_gives_identity() {
        let c = Camera::new(
            shared_k(),
            Matrix3::identity(),
            Vector3::new(0.3, 0.1, -2.0),
            (1.0, 5.0),
        )
        .unwrap();
        for d in [0.5, 3.0, 1e6] {
            assert_eq!(homography(&c, &c, d).unwrap(), Matrix3::identity());
        }
    }

    #[test]
    fn lateral_translation_shifts_by_disparity() {
        let r = Camera::new(
            shared_k(),
            Matrix3::identity(),
            Vector3::zeros(),
            (1.0, 20.0),
        )
        .unwrap();
        let s = Camera::new(
            shared_k(),
            Matrix3::identity(),
            Vector3::new(0.2, 0.0, 0.0),
            (1.0, 20.0),
        )
        .unwrap();
        let h = homography(&r, &s, 10.0).unwrap();
        for (u, v) in [(0.0, 0.0), (10.5, 3.0), (31.0, 47.0)] {
            let p = h * Vector3::new(u, v, 1.0);
            assert!((p.x / p.z - (u + 2.0)).abs() < 1e-12);
            assert!((p.y / p.z - v).abs() < 1e-12);
        }
        // cross-check against direct projection of the 3D point
        let x = r.unproject(&Vector2::new(7.0, 9.0), 10.0);
        let (q, _) = s.project(&x).unwrap();
        assert!((q.x - 9.0).abs() < 1e-12 && (q.y - 9.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_depth() {
        let c = Camera::new(
            shared_k(),
            Matrix3::identity(),
            Vector3::zeros(),
            (1.0, 5.0),
        )
        .unwrap();
        assert!(homography(&c, &c, 0.0).is_err());
        assert!(homography(&c, &c, -1.0).is_err());
    }

    #[test]
    fn rejects_singular_intrinsics() {
        let mut c = Camera::new(
            shared_k(),
            Matrix3::identity(),
            Vector3::zeros(),
            (1.0, 5.0),
        )
        .unwrap();
        let good = c.clone();
        c.k[(0, 0)] = 0.0;
        assert!(homography(&good, &c, 1.0).is_err());
    }
}
