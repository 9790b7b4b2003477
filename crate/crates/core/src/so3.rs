//! Rotation-group helpers used by the rod model.
//!
//! Everything here operates on plain `nalgebra` 3-vectors and 3×3 matrices.
//! Material frames are stored as rotation matrices whose columns are the
//! directors `d1, d2, d3`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Symmetric-part tolerance accepted by [`vee`].
pub const SKEW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum So3Error {
    #[error("matrix is not skew-symmetric (symmetric part norm {0:.3e})")]
    NotSkew(f64),
    #[error("matrix is rank deficient and cannot be projected onto SO(3)")]
    Degenerate,
}

/// Unit vector along the shared `d3` axis.
#[inline]
pub fn e3() -> Vec3 {
    Vec3::z()
}

/// Skew-symmetric matrix with `hat(v) * w == v.cross(&w)`.
#[inline]
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`].
pub fn vee(s: &Mat3) -> Result<Vec3, So3Error> {
    let sym = (s + s.transpose()) * 0.5;
    let sym_norm = sym.norm();
    if sym_norm > SKEW_TOLERANCE {
        return Err(So3Error::NotSkew(sym_norm));
    }
    Ok(Vec3::new(
        0.5 * (s[(2, 1)] - s[(1, 2)]),
        0.5 * (s[(0, 2)] - s[(2, 0)]),
        0.5 * (s[(1, 0)] - s[(0, 1)]),
    ))
}

/// Rotation about `d3` by `theta` radians.
#[inline]
pub fn rot_d3(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Derivative of `rot_d3(theta)^T` with respect to `theta`, equal to
/// `hat(e3)^T * rot_d3(theta)^T`.
#[inline]
pub fn rot_d3_transpose_derivative(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(-s, c, 0.0, -c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// `diag(0, 0, 1)`: picks the `d3` component of a vector.
#[inline]
pub fn d3_selector() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(0.0, 0.0, 1.0))
}

/// Projects a near-rotation onto SO(3) using the polar decomposition
/// `R (RᵀR)^{-1/2}`.
///
/// The symmetric inverse square root is evaluated from the eigen
/// decomposition of `RᵀR`, which is symmetric positive definite whenever `R`
/// has full rank.
pub fn reorthonormalize(r: &Mat3) -> Result<Mat3, So3Error> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(So3Error::Degenerate);
    }
    let scale = r.norm();
    if scale == 0.0 {
        return Err(So3Error::Degenerate);
    }
    let gram = r.transpose() * r;
    let eig = gram.symmetric_eigen();
    let max_eig = eig.eigenvalues.max();
    if eig.eigenvalues.min() <= max_eig * 1e-20 {
        return Err(So3Error::Degenerate);
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let gram_inv_sqrt =
        eig.eigenvectors * Mat3::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let q = r * gram_inv_sqrt;
    if q.determinant() <= 0.0 {
        return Err(So3Error::Degenerate);
    }
    Ok(q)
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthonormality_defect(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}
