//! Singular strain kernel, energy density, plane renormalized energy and
//! finite-difference checks of the kernel identities.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use thiserror::Error;

use crate::types::{Configuration, Material, Vec2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElasticityError {
    #[error("strain kernel evaluated at its singularity ({x:?} vs {y:?})")]
    Singular { x: [f64; 2], y: [f64; 2] },
    #[error("dislocations {0} and {1} coincide")]
    Collision(usize, usize),
    #[error("loop integral needs radius > 0 and at least 16 nodes")]
    BadLoop,
}

/// Relative distance below which the kernel refuses to evaluate.
pub const SINGULAR_TOL: f64 = 1e-14;

/// `Jᵀ(a, b) = (−b, a)`.
#[inline]
pub fn rot_t(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

/// `J(a, b) = (b, −a)`.
#[inline]
pub fn rot(v: Vec2) -> Vec2 {
    Vec2::new(v.y, -v.x)
}

/// Strain of a dislocation with modulus `b` for separation `r = x − y`,
/// without the singularity check.
#[inline]
pub fn strain_kernel(r: Vec2, b: f64, lambda: f64) -> Vec2 {
    let q = lambda * lambda * r.x * r.x + r.y * r.y;
    rot_t(r) * (b * lambda / (2.0 * PI * q))
}

/// Derivative of [`strain_kernel`] with respect to `r`.
pub fn strain_kernel_jacobian(r: Vec2, b: f64, lambda: f64) -> Matrix2<f64> {
    let l2 = lambda * lambda;
    let q = l2 * r.x * r.x + r.y * r.y;
    let c = b * lambda / (2.0 * PI);
    let jt = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    let grad_q = Vec2::new(2.0 * l2 * r.x, 2.0 * r.y);
    (jt / q - rot_t(r) * grad_q.transpose() / (q * q)) * c
}

/// Singular strain at `x` of a dislocation at `y` with modulus `b`.
pub fn singular_strain(x: Vec2, y: Vec2, b: f64, lambda: f64) -> Result<Vec2, ElasticityError> {
    let r = x - y;
    let scale = 1f64.max(x.norm()).max(y.norm());
    if r.norm() < SINGULAR_TOL * scale {
        return Err(ElasticityError::Singular { x: [x.x, x.y], y: [y.x, y.y] });
    }
    Ok(strain_kernel(r, b, lambda))
}

/// Stored energy density `½ h·Lh`.
pub fn energy_density(h: Vec2, material: &Material) -> f64 {
    0.5 * h.dot(&material.apply(h))
}

/// Circulation of `strain` around the counterclockwise circle, by the
/// periodic trapezoid rule.
pub fn burgers_loop_integral<F, E>(strain: F, center: Vec2, radius: f64, n_quad: usize) -> Result<f64, E>
where
    F: Fn(Vec2) -> Result<Vec2, E>,
    E: From<ElasticityError>,
{
    if !(radius > 0.0) || n_quad < 16 {
        return Err(ElasticityError::BadLoop.into());
    }
    let dth = 2.0 * PI / n_quad as f64;
    let mut sum = 0.0;
    for k in 0..n_quad {
        let th = k as f64 * dth;
        let (s, c) = th.sin_cos();
        let h = strain(center + Vec2::new(c, s) * radius)?;
        sum += h.dot(&Vec2::new(-s, c));
    }
    Ok(sum * radius * dth)
}

/// Renormalized interaction energy in the plane,
/// `U = −(μλ/2π) Σ_{i<j} b_i b_j log|Λ(z_i − z_j)|`.
///
/// The prefactor `μλ` makes `−∇U` equal the force for every material; it is
/// one for the isotropic unit material.
pub fn renormalized_energy_plane(config: &Configuration, material: &Material) -> Result<f64, ElasticityError> {
    let n = config.len();
    let lambda = material.lambda();
    let mut u = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r = config.position(i) - config.position(j);
            let q = lambda * lambda * r.x * r.x + r.y * r.y;
            if q == 0.0 {
                return Err(ElasticityError::Collision(i, j));
            }
            u -= config.burgers(i) * config.burgers(j) * 0.5 * q.ln();
        }
    }
    Ok(u * material.mu() * lambda / (2.0 * PI))
}

/// Finite-difference residuals of the two kernel identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelResiduals {
    /// `max_i |div_y(L ∇_y k_i)|`.
    pub div_grad: f64,
    /// `|div_x(L k)|`.
    pub div: f64,
}

/// Central-difference check of `div_y(L∇_y k) = 0` and `div_x(L k) = 0`
/// with step `h`. The material is `mu = 1`; `mu` only scales both sides.
pub fn kernel_identity_checks(b: f64, lambda: f64, x: Vec2, y: Vec2, h: f64) -> KernelResiduals {
    let l2 = lambda * lambda;
    let k = |x: Vec2, y: Vec2| strain_kernel(x - y, b, lambda);
    let ex = Vec2::new(h, 0.0);
    let ey = Vec2::new(0.0, h);
    let k0 = k(x, y);
    let d11 = (k(x, y + ex) - k0 * 2.0 + k(x, y - ex)) / (h * h);
    let d22 = (k(x, y + ey) - k0 * 2.0 + k(x, y - ey)) / (h * h);
    let lap = d11 + d22 * l2;
    let dx = (k(x + ex, y) - k(x - ex, y)) / (2.0 * h);
    let dy = (k(x + ey, y) - k(x - ey, y)) / (2.0 * h);
    let div = dx.x + l2 * dy.y;
    KernelResiduals { div_grad: lap.x.abs().max(lap.y.abs()), div: div.abs() }
}
