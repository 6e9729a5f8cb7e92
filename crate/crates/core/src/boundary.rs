//! Boundary-response strain `∇u0(x; Z)`, the correction that makes the
//! total traction vanish on the boundary.
//!
//! The plane has none, the unit disk and the half-plane have closed-form
//! image solutions (isotropic material only), and general polygons use the
//! method of fundamental solutions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};
use thiserror::Error;

use crate::elasticity::{rot_t, strain_kernel, strain_kernel_jacobian};
use crate::types::{BoundaryCurve, Configuration, Domain, Material, Vec2};

/// Relative root-mean-square boundary residual accepted from an MFS solve.
pub const MFS_TOLERANCE: f64 = 1e-2;

/// Singular values below this fraction of the largest are discarded.
const SVD_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundaryError {
    #[error("image solutions need an isotropic unit material (mu = 1, lambda = 1); use a polygon domain instead")]
    AnisotropicImage,
    #[error("fundamental-solution method needs at least 32 charges, got {0}")]
    TooFewCharges(usize),
    #[error("fundamental-solution method needs a polygon domain")]
    NotPolygon,
    #[error("charge point {0} lies inside the domain; the boundary is not star-shaped enough for the dilation")]
    ChargeInside(usize),
    #[error("boundary condition residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
}

/// Origin of a boundary response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Zero,
    AnalyticImage,
    Mfs,
}

/// Image of a disk dislocation at `z` with modulus `b`, in a form that is
/// regular at `z = 0`: `−k(x; z/|z|²)`.
#[inline]
pub(crate) fn disk_image_strain(x: Vec2, z: Vec2, b: f64) -> Vec2 {
    let z2 = z.norm_squared();
    let p = x * z2 - z;
    let d = 1.0 - 2.0 * x.dot(&z) + x.norm_squared() * z2;
    rot_t(p) * (-b / (2.0 * PI * d))
}

/// Derivatives of [`disk_image_strain`] with respect to `x` and to `z`.
pub(crate) fn disk_image_jacobians(x: Vec2, z: Vec2, b: f64) -> (Matrix2<f64>, Matrix2<f64>) {
    let z2 = z.norm_squared();
    let x2 = x.norm_squared();
    let p = x * z2 - z;
    let d = 1.0 - 2.0 * x.dot(&z) + x2 * z2;
    let c = -b / (2.0 * PI);
    let jt = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    let jtp = rot_t(p);
    let dd_dx = z * (-2.0) + x * (2.0 * z2);
    let dd_dz = x * (-2.0) + z * (2.0 * x2);
    let dp_dz = x * z.transpose() * 2.0 - Matrix2::identity();
    let wrt_x = (jt * (z2 / d) - jtp * dd_dx.transpose() / (d * d)) * c;
    let wrt_z = (jt * dp_dz / d - jtp * dd_dz.transpose() / (d * d)) * c;
    (wrt_x, wrt_z)
}

/// Solved fundamental-solution representation `∇u0 = Σ_c q_c ∇φ_c` with
/// `φ_c(x) = ½ log|Λ(x − y_c)|²`, which solves `div(L∇φ) = 0` away from `y_c`.
#[derive(Debug, Clone)]
pub struct MfsModel {
    pub charges: Vec<Vec2>,
    pub intensities: Vec<f64>,
    pub collocation: Vec<Vec2>,
    pub normals: Vec<Vec2>,
    /// Root-mean-square boundary residual relative to the boundary data.
    pub residual: f64,
    lambda: f64,
}

impl MfsModel {
    pub fn potential(&self, x: Vec2) -> f64 {
        let l2 = self.lambda * self.lambda;
        self.charges
            .iter()
            .zip(&self.intensities)
            .map(|(y, q)| {
                let r = x - y;
                q * 0.5 * (l2 * r.x * r.x + r.y * r.y).ln()
            })
            .sum()
    }

    pub fn gradient(&self, x: Vec2) -> Vec2 {
        let l2 = self.lambda * self.lambda;
        let mut g = Vec2::zeros();
        for (y, q) in self.charges.iter().zip(&self.intensities) {
            let r = x - y;
            let s = q / (l2 * r.x * r.x + r.y * r.y);
            g.x += s * l2 * r.x;
            g.y += s * r.y;
        }
        g
    }

    pub fn hessian(&self, x: Vec2) -> Matrix2<f64> {
        let l2 = self.lambda * self.lambda;
        let mut h = Matrix2::zeros();
        for (y, q) in self.charges.iter().zip(&self.intensities) {
            let r = x - y;
            let d = l2 * r.x * r.x + r.y * r.y;
            let g = Vec2::new(l2 * r.x, r.y);
            h += (Matrix2::new(l2, 0.0, 0.0, 1.0) / d - g * g.transpose() * (2.0 / (d * d))) * *q;
        }
        h
    }
}

/// Precomputed least-squares operator of the fundamental-solution method
/// for one boundary and material. The system matrix does not depend on the
/// dislocation positions, so its pseudo-inverse is formed once.
#[derive(Debug, Clone)]
pub struct MfsBasis {
    charges: Vec<Vec2>,
    collocation: Vec<Vec2>,
    normals: Vec<Vec2>,
    row_scale: Vec<f64>,
    system: DMatrix<f64>,
    pinv: DMatrix<f64>,
    material: Material,
    rank: usize,
}

impl MfsBasis {
    /// Charges sit on a copy of the boundary dilated about its centroid by
    /// `1 + min(0.5, 8·spacing/radius)`, where `spacing` is the charge arc
    /// spacing and `radius` the mean centroid distance.
    pub fn new(curve: &BoundaryCurve, material: &Material, n_charges: usize) -> Result<Self, BoundaryError> {
        if n_charges < 32 {
            return Err(BoundaryError::TooFewCharges(n_charges));
        }
        let pts = curve.points();
        let m = pts.len();
        let c0 = curve.centroid();
        let offset = (8.0 * curve.perimeter() / n_charges as f64 / curve.mean_radius()).min(0.5);
        let charges: Vec<Vec2> = (0..n_charges)
            .map(|k| {
                let p = pts[(k * m) / n_charges];
                c0 + (p - c0) * (1.0 + offset)
            })
            .collect();
        for (k, c) in charges.iter().enumerate() {
            if curve.contains(*c) || curve.distance(*c) == 0.0 {
                return Err(BoundaryError::ChargeInside(k));
            }
        }
        let l2 = material.lambda() * material.lambda();
        let row_scale: Vec<f64> = curve.weights().iter().map(|w| w.sqrt()).collect();
        let mut system = DMatrix::zeros(m + 1, n_charges);
        for (i, (y, nrm)) in pts.iter().zip(curve.normals()).enumerate() {
            for (k, c) in charges.iter().enumerate() {
                let r = y - c;
                let d = l2 * r.x * r.x + r.y * r.y;
                let grad = Vec2::new(l2 * r.x, r.y) / d;
                system[(i, k)] = row_scale[i] * material.apply(grad).dot(nrm);
            }
        }
        let weight = system.amax();
        for k in 0..n_charges {
            system[(m, k)] = weight;
        }
        let svd = system.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|s| **s > SVD_CUTOFF * smax).count();
        let pinv = svd.pseudo_inverse(SVD_CUTOFF * smax).expect("singular vectors were requested");
        Ok(MfsBasis {
            charges,
            collocation: pts.to_vec(),
            normals: curve.normals().to_vec(),
            row_scale,
            system,
            pinv,
            material: *material,
            rank,
        })
    }

    pub fn charges(&self) -> &[Vec2] {
        &self.charges
    }

    /// Number of singular values kept by the truncation.
    pub fn rank(&self) -> usize {
        self.rank
    }

    fn rhs(&self, sources: &[(Vec2, f64)]) -> DVector<f64> {
        let m = self.collocation.len();
        let lambda = self.material.lambda();
        let mut rhs = DVector::zeros(m + 1);
        for i in 0..m {
            let y = self.collocation[i];
            let mut k = Vec2::zeros();
            for (z, b) in sources {
                k += strain_kernel(y - z, *b, lambda);
            }
            rhs[i] = -self.row_scale[i] * self.material.apply(k).dot(&self.normals[i]);
        }
        rhs
    }

    /// Charge intensities for the given sources and the resulting residual.
    pub fn solve(&self, sources: &[(Vec2, f64)]) -> MfsModel {
        let rhs = self.rhs(sources);
        let q = &self.pinv * &rhs;
        let m = self.collocation.len();
        let res = &self.system * &q - &rhs;
        let num = res.rows(0, m).norm();
        let den = rhs.rows(0, m).norm();
        let residual = if den > 0.0 { num / den } else { num };
        MfsModel {
            charges: self.charges.clone(),
            intensities: q.iter().copied().collect(),
            collocation: self.collocation.clone(),
            normals: self.normals.clone(),
            residual,
            lambda: self.material.lambda(),
        }
    }

    /// Charge intensities only, skipping the residual evaluation.
    pub fn intensities(&self, sources: &[(Vec2, f64)]) -> Vec<f64> {
        (&self.pinv * self.rhs(sources)).iter().copied().collect()
    }
}

/// Solves the fundamental-solution system for a polygon domain.
pub fn mfs_solve(domain: &Domain, config: &Configuration, material: &Material, n_charges: usize) -> Result<MfsModel, BoundaryError> {
    let Domain::Polygon { boundary, .. } = domain else {
        return Err(BoundaryError::NotPolygon);
    };
    let basis = MfsBasis::new(boundary, material, n_charges)?;
    let sources: Vec<(Vec2, f64)> = config.dislocations().iter().map(|d| (d.position, d.burgers)).collect();
    let model = basis.solve(&sources);
    if model.residual > MFS_TOLERANCE {
        return Err(BoundaryError::Residual { residual: model.residual, tolerance: MFS_TOLERANCE });
    }
    Ok(model)
}

/// Evaluator of `∇_x u0(x; Z)` for a fixed configuration.
#[derive(Debug, Clone)]
pub struct BoundaryResponse {
    provenance: Provenance,
    kind: ResponseKind,
}

#[derive(Debug, Clone)]
enum ResponseKind {
    Zero,
    Disk(Vec<(Vec2, f64)>),
    HalfPlane(Vec<(Vec2, f64)>),
    Mfs(MfsModel),
}

impl BoundaryResponse {
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn strain(&self, x: Vec2) -> Vec2 {
        match &self.kind {
            ResponseKind::Zero => Vec2::zeros(),
            ResponseKind::Disk(src) => src.iter().map(|(z, b)| disk_image_strain(x, *z, *b)).sum(),
            ResponseKind::HalfPlane(src) => src
                .iter()
                .map(|(z, b)| -strain_kernel(x - Vec2::new(z.x, -z.y), *b, 1.0))
                .sum(),
            ResponseKind::Mfs(m) => m.gradient(x),
        }
    }

    /// Derivative of [`BoundaryResponse::strain`] with respect to `x`.
    pub fn strain_jacobian(&self, x: Vec2) -> Matrix2<f64> {
        match &self.kind {
            ResponseKind::Zero => Matrix2::zeros(),
            ResponseKind::Disk(src) => src.iter().map(|(z, b)| disk_image_jacobians(x, *z, *b).0).sum(),
            ResponseKind::HalfPlane(src) => src
                .iter()
                .map(|(z, b)| -strain_kernel_jacobian(x - Vec2::new(z.x, -z.y), *b, 1.0))
                .sum(),
            ResponseKind::Mfs(m) => m.hessian(x),
        }
    }

    pub fn mfs_model(&self) -> Option<&MfsModel> {
        match &self.kind {
            ResponseKind::Mfs(m) => Some(m),
            _ => None,
        }
    }
}

/// Builds the boundary response for `config` in `domain`.
pub fn boundary_response(domain: &Domain, config: &Configuration, material: &Material) -> Result<BoundaryResponse, BoundaryError> {
    let sources: Vec<(Vec2, f64)> = config.dislocations().iter().map(|d| (d.position, d.burgers)).collect();
    let needs_unit = matches!(domain, Domain::UnitDisk | Domain::HalfPlane);
    if needs_unit && !material.is_unit() {
        return Err(BoundaryError::AnisotropicImage);
    }
    let (provenance, kind) = match domain {
        Domain::Plane => (Provenance::Zero, ResponseKind::Zero),
        Domain::UnitDisk => (Provenance::AnalyticImage, ResponseKind::Disk(sources)),
        Domain::HalfPlane => (Provenance::AnalyticImage, ResponseKind::HalfPlane(sources)),
        Domain::Polygon { n_charges, .. } => (Provenance::Mfs, ResponseKind::Mfs(mfs_solve(domain, config, material, *n_charges)?)),
    };
    Ok(BoundaryResponse { provenance, kind })
}
