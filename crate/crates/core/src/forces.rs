//! Peach-Köhler forces `j_ℓ = b_ℓ J L [Σ_{i≠ℓ} k_i(z_ℓ; z_i) + ∇u0(z_ℓ; Z)]`
//! and their derivatives with respect to the positions.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2};
use thiserror::Error;

use crate::boundary::{disk_image_jacobians, disk_image_strain, BoundaryError, MfsBasis};
use crate::elasticity::{renormalized_energy_plane, rot, strain_kernel, strain_kernel_jacobian, ElasticityError, SINGULAR_TOL};
use crate::types::{Configuration, Domain, Material, Vec2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForceError {
    #[error("dislocations {0} and {1} coincide")]
    Collision(usize, usize),
    #[error("dislocation {0} is not inside the domain")]
    OutsideDomain(usize),
    #[error("dislocation index {0} out of range")]
    Index(usize),
    #[error("state vector has length {got}, expected {expected}")]
    StateLength { got: usize, expected: usize },
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Elasticity(#[from] ElasticityError),
}

/// Relative step of the finite-difference Jacobian.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
enum Response {
    Zero,
    Disk,
    HalfPlane,
    Mfs(Arc<MfsBasis>),
}

/// Force evaluator for a fixed domain, material and list of moduli.
/// Positions are passed as flat state vectors.
#[derive(Debug, Clone)]
pub struct ForceEngine {
    domain: Domain,
    material: Material,
    burgers: Vec<f64>,
    response: Response,
}

impl ForceEngine {
    pub fn new(domain: &Domain, material: &Material, burgers: Vec<f64>) -> Result<Self, ForceError> {
        let response = match domain {
            Domain::Plane => Response::Zero,
            Domain::UnitDisk | Domain::HalfPlane if !material.is_unit() => return Err(BoundaryError::AnisotropicImage.into()),
            Domain::UnitDisk => Response::Disk,
            Domain::HalfPlane => Response::HalfPlane,
            Domain::Polygon { boundary, n_charges } => Response::Mfs(Arc::new(MfsBasis::new(boundary, material, *n_charges)?)),
        };
        Ok(ForceEngine { domain: domain.clone(), material: *material, burgers, response })
    }

    pub fn for_config(domain: &Domain, config: &Configuration, material: &Material) -> Result<Self, ForceError> {
        ForceEngine::new(domain, material, config.burgers_all())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn burgers(&self) -> &[f64] {
        &self.burgers
    }

    pub fn len(&self) -> usize {
        self.burgers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.burgers.is_empty()
    }

    /// Whether Jacobians are computed in closed form.
    pub fn has_analytic_jacobian(&self) -> bool {
        !matches!(self.response, Response::Mfs(_))
    }

    fn positions(&self, z: &[f64]) -> Result<Vec<Vec2>, ForceError> {
        if z.len() != 2 * self.len() {
            return Err(ForceError::StateLength { got: z.len(), expected: 2 * self.len() });
        }
        Ok(z.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect())
    }

    /// Rejects states with a dislocation outside the open domain or two
    /// dislocations at the same point.
    pub fn check_state(&self, z: &[f64]) -> Result<(), ForceError> {
        let p = self.positions(z)?;
        for (i, a) in p.iter().enumerate() {
            if !self.domain.contains(*a) {
                return Err(ForceError::OutsideDomain(i));
            }
            for (k, b) in p.iter().enumerate().skip(i + 1) {
                let scale = 1f64.max(a.norm()).max(b.norm());
                if (a - b).norm() < SINGULAR_TOL * scale {
                    return Err(ForceError::Collision(i, k));
                }
            }
        }
        Ok(())
    }

    /// Typical force magnitude `b²/(2π d)` where `d` is the smallest pair or
    /// boundary distance (one if neither exists).
    pub fn force_scale(&self, z: &[f64]) -> f64 {
        let Ok(p) = self.positions(z) else { return 1.0 };
        let mut d = f64::INFINITY;
        for (i, a) in p.iter().enumerate() {
            d = d.min(self.domain.boundary_distance(*a));
            for b in &p[i + 1..] {
                d = d.min((a - b).norm());
            }
        }
        if !d.is_finite() || d <= 0.0 {
            d = 1.0;
        }
        let bmax = self.burgers.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        bmax * bmax / (2.0 * PI * d)
    }

    fn mfs_intensities(&self, basis: &MfsBasis, p: &[Vec2]) -> Vec<f64> {
        let src: Vec<(Vec2, f64)> = p.iter().copied().zip(self.burgers.iter().copied()).collect();
        basis.intensities(&src)
    }

    /// Strain felt by dislocation `l`: other singular strains plus the
    /// boundary response.
    fn strain_at(&self, p: &[Vec2], l: usize, charges: Option<&[f64]>) -> Vec2 {
        let lambda = self.material.lambda();
        let x = p[l];
        let mut h = Vec2::zeros();
        for (i, z) in p.iter().enumerate() {
            if i != l {
                h += strain_kernel(x - z, self.burgers[i], lambda);
            }
        }
        match &self.response {
            Response::Zero => {}
            Response::Disk => {
                for (z, b) in p.iter().zip(&self.burgers) {
                    h += disk_image_strain(x, *z, *b);
                }
            }
            Response::HalfPlane => {
                for (z, b) in p.iter().zip(&self.burgers) {
                    h -= strain_kernel(x - Vec2::new(z.x, -z.y), *b, 1.0);
                }
            }
            Response::Mfs(basis) => {
                let l2 = lambda * lambda;
                for (y, q) in basis.charges().iter().zip(charges.expect("charges computed")) {
                    let r = x - y;
                    let s = q / (l2 * r.x * r.x + r.y * r.y);
                    h += Vec2::new(s * l2 * r.x, s * r.y);
                }
            }
        }
        h
    }

    fn to_force(&self, l: usize, h: Vec2) -> Vec2 {
        rot(self.material.apply(h)) * self.burgers[l]
    }

    /// All forces, sharing one boundary solve.
    pub fn forces(&self, z: &[f64]) -> Result<Vec<Vec2>, ForceError> {
        self.check_state(z)?;
        let p = self.positions(z)?;
        let charges = match &self.response {
            Response::Mfs(b) => Some(self.mfs_intensities(b, &p)),
            _ => None,
        };
        Ok((0..p.len()).map(|l| self.to_force(l, self.strain_at(&p, l, charges.as_deref()))).collect())
    }

    /// Force on dislocation `l`.
    pub fn force(&self, z: &[f64], l: usize) -> Result<Vec2, ForceError> {
        if l >= self.len() {
            return Err(ForceError::Index(l));
        }
        self.check_state(z)?;
        let p = self.positions(z)?;
        let charges = match &self.response {
            Response::Mfs(b) => Some(self.mfs_intensities(b, &p)),
            _ => None,
        };
        Ok(self.to_force(l, self.strain_at(&p, l, charges.as_deref())))
    }

    /// `∂j_l/∂z_i` as 2×2 blocks, one per dislocation. Closed form except
    /// for polygon domains, which fall back to central differences.
    pub fn jacobian(&self, z: &[f64], l: usize) -> Result<Vec<Matrix2<f64>>, ForceError> {
        if l >= self.len() {
            return Err(ForceError::Index(l));
        }
        if let Response::Mfs(_) = self.response {
            let h = FD_STEP * self.length_scale(z);
            return self.jacobian_fd(z, l, h);
        }
        self.check_state(z)?;
        let p = self.positions(z)?;
        let lambda = self.material.lambda();
        let x = p[l];
        let mut blocks = vec![Matrix2::zeros(); p.len()];
        for (i, zi) in p.iter().enumerate() {
            if i != l {
                let k = strain_kernel_jacobian(x - zi, self.burgers[i], lambda);
                blocks[l] += k;
                blocks[i] -= k;
            }
            match self.response {
                Response::Disk => {
                    let (jx, jz) = disk_image_jacobians(x, *zi, self.burgers[i]);
                    blocks[l] += jx;
                    blocks[i] += jz;
                }
                Response::HalfPlane => {
                    let k = strain_kernel_jacobian(x - Vec2::new(zi.x, -zi.y), self.burgers[i], 1.0);
                    blocks[l] -= k;
                    blocks[i] += k * Matrix2::new(1.0, 0.0, 0.0, -1.0);
                }
                _ => {}
            }
        }
        let jl = Matrix2::new(0.0, 1.0, -1.0, 0.0) * self.material.tensor() * self.burgers[l];
        Ok(blocks.into_iter().map(|b| jl * b).collect())
    }

    /// Central-difference Jacobian blocks of `j_l` with step `h`.
    pub fn jacobian_fd(&self, z: &[f64], l: usize, h: f64) -> Result<Vec<Matrix2<f64>>, ForceError> {
        if l >= self.len() {
            return Err(ForceError::Index(l));
        }
        let mut blocks = vec![Matrix2::zeros(); self.len()];
        let mut w = z.to_vec();
        for c in 0..z.len() {
            w[c] = z[c] + h;
            let fp = self.force(&w, l)?;
            w[c] = z[c] - h;
            let fm = self.force(&w, l)?;
            w[c] = z[c];
            let d = (fp - fm) / (2.0 * h);
            blocks[c / 2][(0, c % 2)] = d.x;
            blocks[c / 2][(1, c % 2)] = d.y;
        }
        Ok(blocks)
    }

    /// `max(1, diameter)` of the point set.
    pub fn length_scale(&self, z: &[f64]) -> f64 {
        let mut d: f64 = 1.0;
        for i in 0..z.len() / 2 {
            for k in i + 1..z.len() / 2 {
                d = d.max(((z[2 * i] - z[2 * k]).powi(2) + (z[2 * i + 1] - z[2 * k + 1]).powi(2)).sqrt());
            }
        }
        d
    }
}

/// Blocks of a Jacobian as a dense `2 × 2N` matrix.
pub fn blocks_to_matrix(blocks: &[Matrix2<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2, 2 * blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        for r in 0..2 {
            for c in 0..2 {
                m[(r, 2 * i + c)] = b[(r, c)];
            }
        }
    }
    m
}

/// Force on dislocation `l`.
pub fn peach_kohler(domain: &Domain, config: &Configuration, material: &Material, l: usize) -> Result<Vec2, ForceError> {
    ForceEngine::for_config(domain, config, material)?.force(&config.state(), l)
}

/// Forces on all dislocations.
pub fn force_all(domain: &Domain, config: &Configuration, material: &Material) -> Result<Vec<Vec2>, ForceError> {
    ForceEngine::for_config(domain, config, material)?.forces(&config.state())
}

/// Central-difference Jacobian of `j_l` as a `2 × 2N` matrix.
pub fn force_jacobian_fd(domain: &Domain, config: &Configuration, material: &Material, l: usize, h: f64) -> Result<DMatrix<f64>, ForceError> {
    let e = ForceEngine::for_config(domain, config, material)?;
    Ok(blocks_to_matrix(&e.jacobian_fd(&config.state(), l, h)?))
}

/// Largest force discrepancy between `domain` and the plane with mirror
/// dislocations of opposite moduli, relative to the largest force.
pub fn mirror_check(config: &Configuration, material: &Material, domain: &Domain) -> Result<f64, ForceError> {
    let direct = force_all(domain, config, material)?;
    let mut mirrored = config.dislocations().to_vec();
    for d in config.dislocations() {
        let p = d.position;
        let image = match domain {
            Domain::UnitDisk if p.norm_squared() == 0.0 => continue,
            Domain::UnitDisk => p / p.norm_squared(),
            Domain::HalfPlane => Vec2::new(p.x, -p.y),
            _ => return Err(BoundaryError::NotPolygon.into()),
        };
        mirrored.push(crate::types::Dislocation { position: image, burgers: -d.burgers });
    }
    let mc = Configuration::new(mirrored).expect("mirror moduli are nonzero");
    let e = ForceEngine::for_config(&Domain::Plane, &mc, material)?;
    let p = mc.positions();
    let plane: Vec<Vec2> = (0..config.len()).map(|l| e.to_force(l, e.strain_at(&p, l, None))).collect();
    let scale = direct.iter().fold(0.0f64, |m, j| m.max(j.norm()));
    let diff = direct.iter().zip(&plane).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Largest relative mismatch `|j_l + ∇_{z_l}U| / |j_l|` between the plane
/// forces and central differences of the renormalized energy.
pub fn energy_gradient_check_plane(config: &Configuration, material: &Material, h: f64) -> Result<f64, ForceError> {
    let forces = force_all(&Domain::Plane, config, material)?;
    let z = config.state();
    let mut worst: f64 = 0.0;
    for (l, j) in forces.iter().enumerate() {
        let mut grad = Vec2::zeros();
        for c in 0..2 {
            let mut w = z.clone();
            w[2 * l + c] += h;
            let up = renormalized_energy_plane(&config.with_state(&w).expect("same length"), material)?;
            w[2 * l + c] -= 2.0 * h;
            let dn = renormalized_energy_plane(&config.with_state(&w).expect("same length"), material)?;
            grad[c] = (up - dn) / (2.0 * h);
        }
        let r = (j + grad).norm();
        worst = worst.max(if j.norm() > 0.0 { r / j.norm() } else { r });
    }
    Ok(worst)
}
