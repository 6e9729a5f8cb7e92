//! The set-valued velocity law: glide selection by maximal dissipation,
//! admissible velocity sets and their product hull, and the event function
//! of the surface where two glide directions tie.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forces::{ForceEngine, ForceError};
use crate::types::{cross, Configuration, Domain, GlideSet, Material, Vec2};

/// Default tie tolerance, relative to `|j|`.
pub const TOL_AMB: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InclusionError {
    #[error("{count} glide directions tie for maximal dissipation")]
    Degenerate { count: usize },
    #[error("tie surface of dislocation {index} is singular here (normal magnitude {magnitude:e} below {threshold:e})")]
    Singular { index: usize, magnitude: f64, threshold: f64 },
    #[error("kinetics tables have {got} entries, expected one per glide direction ({expected})")]
    KineticsLength { got: usize, expected: usize },
    #[error("kinetics parameters must be finite with positive exponent and mobilities and nonnegative thresholds")]
    KineticsValue,
    #[error(transparent)]
    Force(#[from] ForceError),
}

/// Outcome of the maximal-dissipation rule for one dislocation. Directions
/// are indices into the glide set; an ambiguous pair is ordered so that the
/// first lies clockwise of `j` and the second counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlideSelection {
    Zero,
    Unique(usize),
    Ambiguous(usize, usize),
}

/// Picks the glide directions maximizing `j·g`.
pub fn select_glide(j: Vec2, glide: &GlideSet, tol_amb: f64, eps_zero: f64) -> Result<GlideSelection, InclusionError> {
    let norm = j.norm();
    if norm < eps_zero || norm == 0.0 {
        return Ok(GlideSelection::Zero);
    }
    let proj: Vec<f64> = glide.directions().iter().map(|g| j.dot(g)).collect();
    let best = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..proj.len()).filter(|&i| best - proj[i] <= tol_amb * norm).collect();
    match tied[..] {
        [i] => Ok(GlideSelection::Unique(i)),
        [a, b] => {
            if cross(j, glide.get(a)) <= cross(j, glide.get(b)) {
                Ok(GlideSelection::Ambiguous(a, b))
            } else {
                Ok(GlideSelection::Ambiguous(b, a))
            }
        }
        _ => Err(InclusionError::Degenerate { count: tied.len() }),
    }
}

/// Speed law `M(g)[max{j·g − P(g), 0}]^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kinetics {
    exponent: f64,
    mobility: Vec<f64>,
    threshold: Vec<f64>,
}

impl Kinetics {
    /// `p = 1`, `M ≡ 1`, `P ≡ 0`: velocity `(j·g) g`.
    pub fn linear(n_directions: usize) -> Self {
        Kinetics { exponent: 1.0, mobility: vec![1.0; n_directions], threshold: vec![0.0; n_directions] }
    }

    pub fn new(exponent: f64, mobility: Vec<f64>, threshold: Vec<f64>, glide: &GlideSet) -> Result<Self, InclusionError> {
        for t in [&mobility, &threshold] {
            if t.len() != glide.len() {
                return Err(InclusionError::KineticsLength { got: t.len(), expected: glide.len() });
            }
        }
        let ok = exponent.is_finite()
            && exponent > 0.0
            && mobility.iter().all(|m| m.is_finite() && *m > 0.0)
            && threshold.iter().all(|p| p.is_finite() && *p >= 0.0);
        if !ok {
            return Err(InclusionError::KineticsValue);
        }
        Ok(Kinetics { exponent, mobility, threshold })
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn mobility(&self) -> &[f64] {
        &self.mobility
    }

    pub fn threshold(&self) -> &[f64] {
        &self.threshold
    }

    pub fn len(&self) -> usize {
        self.mobility.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mobility.is_empty()
    }

    pub fn is_linear(&self) -> bool {
        self.exponent == 1.0 && self.mobility.iter().all(|m| *m == 1.0) && self.threshold.iter().all(|p| *p == 0.0)
    }

    /// Speed along direction `g` (index `gi`) under force `j`.
    pub fn speed(&self, j: Vec2, g: Vec2, gi: usize) -> f64 {
        let excess = (j.dot(&g) - self.threshold[gi]).max(0.0);
        if self.exponent == 1.0 {
            self.mobility[gi] * excess
        } else {
            self.mobility[gi] * excess.powf(self.exponent)
        }
    }

    pub fn velocity(&self, j: Vec2, glide: &GlideSet, gi: usize) -> Vec2 {
        let g = glide.get(gi);
        g * self.speed(j, g, gi)
    }
}

/// Admissible velocities of one dislocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VelocitySet {
    Point(Vec2),
    Segment(Vec2, Vec2),
}

impl VelocitySet {
    /// Distance from `v` to the set.
    pub fn distance(&self, v: Vec2) -> f64 {
        match *self {
            VelocitySet::Point(p) => (v - p).norm(),
            VelocitySet::Segment(a, b) => {
                let d = b - a;
                let len2 = d.norm_squared();
                if len2 == 0.0 {
                    return (v - a).norm();
                }
                let s = ((v - a).dot(&d) / len2).clamp(0.0, 1.0);
                (v - (a + d * s)).norm()
            }
        }
    }

    pub fn endpoints(&self) -> (Vec2, Vec2) {
        match *self {
            VelocitySet::Point(p) => (p, p),
            VelocitySet::Segment(a, b) => (a, b),
        }
    }
}

/// Velocity set for the linear law `(j·g) g`.
pub fn velocity_set(j: Vec2, selection: GlideSelection, glide: &GlideSet) -> VelocitySet {
    velocity_set_with(j, selection, glide, &Kinetics::linear(glide.len()))
}

/// Velocity set for a general speed law.
pub fn velocity_set_with(j: Vec2, selection: GlideSelection, glide: &GlideSet, kinetics: &Kinetics) -> VelocitySet {
    match selection {
        GlideSelection::Zero => VelocitySet::Point(Vec2::zeros()),
        GlideSelection::Unique(i) => VelocitySet::Point(kinetics.velocity(j, glide, i)),
        GlideSelection::Ambiguous(a, b) => VelocitySet::Segment(kinetics.velocity(j, glide, a), kinetics.velocity(j, glide, b)),
    }
}

/// Convex hull of the product of the per-dislocation velocity sets, which
/// equals the product of the hulls, so membership is tested componentwise.
#[derive(Debug, Clone, PartialEq)]
pub struct HullProduct {
    components: Vec<VelocitySet>,
}

/// Build the product descriptor.
pub fn hull_product(components: Vec<VelocitySet>) -> HullProduct {
    HullProduct { components }
}

impl HullProduct {
    pub fn components(&self) -> &[VelocitySet] {
        &self.components
    }

    /// Membership with tolerance `1e-12·max(1, largest endpoint)`.
    pub fn contains(&self, v: &[f64]) -> bool {
        let scale = self
            .components
            .iter()
            .map(|c| {
                let (a, b) = c.endpoints();
                a.norm().max(b.norm())
            })
            .fold(1.0, f64::max);
        self.contains_within(v, 1e-12 * scale)
    }

    /// Membership where each component may be off by at most `tol`.
    pub fn contains_within(&self, v: &[f64], tol: f64) -> bool {
        v.len() == 2 * self.components.len()
            && self.components.iter().enumerate().all(|(i, c)| c.distance(Vec2::new(v[2 * i], v[2 * i + 1])) <= tol)
    }

    /// Largest componentwise distance from `v` to the product set.
    pub fn distance(&self, v: &[f64]) -> f64 {
        self.components
            .iter()
            .enumerate()
            .map(|(i, c)| c.distance(Vec2::new(v[2 * i], v[2 * i + 1])))
            .fold(0.0, f64::max)
    }

    /// The `2^N` vertices of the product, in binary order of endpoint choice.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.components.len();
        (0..1usize << n)
            .map(|mask| {
                self.components
                    .iter()
                    .enumerate()
                    .flat_map(|(i, c)| {
                        let (a, b) = c.endpoints();
                        let p = if mask >> i & 1 == 1 { b } else { a };
                        [p.x, p.y]
                    })
                    .collect()
            })
            .collect()
    }
}

/// Event function `j_l·(g⁺ − g⁻)`, zero on the tie surface.
pub fn ambiguity_event_value(domain: &Domain, config: &Configuration, material: &Material, l: usize, g_minus: Vec2, g_plus: Vec2) -> Result<f64, InclusionError> {
    let j = crate::forces::peach_kohler(domain, config, material, l)?;
    Ok(j.dot(&(g_plus - g_minus)))
}

/// Unit normal of a tie surface in the flat state space.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityNormal {
    pub normal: Vec<f64>,
    pub magnitude: f64,
}

/// Gradient of `j_l·g0` with respect to the flat state.
pub fn event_gradient(engine: &ForceEngine, z: &[f64], l: usize, g0: Vec2) -> Result<Vec<f64>, ForceError> {
    let blocks = engine.jacobian(z, l)?;
    Ok(gradient_from_blocks(&blocks, g0))
}

pub(crate) fn gradient_from_blocks(blocks: &[Matrix2<f64>], g0: Vec2) -> Vec<f64> {
    blocks.iter().flat_map(|b| {
        let row = g0.transpose() * b;
        [row[(0, 0)], row[(0, 1)]]
    }).collect()
}

/// Threshold below which a tie-surface gradient counts as vanishing:
/// relative to the size of the terms that sum to it, so that a large but
/// irrelevant self-interaction does not mask a healthy normal.
pub fn singular_threshold(blocks: &[Matrix2<f64>], g0: Vec2) -> f64 {
    let sq: f64 = blocks
        .iter()
        .flat_map(|b| (0..2).map(move |c| (b[(0, c)] * g0.x).abs() + (b[(1, c)] * g0.y).abs()))
        .map(|x| x * x)
        .sum();
    1e-10 * sq.sqrt()
}

/// Normal of the tie surface of dislocation `l` for `g0 = g⁺ − g⁻`.
pub fn ambiguity_normal_at(engine: &ForceEngine, z: &[f64], l: usize, g0: Vec2) -> Result<AmbiguityNormal, InclusionError> {
    let blocks = engine.jacobian(z, l)?;
    let grad = gradient_from_blocks(&blocks, g0);
    let magnitude = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = singular_threshold(&blocks, g0);
    if magnitude < threshold || magnitude == 0.0 {
        return Err(InclusionError::Singular { index: l, magnitude, threshold });
    }
    Ok(AmbiguityNormal { normal: grad.iter().map(|x| x / magnitude).collect(), magnitude })
}

/// Normal of the tie surface of dislocation `l` for `g0 = g⁺ − g⁻`.
pub fn ambiguity_normal(domain: &Domain, config: &Configuration, material: &Material, l: usize, g0: Vec2) -> Result<AmbiguityNormal, InclusionError> {
    let engine = ForceEngine::for_config(domain, config, material)?;
    ambiguity_normal_at(&engine, &config.state(), l, g0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn selection_examples() {
        let g = GlideSet::axes();
        assert_eq!(select_glide(v(1.0, 0.0), &g, TOL_AMB, 1e-12).unwrap(), GlideSelection::Unique(0));
        let s = select_glide(v(FRAC_1_SQRT_2, FRAC_1_SQRT_2), &g, TOL_AMB, 1e-12).unwrap();
        assert_eq!(s, GlideSelection::Ambiguous(0, 1));
        assert_eq!(select_glide(v(0.0, 0.0), &g, TOL_AMB, 1e-12).unwrap(), GlideSelection::Zero);
    }

    #[test]
    fn selection_orders_counterclockwise() {
        let g = GlideSet::axes();
        // j in the third quadrant bisector touches -e1 and -e2
        let s = select_glide(v(-1.0, -1.0), &g, TOL_AMB, 1e-12).unwrap();
        let GlideSelection::Ambiguous(a, b) = s else { panic!("{s:?}") };
        assert!(cross(v(-1.0, -1.0), g.get(a)) < 0.0 && cross(v(-1.0, -1.0), g.get(b)) > 0.0);
    }

    #[test]
    fn three_way_tie_is_an_error() {
        let g = GlideSet::from_angles_deg(&[0.0, 10.0, 20.0, 90.0]).unwrap();
        let j = v(10f64.to_radians().cos(), 10f64.to_radians().sin());
        let r = select_glide(j, &g, 0.1, 1e-12);
        assert_eq!(r, Err(InclusionError::Degenerate { count: 3 }));
    }

    #[test]
    fn velocity_set_examples() {
        let g = GlideSet::axes();
        assert_eq!(velocity_set(v(1.0, 0.0), GlideSelection::Unique(0), &g), VelocitySet::Point(v(1.0, 0.0)));
        assert_eq!(velocity_set(v(1.0, 1.0), GlideSelection::Ambiguous(0, 1), &g), VelocitySet::Segment(v(1.0, 0.0), v(0.0, 1.0)));
        assert_eq!(velocity_set(v(0.0, 0.0), GlideSelection::Zero, &g), VelocitySet::Point(v(0.0, 0.0)));
    }

    #[test]
    fn hull_examples() {
        let seg = VelocitySet::Segment(v(1.0, 0.0), v(0.0, 1.0));
        let h = hull_product(vec![seg]);
        assert!(h.contains(&[0.5, 0.5]));
        assert!(!h.contains(&[0.6, 0.5]));
        let pts = hull_product(vec![VelocitySet::Point(v(1.0, 2.0)), VelocitySet::Point(v(-1.0, 0.5))]);
        assert!(pts.contains(&[1.0, 2.0, -1.0, 0.5]));
        assert!(!pts.contains(&[1.0, 2.0, -1.0, 0.5000001]));
        let two = hull_product(vec![seg, VelocitySet::Segment(v(0.0, 0.0), v(2.0, 2.0))]);
        assert!(two.contains(&[0.5, 0.5, 1.0, 1.0]));
        assert_eq!(two.corners().len(), 4);
    }

    #[test]
    fn kinetics_law() {
        let g = GlideSet::axes();
        let k = Kinetics::new(2.0, vec![2.0, 1.0, 1.0, 1.0], vec![0.5, 0.0, 0.0, 0.0], &g).unwrap();
        assert!((k.speed(v(1.5, 0.0), g.get(0), 0) - 2.0).abs() < 1e-15);
        assert_eq!(k.speed(v(0.4, 0.0), g.get(0), 0), 0.0);
        assert!(Kinetics::new(1.0, vec![1.0; 3], vec![0.0; 4], &g).is_err());
        assert!(Kinetics::linear(4).is_linear());
    }

    fn pair(w: Vec2) -> Configuration {
        Configuration::from_triples(&[(0.0, 0.0, 1.0), (w.x, w.y, -1.0)]).unwrap()
    }

    #[test]
    fn plane_pair_event_values() {
        let s = FRAC_1_SQRT_2;
        let (g1, g2) = (v(s, s), v(s, -s));
        let m = Material::isotropic();
        let e = ambiguity_event_value(&Domain::Plane, &pair(v(1.0, 0.0)), &m, 0, g2, g1).unwrap();
        assert!(e.abs() < 1e-16);
        let e = ambiguity_event_value(&Domain::Plane, &pair(v(1.0, 0.1)), &m, 0, g2, g1).unwrap();
        // attraction toward w pulls j_1 upward when w_2 > z_2
        assert!(e > 0.0);
        let j = v(0.3, 0.7);
        let bis = (g1 + g2).normalize() * j.norm();
        assert!(bis.dot(&(g1 - g2)).abs() < 1e-16);
    }

    #[test]
    fn plane_pair_normal() {
        let s = FRAC_1_SQRT_2;
        let g0 = v(s, s) - v(s, -s);
        let m = Material::isotropic();
        let a = ambiguity_normal(&Domain::Plane, &pair(v(1.0, 0.0)), &m, 0, g0).unwrap();
        let reference = [0.0, s, 0.0, -s];
        let dot: f64 = a.normal.iter().zip(reference).map(|(x, y)| x * y).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-14);
        let b = ambiguity_normal(&Domain::Plane, &pair(v(2.0, 0.0)), &m, 0, g0).unwrap();
        assert!((a.magnitude / b.magnitude - 4.0).abs() < 1e-12);
        assert!((a.magnitude - 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn normal_analytic_matches_fd() {
        let m = Material::isotropic();
        let c = Configuration::from_triples(&[(0.1, 0.2, 1.0), (-0.4, 0.3, 1.0), (0.3, -0.5, -1.0)]).unwrap();
        let e = ForceEngine::for_config(&Domain::UnitDisk, &c, &m).unwrap();
        let g0 = v(0.3, -1.2);
        let a = event_gradient(&e, &c.state(), 1, g0).unwrap();
        let f = gradient_from_blocks(&e.jacobian_fd(&c.state(), 1, 1e-6).unwrap(), g0);
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (x, y) in a.iter().zip(&f) {
            assert!((x - y).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn zero_gradient_is_singular() {
        // a lone dislocation in the plane has no force and no gradient
        let c = Configuration::from_triples(&[(0.0, 0.0, 1.0)]).unwrap();
        let r = ambiguity_normal(&Domain::Plane, &c, &Material::isotropic(), 0, v(0.0, 1.0));
        assert!(matches!(r, Err(InclusionError::Singular { .. })));
    }
}
