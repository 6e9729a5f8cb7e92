//! Canned scenarios with machine-checkable expected outcomes.

use std::f64::consts::PI;

use crate::integrator::{simulate, Controls, EventKind, SimError, SimulationRecord};
use crate::types::{Configuration, Domain, GlideSet, Material, TypeError, Vec2};

/// What a scenario is expected to produce.
#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    /// Opposite pair on a common axis line, sliding toward each other:
    /// `z, w = c ∓ (d/2)√(1 − t/T) a` with `T = π d²/b²`.
    PairSlide { center: Vec2, axis: Vec2, separation: f64, collision_time: f64 },
    /// Smooth glide, exactly one fine slip entry once aligned with an
    /// axis, then collision.
    PairGlideThenSlide,
    /// Straight glide into each other along a glide direction.
    PairCollideWithoutSlip,
    /// A single dislocation gliding outward, monotone in `|z|`.
    BoundaryEscape,
    /// Symmetric radial escape without sliding.
    SymmetricEscape,
    /// Nothing moves.
    Stationary,
    /// At least one fine slip entry of `index`, no collision between
    /// dislocations, and a boundary collision at the end.
    FineSlipThenBoundary { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub summary: String,
    pub domain: Domain,
    pub material: Material,
    pub glide: GlideSet,
    pub config: Configuration,
    pub controls: Controls,
    pub expectation: Expectation,
}

/// Initial layout of the twelve-dislocation disk run: one dislocation near
/// the center and eleven around it.
pub const TWELVE_LAYOUT: [(f64, f64); 12] = [
    (-0.059, 0.031),
    (-0.340, 0.223),
    (-0.259, 0.050),
    (-0.354, -0.202),
    (-0.213, -0.216),
    (0.024, -0.257),
    (0.075, -0.334),
    (0.337, -0.022),
    (0.217, 0.074),
    (0.177, 0.155),
    (0.243, 0.344),
    (0.031, 0.347),
];

/// Dislocations with moduli `b` and `−b` at `z0` and `w0` in the plane,
/// glide directions at ±45°.
pub fn plane_pair(b: f64, z0: Vec2, w0: Vec2) -> Result<Scenario, TypeError> {
    let config = Configuration::from_triples(&[(z0.x, z0.y, b), (w0.x, w0.y, -b)])?;
    if (z0 - w0).norm() == 0.0 {
        return Err(TypeError::Position { index: 1 });
    }
    let d = w0 - z0;
    let (expectation, t_max) = if d.x == 0.0 || d.y == 0.0 {
        let separation = d.norm();
        let collision_time = PI * separation * separation / (b * b);
        (Expectation::PairSlide { center: (z0 + w0) * 0.5, axis: d / separation, separation, collision_time }, 2.0 * collision_time)
    } else if d.x.abs() == d.y.abs() {
        (Expectation::PairCollideWithoutSlip, 20.0 * PI * d.norm_squared() / (b * b))
    } else {
        (Expectation::PairGlideThenSlide, 20.0 * PI * d.norm_squared() / (b * b))
    };
    Ok(Scenario {
        name: "plane_pair".into(),
        summary: format!("opposite pair b = ±{b} in the plane from {:?} and {:?}", [z0.x, z0.y], [w0.x, w0.y]),
        domain: Domain::Plane,
        material: Material::isotropic(),
        glide: GlideSet::diagonals(),
        config,
        controls: Controls { t_max, ..Controls::default() },
        expectation,
    })
}

/// Twelve unit dislocations in the unit disk with the six-direction glide
/// set; the first position is the near-center one.
pub fn disk_twelve(positions: &[Vec2]) -> Result<Scenario, TypeError> {
    let triples: Vec<(f64, f64, f64)> = positions.iter().map(|p| (p.x, p.y, 1.0)).collect();
    let config = Configuration::from_triples(&triples)?;
    if let Some(i) = positions.iter().position(|p| p.norm() >= 1.0) {
        return Err(TypeError::Position { index: i });
    }
    Ok(Scenario {
        name: "disk_twelve".into(),
        summary: "twelve repelling dislocations in the unit disk".into(),
        domain: Domain::UnitDisk,
        material: Material::isotropic(),
        glide: GlideSet::axes_and_diagonal(),
        config,
        controls: Controls { t_max: 50.0, ..Controls::default() },
        expectation: Expectation::FineSlipThenBoundary { index: 0 },
    })
}

/// [`disk_twelve`] with [`TWELVE_LAYOUT`].
pub fn disk_twelve_default() -> Scenario {
    let p: Vec<Vec2> = TWELVE_LAYOUT.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
    disk_twelve(&p).expect("valid layout")
}

/// Four unit dislocations on the axes at radius 0.5 in the unit disk.
pub fn disk_ring4() -> Scenario {
    let config = Configuration::from_triples(&[(0.5, 0.0, 1.0), (0.0, 0.5, 1.0), (-0.5, 0.0, 1.0), (0.0, -0.5, 1.0)]).expect("valid");
    Scenario {
        name: "disk_ring4".into(),
        summary: "symmetric ring of four in the unit disk, axis glide".into(),
        domain: Domain::UnitDisk,
        material: Material::isotropic(),
        glide: GlideSet::axes(),
        config,
        controls: Controls { t_max: 50.0, ..Controls::default() },
        expectation: Expectation::SymmetricEscape,
    }
}

/// One dislocation at the center of the unit disk.
pub fn disk_center() -> Scenario {
    Scenario {
        name: "disk_center".into(),
        summary: "single dislocation at the disk center".into(),
        domain: Domain::UnitDisk,
        material: Material::isotropic(),
        glide: GlideSet::axes(),
        config: Configuration::from_triples(&[(0.0, 0.0, 1.0)]).expect("valid"),
        controls: Controls { t_max: 5.0, ..Controls::default() },
        expectation: Expectation::Stationary,
    }
}

/// One dislocation at `(0.5, 0)` in the unit disk.
pub fn disk_single() -> Scenario {
    Scenario {
        name: "disk_single".into(),
        summary: "single dislocation at (0.5, 0) escaping along e1".into(),
        domain: Domain::UnitDisk,
        material: Material::isotropic(),
        glide: GlideSet::axes(),
        config: Configuration::from_triples(&[(0.5, 0.0, 1.0)]).expect("valid"),
        controls: Controls { t_max: 50.0, ..Controls::default() },
        expectation: Expectation::BoundaryEscape,
    }
}

/// Every named scenario: the axis-aligned, off-axis and diagonal plane
/// pairs and the disk runs.
pub fn catalog() -> Vec<Scenario> {
    let named = |mut s: Scenario, name: &str| {
        s.name = name.into();
        s
    };
    vec![
        named(plane_pair(1.0, Vec2::zeros(), Vec2::new(1.0, 0.0)).expect("valid"), "plane_pair"),
        named(plane_pair(1.0, Vec2::zeros(), Vec2::new(1.0, 0.5)).expect("valid"), "plane_pair_offaxis"),
        named(plane_pair(1.0, Vec2::zeros(), Vec2::new(1.0, 1.0)).expect("valid"), "plane_pair_diagonal"),
        disk_single(),
        disk_center(),
        disk_ring4(),
        disk_twelve_default(),
    ]
}

pub fn by_name(name: &str) -> Option<Scenario> {
    catalog().into_iter().find(|s| s.name == name)
}

fn names(r: &SimulationRecord) -> Vec<&'static str> {
    r.events.iter().map(|e| e.kind.name()).collect()
}

impl Scenario {
    pub fn run(&self) -> Result<SimulationRecord, SimError> {
        simulate(&self.domain, &self.config, &self.material, &self.glide, &self.controls)
    }

    /// Checks the record against the expectation.
    pub fn check(&self, r: &SimulationRecord) -> Result<(), String> {
        if let Some(e) = &r.failure {
            return Err(format!("run failed: {e}"));
        }
        let n = self.config.len();
        let z0 = self.config.state();
        match &self.expectation {
            Expectation::PairSlide { center, axis, separation, collision_time } => {
                if names(r) != ["fine_slip_enter", "collision"] || r.events[0].t != 0.0 {
                    return Err(format!("events {:?}", names(r)));
                }
                let t_end = r.events[1].t;
                if (t_end - collision_time).abs() > 1e-4 {
                    return Err(format!("collision at {t_end}, expected {collision_time}"));
                }
                let perp = Vec2::new(-axis.y, axis.x);
                for s in &r.samples {
                    let p = [Vec2::new(s.z[0], s.z[1]), Vec2::new(s.z[2], s.z[3])];
                    let off = (p[0] - center).dot(&perp).abs().max((p[1] - center).dot(&perp).abs());
                    if off > 1e-8 {
                        return Err(format!("left the axis by {off:e} at t = {}", s.t));
                    }
                    if s.t <= 0.99 * collision_time {
                        let half = 0.5 * separation * (1.0 - s.t / collision_time).sqrt();
                        let err = ((p[0] - center).dot(axis) + half).abs().max(((p[1] - center).dot(axis) - half).abs());
                        if err > 1e-5 {
                            return Err(format!("position error {err:e} at t = {}", s.t));
                        }
                    }
                }
                Ok(())
            }
            Expectation::PairGlideThenSlide => {
                if names(r) != ["fine_slip_enter", "collision"] {
                    return Err(format!("events {:?}", names(r)));
                }
                let first = &r.samples[0];
                let v = Vec2::new(first.velocity[0], first.velocity[1]);
                let w = Vec2::new(first.velocity[2], first.velocity[3]);
                if !self.glide.directions().iter().any(|g| (v.normalize() - g).norm() < 1e-12) || (v + w).norm() > 1e-12 * v.norm() {
                    return Err(format!("initial velocities {v:?}, {w:?} are not opposite glide velocities"));
                }
                let s = &r.events[0].state;
                let gap = (s[0] - s[2]).abs().min((s[1] - s[3]).abs());
                if gap > 1e-8 {
                    return Err(format!("fine slip entered {gap:e} away from axis alignment"));
                }
                Ok(())
            }
            Expectation::PairCollideWithoutSlip => {
                if names(r) != ["collision"] {
                    return Err(format!("events {:?}", names(r)));
                }
                Ok(())
            }
            Expectation::BoundaryEscape => {
                if names(r) != ["boundary_collision"] {
                    return Err(format!("events {:?}", names(r)));
                }
                let radius = |s: &[f64]| s[0].hypot(s[1]);
                if r.samples.windows(2).any(|w| radius(&w[1].z) < radius(&w[0].z)) {
                    return Err("|z| is not monotone".into());
                }
                Ok(())
            }
            Expectation::SymmetricEscape => {
                let ev = names(r);
                if ev.iter().any(|e| e.contains("slip")) || ev.last() != Some(&"boundary_collision") {
                    return Err(format!("events {ev:?}"));
                }
                for s in &r.samples {
                    let radii: Vec<f64> = (0..n).map(|i| s.z[2 * i].hypot(s.z[2 * i + 1])).collect();
                    let spread = radii.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) - radii.iter().fold(f64::INFINITY, |a, b| a.min(*b));
                    if spread > 1e-9 {
                        return Err(format!("radii spread {spread:e} at t = {}", s.t));
                    }
                }
                Ok(())
            }
            Expectation::Stationary => {
                if r.terminal().map(|e| &e.kind) != Some(&EventKind::MaxTime) {
                    return Err(format!("events {:?}", names(r)));
                }
                for s in &r.samples {
                    let moved = s.z.iter().zip(&z0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    let speed = s.velocity.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    if moved > 1e-14 || speed > 1e-14 {
                        return Err(format!("moved {moved:e} with speed {speed:e} at t = {}", s.t));
                    }
                }
                Ok(())
            }
            Expectation::FineSlipThenBoundary { index } => {
                let enters = r.events.iter().filter(|e| matches!(e.kind, EventKind::FineSlipEnter { index: i, .. } if i == *index)).count();
                if enters == 0 {
                    return Err(format!("no fine slip entry for dislocation {index}; events {:?}", names(r)));
                }
                if r.events.iter().any(|e| matches!(e.kind, EventKind::Collision { .. })) {
                    return Err("dislocations collided".into());
                }
                if !matches!(r.terminal().map(|e| &e.kind), Some(EventKind::BoundaryCollision { .. })) {
                    return Err(format!("did not end at the boundary; events {:?}", names(r)));
                }
                Ok(())
            }
        }
    }
}
