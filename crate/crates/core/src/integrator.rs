//! Event-driven integration of the glide inclusion.
//!
//! Between events every dislocation is frozen, glides along one fixed
//! direction, or slides on a tie surface together with the other members of
//! that surface. Stretches between events use an adaptive Dormand-Prince
//! pair with dense output. Watchers locate collisions, boundary contact,
//! new ties and sliding exits by bisection, and each contact is classified
//! from the signs of the one-sided fields against the surface normals.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::elasticity::renormalized_energy_plane;
use crate::forces::{ForceEngine, ForceError};
use crate::inclusion::{gradient_from_blocks, select_glide, singular_threshold, GlideSelection, InclusionError, Kinetics, TOL_AMB};
use crate::types::{cross, validate_configuration, Configuration, Domain, GlideSet, Material, Vec2};

/// Normals closer than this (up to sign) belong to one surface.
pub const COINCIDENT_TOL: f64 = 1e-8;

/// Slack of the glide-gap and third-direction watchers.
const WATCH_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid controls: {0}")]
    Controls(String),
    #[error("invalid initial configuration: {0}")]
    InitialConfiguration(String),
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error(transparent)]
    Inclusion(#[from] InclusionError),
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("contact classification is uncertain at t = {t:e} for dislocations {indices:?}")]
    ClassificationUncertain { t: f64, indices: Vec<usize> },
    #[error("sliding system is singular at t = {t:e}")]
    SingularSliding { t: f64 },
    #[error("tie surface of dislocation {index} is singular")]
    SingularSurface { index: usize },
    #[error("double sliding matrix has det A = {det:e} under attracting sign conditions")]
    NonPositiveDeterminant { det: f64 },
    #[error("the double sliding sign conditions do not hold")]
    SignConditions,
    #[error("dislocation {index} shares a tie surface that is not covered by this operation")]
    NotIsolated { index: usize },
    #[error("dislocation {index} is not on a tie between directions {minus} and {plus}")]
    NotOnSurface { index: usize, minus: usize, plus: usize },
    #[error("event handling did not settle at t = {t:e}")]
    EventLoop { t: f64 },
    #[error("step limit {0} reached")]
    MaxSteps(usize),
    #[error("radius {r0:e} must lie in (0, {dist:e})")]
    Radius { r0: f64, dist: f64 },
}

/// Run controls. Lengths are in configuration units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Controls {
    pub t_max: f64,
    pub dt_max: f64,
    pub rtol: f64,
    pub atol: f64,
    pub eps_coll: f64,
    pub eps_bdry: f64,
    pub tol_amb: f64,
    /// Sliding residual bound relative to `|j_ℓ|·|g⁺ − g⁻|`.
    pub drift_tol: f64,
    pub exit_margin: f64,
    pub max_steps: usize,
}

impl Default for Controls {
    fn default() -> Self {
        Controls {
            t_max: 10.0,
            dt_max: 0.1,
            rtol: 1e-9,
            atol: 1e-12,
            eps_coll: 1e-6,
            eps_bdry: 1e-6,
            tol_amb: TOL_AMB,
            drift_tol: 1e-10,
            exit_margin: 1e-12,
            max_steps: 200_000,
        }
    }
}

impl Controls {
    pub fn validate(&self) -> Result<(), SimError> {
        let pos = [
            ("t_max", self.t_max),
            ("dt_max", self.dt_max),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("eps_coll", self.eps_coll),
            ("tol_amb", self.tol_amb),
            ("drift_tol", self.drift_tol),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Controls(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if !(self.eps_bdry.is_finite() && self.eps_bdry >= 0.0) {
            return Err(SimError::Controls(format!("eps_bdry must be finite and nonnegative, got {}", self.eps_bdry)));
        }
        if !(self.exit_margin >= 0.0 && self.exit_margin < 0.5) {
            return Err(SimError::Controls(format!("exit_margin must lie in [0, 0.5), got {}", self.exit_margin)));
        }
        if self.max_steps == 0 {
            return Err(SimError::Controls("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// What happened. Indices are zero-based dislocation and glide indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    CrossSlip { index: usize, from: usize, to: usize },
    FineSlipEnter { index: usize, minus: usize, plus: usize, partners: Vec<usize> },
    FineSlipExit { index: usize, to: usize, partners: Vec<usize> },
    DoubleSlipEnter { first: usize, second: usize },
    DoubleSlipExit { first: usize, second: usize },
    SourcePoint { index: usize },
    SingularPoint { index: usize },
    UnsupportedIntersection { indices: Vec<usize> },
    ZeroForce { index: usize },
    /// A frozen dislocation starts gliding again.
    Resume { index: usize, direction: usize },
    Collision { first: usize, second: usize },
    BoundaryCollision { index: usize },
    MaxTime,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::CrossSlip { .. } => "cross_slip",
            EventKind::FineSlipEnter { .. } => "fine_slip_enter",
            EventKind::FineSlipExit { .. } => "fine_slip_exit",
            EventKind::DoubleSlipEnter { .. } => "double_slip_enter",
            EventKind::DoubleSlipExit { .. } => "double_slip_exit",
            EventKind::SourcePoint { .. } => "source_point",
            EventKind::SingularPoint { .. } => "singular_point",
            EventKind::UnsupportedIntersection { .. } => "unsupported_intersection",
            EventKind::ZeroForce { .. } => "zero_force",
            EventKind::Resume { .. } => "resume",
            EventKind::Collision { .. } => "collision",
            EventKind::BoundaryCollision { .. } => "boundary_collision",
            EventKind::MaxTime => "max_time",
        }
    }

    /// Whether the run stops here.
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            EventKind::SourcePoint { .. }
                | EventKind::SingularPoint { .. }
                | EventKind::UnsupportedIntersection { .. }
                | EventKind::Collision { .. }
                | EventKind::BoundaryCollision { .. }
                | EventKind::MaxTime
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    /// Flat state at the event.
    pub state: Vec<f64>,
}

/// Sliding membership of the whole system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Smooth,
    Sliding { members: Vec<usize> },
    Double { first: Vec<usize>, second: Vec<usize> },
}

impl Mode {
    /// Compact label with one-based indices, e.g. `sliding[1+2]`.
    pub fn label(&self) -> String {
        let join = |m: &[usize]| m.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join("+");
        match self {
            Mode::Smooth => "smooth".into(),
            Mode::Sliding { members } => format!("sliding[{}]", join(members)),
            Mode::Double { first, second } => format!("double[{}|{}]", join(first), join(second)),
        }
    }
}

/// Motion of one dislocation between events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Motion {
    Frozen,
    Glide(usize),
    Sliding { surface: usize },
}

/// A member of a tie surface. `orient` is `+1` when the member's plus side
/// is the primary's plus side and `−1` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub index: usize,
    pub minus: usize,
    pub plus: usize,
    pub orient: f64,
}

impl Member {
    /// Direction used on the given side of the surface.
    fn side(&self, plus_side: bool) -> usize {
        if (self.orient > 0.0) == plus_side {
            self.plus
        } else {
            self.minus
        }
    }
}

/// Tie surface, possibly shared by several dislocations whose individual
/// surfaces coincide. The first member is the primary; its event function
/// `j·(g⁺ − g⁻)` defines the surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub members: Vec<Member>,
}

impl Surface {
    pub fn primary(&self) -> &Member {
        &self.members[0]
    }

    pub fn indices(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.index).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub z: Vec<f64>,
    pub velocity: Vec<f64>,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub t: f64,
    /// Renormalized energy, available in the plane only.
    pub energy: Option<f64>,
    /// Dissipation rate `Σ j_ℓ·ż_ℓ`.
    pub power: f64,
    /// Trapezoid integral of the power so far.
    pub dissipated: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub energy: Vec<EnergySample>,
    /// Set when the run stopped on an error instead of an event.
    pub failure: Option<SimError>,
    pub accepted: usize,
    pub rejected: usize,
}

impl SimulationRecord {
    pub fn terminal(&self) -> Option<&Event> {
        self.events.last().filter(|e| e.kind.is_terminal())
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.kind.name() == name).count()
    }
}

/// Snapshot of the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorState {
    pub t: f64,
    pub z: Vec<f64>,
    pub mode: Mode,
    pub motions: Vec<Motion>,
    pub surfaces: Vec<Surface>,
    pub h: f64,
}

enum EvalError {
    Force(ForceError),
    Singular(usize),
    System,
}

impl From<ForceError> for EvalError {
    fn from(e: ForceError) -> Self {
        EvalError::Force(e)
    }
}

enum Stop {
    Terminal(EventKind),
    Fail(SimError),
}

impl From<SimError> for Stop {
    fn from(e: SimError) -> Self {
        Stop::Fail(e)
    }
}

struct Eval {
    j: Vec<Vec2>,
    v: Vec<f64>,
    alpha: Vec<f64>,
}

impl Eval {
    fn power(&self) -> f64 {
        self.j.iter().enumerate().map(|(l, j)| j.x * self.v[2 * l] + j.y * self.v[2 * l + 1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Trigger {
    Collision(usize, usize),
    Boundary(usize),
    Gap(usize),
    AlphaLow(usize),
    AlphaHigh(usize),
    Third(usize),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn put(v: &mut [f64], l: usize, w: Vec2) {
    v[2 * l] = w.x;
    v[2 * l + 1] = w.y;
}

/// Solves the `k × k` sliding system `Σ_b (n_a·D_b) α_b = −n_a·v`, k ≤ 2.
fn solve_alphas(grads: &[&[f64]], deltas: &[&[f64]], v: &[f64]) -> Option<Vec<f64>> {
    match grads.len() {
        0 => Some(vec![]),
        1 => {
            let a = dot(grads[0], deltas[0]);
            let x = -dot(grads[0], v) / a;
            x.is_finite().then(|| vec![x])
        }
        2 => {
            let a = Matrix2::new(
                dot(grads[0], deltas[0]),
                dot(grads[0], deltas[1]),
                dot(grads[1], deltas[0]),
                dot(grads[1], deltas[1]),
            );
            let b = Vector2::new(-dot(grads[0], v), -dot(grads[1], v));
            let det = a.determinant();
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            let x = Vector2::new(b.x * a[(1, 1)] - b.y * a[(0, 1)], a[(0, 0)] * b.y - a[(1, 0)] * b.x) / det;
            (x.x.is_finite() && x.y.is_finite()).then(|| vec![x.x, x.y])
        }
        _ => None,
    }
}

/// Fixed problem data shared by every evaluation.
struct Ctx {
    engine: ForceEngine,
    glide: GlideSet,
    kinetics: Kinetics,
}

impl Ctx {
    fn n(&self) -> usize {
        self.engine.len()
    }

    fn vel(&self, j: Vec2, g: usize) -> Vec2 {
        self.kinetics.velocity(j, &self.glide, g)
    }

    fn eps_zero(&self, z: &[f64]) -> f64 {
        1e-12 * self.engine.force_scale(z)
    }

    /// Unnormalized normal and value of the primary's event function.
    fn surface_gradient(&self, z: &[f64], j: &[Vec2], m: &Member) -> Result<(Vec<f64>, f64), EvalError> {
        let g0 = self.glide.get(m.plus) - self.glide.get(m.minus);
        let blocks = self.engine.jacobian(z, m.index)?;
        let grad = gradient_from_blocks(&blocks, g0);
        let mag = norm(&grad);
        if mag == 0.0 || mag < singular_threshold(&blocks, g0) {
            return Err(EvalError::Singular(m.index));
        }
        Ok((grad, j[m.index].dot(&g0)))
    }

    /// Velocity with every member on its minus side plus one jump vector
    /// per surface.
    fn split(&self, j: &[Vec2], motions: &[Motion], surfaces: &[Surface]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.n();
        let mut v = vec![0.0; 2 * n];
        for (l, m) in motions.iter().enumerate() {
            if let Motion::Glide(g) = m {
                put(&mut v, l, self.vel(j[l], *g));
            }
        }
        let mut deltas = Vec::with_capacity(surfaces.len());
        for s in surfaces {
            let mut d = vec![0.0; 2 * n];
            for m in &s.members {
                let lo = self.vel(j[m.index], m.side(false));
                let hi = self.vel(j[m.index], m.side(true));
                put(&mut v, m.index, lo);
                put(&mut d, m.index, hi - lo);
            }
            deltas.push(d);
        }
        (v, deltas)
    }

    fn field(&self, z: &[f64], motions: &[Motion], surfaces: &[Surface]) -> Result<Eval, EvalError> {
        let j = self.engine.forces(z)?;
        let (mut v, deltas) = self.split(&j, motions, surfaces);
        let mut grads = Vec::with_capacity(surfaces.len());
        for s in surfaces {
            grads.push(self.surface_gradient(z, &j, s.primary())?.0);
        }
        let g: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        let d: Vec<&[f64]> = deltas.iter().map(|d| d.as_slice()).collect();
        let alpha = solve_alphas(&g, &d, &v).ok_or(EvalError::System)?;
        for (a, d) in alpha.iter().zip(&deltas) {
            for (vi, di) in v.iter_mut().zip(d) {
                *vi += a * di;
            }
        }
        Ok(Eval { j, v, alpha })
    }

    /// Relative lead of direction `a` over every other direction.
    fn gap(&self, j: Vec2, keep: &[usize]) -> f64 {
        let nj = j.norm();
        if nj == 0.0 {
            return 1.0;
        }
        let top = keep.iter().map(|&g| j.dot(&self.glide.get(g))).fold(f64::NEG_INFINITY, f64::max);
        let other = (0..self.glide.len())
            .filter(|g| !keep.contains(g))
            .map(|g| j.dot(&self.glide.get(g)))
            .fold(f64::NEG_INFINITY, f64::max);
        (top - other) / nj
    }

    /// The two best directions ordered clockwise to counterclockwise of `j`.
    fn top_pair(&self, j: Vec2, tol_amb: f64) -> Result<(usize, usize), InclusionError> {
        let proj: Vec<f64> = self.glide.directions().iter().map(|g| j.dot(g)).collect();
        let mut order: Vec<usize> = (0..proj.len()).collect();
        order.sort_by(|&a, &b| proj[b].total_cmp(&proj[a]).then(a.cmp(&b)));
        let (a, b) = (order[0], order[1]);
        if proj[a] - proj[order[2]] <= tol_amb * j.norm() {
            let count = order.iter().filter(|&&g| proj[a] - proj[g] <= tol_amb * j.norm()).count();
            return Err(InclusionError::Degenerate { count });
        }
        Ok(if cross(j, self.glide.get(a)) <= cross(j, self.glide.get(b)) { (a, b) } else { (b, a) })
    }

    fn geometric(&self, z: &[f64], controls: &Controls) -> Vec<Trigger> {
        let n = self.n();
        let p = |i: usize| Vec2::new(z[2 * i], z[2 * i + 1]);
        let mut out = Vec::new();
        for i in 0..n {
            for k in i + 1..n {
                if (p(i) - p(k)).norm() < controls.eps_coll {
                    out.push(Trigger::Collision(i, k));
                }
            }
        }
        let domain = self.engine.domain();
        if !matches!(domain, Domain::Plane) {
            for i in 0..n {
                if domain.boundary_distance(p(i)) < controls.eps_bdry.max(f64::MIN_POSITIVE) {
                    out.push(Trigger::Boundary(i));
                }
            }
        }
        out
    }

    /// First contact reached by linear extrapolation of `v` over `tau`.
    /// Used when the step size underflows: a finite-time approach whose
    /// remaining time is below the resolution of `t`.
    fn imminent(&self, z: &[f64], v: &[f64], tau: f64, controls: &Controls) -> Option<EventKind> {
        let n = self.n();
        let p = |i: usize| Vec2::new(z[2 * i], z[2 * i + 1]);
        let w = |i: usize| Vec2::new(v[2 * i], v[2 * i + 1]);
        for i in 0..n {
            for k in i + 1..n {
                let (r, dv) = (p(k) - p(i), w(k) - w(i));
                let s = if dv.norm_squared() > 0.0 { (-r.dot(&dv) / dv.norm_squared()).clamp(0.0, tau) } else { 0.0 };
                if (r + s * dv).norm() < controls.eps_coll.max(f64::MIN_POSITIVE) {
                    return Some(EventKind::Collision { first: i, second: k });
                }
            }
        }
        let domain = self.engine.domain();
        (0..n)
            .find(|&i| domain.boundary_distance(p(i) + tau * w(i)) < controls.eps_bdry.max(f64::MIN_POSITIVE))
            .map(|index| EventKind::BoundaryCollision { index })
    }
}

/// Velocity field under the given glide assignment (`None` freezes the
/// dislocation), with linear kinetics.
pub fn smooth_rhs(domain: &Domain, config: &Configuration, material: &Material, glide: &GlideSet, directions: &[Option<usize>]) -> Result<Vec<f64>, SimError> {
    let engine = ForceEngine::for_config(domain, config, material)?;
    if directions.len() != config.len() {
        return Err(ForceError::StateLength { got: directions.len(), expected: config.len() }.into());
    }
    let j = engine.forces(&config.state())?;
    let kin = Kinetics::linear(glide.len());
    let mut v = vec![0.0; 2 * config.len()];
    for (l, d) in directions.iter().enumerate() {
        if let Some(g) = d {
            put(&mut v, l, kin.velocity(j[l], glide, *g));
        }
    }
    Ok(v)
}

/// Outcome of a contact with a single tie surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactClass {
    CrossMinusToPlus,
    CrossPlusToMinus,
    FineSlip,
    Source,
}

/// Class from the normal components of the minus-side and plus-side
/// fields; either one within `tol` of zero is uncertain.
pub fn classify_signs(f_minus_n: f64, f_plus_n: f64, tol: f64) -> Result<ContactClass, SimError> {
    if f_minus_n.abs() <= tol || f_plus_n.abs() <= tol || !f_minus_n.is_finite() || !f_plus_n.is_finite() {
        return Err(SimError::ClassificationUncertain { t: f64::NAN, indices: vec![] });
    }
    Ok(match (f_minus_n > 0.0, f_plus_n > 0.0) {
        (true, true) => ContactClass::CrossMinusToPlus,
        (false, false) => ContactClass::CrossPlusToMinus,
        (true, false) => ContactClass::FineSlip,
        (false, true) => ContactClass::Source,
    })
}

/// Unit normal, minus-side field and jump of one surface grouping.
struct Grouped {
    normal: Vec<f64>,
    base: Vec<f64>,
    delta: Vec<f64>,
}

/// Builds the surfaces through the given pairs at the configuration,
/// absorbing every other tied dislocation whose surface coincides.
fn group_for(ctx: &Ctx, z: &[f64], pairs: &[(usize, usize, usize)], tol_amb: f64) -> Result<(Vec<Surface>, Vec<Motion>, Vec<Vec<f64>>), SimError> {
    let j = ctx.engine.forces(z)?;
    let eps = ctx.eps_zero(z);
    let mut motions = vec![Motion::Frozen; ctx.n()];
    let mut surfaces: Vec<Surface> = Vec::new();
    let mut normals: Vec<Vec<f64>> = Vec::new();
    let unit = |m: &Member| -> Result<Vec<f64>, SimError> {
        let (g, _) = ctx.surface_gradient(z, &j, m).map_err(|e| match e {
            EvalError::Force(f) => SimError::Force(f),
            _ => SimError::SingularSurface { index: m.index },
        })?;
        let mag = norm(&g);
        Ok(g.iter().map(|x| x / mag).collect())
    };
    for &(l, minus, plus) in pairs {
        let m = Member { index: l, minus, plus, orient: 1.0 };
        let g0 = ctx.glide.get(plus) - ctx.glide.get(minus);
        if j[l].dot(&g0).abs() > 1e3 * tol_amb * j[l].norm() * g0.norm() {
            return Err(SimError::NotOnSurface { index: l, minus, plus });
        }
        normals.push(unit(&m)?);
        surfaces.push(Surface { members: vec![m] });
    }
    for l in 0..ctx.n() {
        if pairs.iter().any(|p| p.0 == l) {
            continue;
        }
        match select_glide(j[l], &ctx.glide, tol_amb, eps)? {
            GlideSelection::Zero => {}
            GlideSelection::Unique(g) => motions[l] = Motion::Glide(g),
            GlideSelection::Ambiguous(minus, plus) => {
                let m = Member { index: l, minus, plus, orient: 1.0 };
                let n = unit(&m)?;
                let hit = normals.iter().enumerate().find_map(|(s, ns)| {
                    let d: Vec<f64> = n.iter().zip(ns).map(|(a, b)| a - b).collect();
                    let e: Vec<f64> = n.iter().zip(ns).map(|(a, b)| a + b).collect();
                    if norm(&d) < COINCIDENT_TOL {
                        Some((s, 1.0))
                    } else if norm(&e) < COINCIDENT_TOL {
                        Some((s, -1.0))
                    } else {
                        None
                    }
                });
                let Some((s, orient)) = hit else { return Err(SimError::NotIsolated { index: l }) };
                surfaces[s].members.push(Member { orient, ..m });
            }
        }
    }
    for (s, surf) in surfaces.iter().enumerate() {
        for m in &surf.members {
            motions[m.index] = Motion::Sliding { surface: s };
        }
    }
    Ok((surfaces, motions, normals))
}

fn grouped(ctx: &Ctx, z: &[f64], pairs: &[(usize, usize, usize)]) -> Result<Vec<Grouped>, SimError> {
    let (surfaces, motions, normals) = group_for(ctx, z, pairs, TOL_AMB)?;
    let j = ctx.engine.forces(z)?;
    let (base, deltas) = ctx.split(&j, &motions, &surfaces);
    Ok(normals.into_iter().zip(deltas).map(|(normal, delta)| Grouped { normal, base: base.clone(), delta }).collect())
}

fn linear_ctx(domain: &Domain, config: &Configuration, material: &Material, glide: &GlideSet) -> Result<Ctx, SimError> {
    Ok(Ctx { engine: ForceEngine::for_config(domain, config, material)?, glide: glide.clone(), kinetics: Kinetics::linear(glide.len()) })
}

/// Classifies a configuration on the tie surface of dislocation `l`
/// between directions `minus` and `plus` (linear kinetics).
pub fn classify_surface_contact(domain: &Domain, config: &Configuration, material: &Material, glide: &GlideSet, l: usize, minus: usize, plus: usize) -> Result<ContactClass, SimError> {
    let ctx = linear_ctx(domain, config, material, glide)?;
    let g = grouped(&ctx, &config.state(), &[(l, minus, plus)])?.remove(0);
    let fm = dot(&g.normal, &g.base);
    let fp = fm + dot(&g.normal, &g.delta);
    let scale = norm(&g.base).max(norm(&g.base.iter().zip(&g.delta).map(|(a, b)| a + b).collect::<Vec<_>>()));
    classify_signs(fm, fp, 1e-10 * scale)
}

/// Sliding coefficient `α = f⁻·n / ((f⁻ − f⁺)·n)` and the sliding velocity
/// `f⁻ + α(f⁺ − f⁻)` on the tie surface of dislocation `l`.
pub fn sliding_velocity_single(domain: &Domain, config: &Configuration, material: &Material, glide: &GlideSet, l: usize, minus: usize, plus: usize) -> Result<(f64, Vec<f64>), SimError> {
    let ctx = linear_ctx(domain, config, material, glide)?;
    let g = grouped(&ctx, &config.state(), &[(l, minus, plus)])?.remove(0);
    let fm = dot(&g.normal, &g.base);
    let alpha = -fm / dot(&g.normal, &g.delta);
    if !alpha.is_finite() {
        return Err(SimError::SingularSliding { t: f64::NAN });
    }
    let v = g.base.iter().zip(&g.delta).map(|(b, d)| b + alpha * d).collect();
    Ok((alpha, v))
}

/// Coefficients of the double sliding velocity
/// `f^(−,−) + s(f^(+,+) − f^(−,+)) + t(f^(+,+) − f^(+,−))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleSliding {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub det: f64,
    pub s: f64,
    pub t: f64,
}

/// The eight attracting sign conditions for fields `f^(σ,τ)` (first sign for
/// the first surface) against normals `n1`, `n2`.
pub fn attracting_signs(fpp: &[f64], fpm: &[f64], fmp: &[f64], fmm: &[f64], n1: &[f64], n2: &[f64]) -> bool {
    dot(n1, fpp) < 0.0
        && dot(n1, fpm) < 0.0
        && dot(n1, fmp) > 0.0
        && dot(n1, fmm) > 0.0
        && dot(n2, fpp) < 0.0
        && dot(n2, fpm) > 0.0
        && dot(n2, fmp) < 0.0
        && dot(n2, fmm) > 0.0
}

/// Solves `A (s, t)ᵀ = b` with `a_i1 = n_i·(f^(+,+) − f^(−,+))`,
/// `a_i2 = n_i·(f^(+,+) − f^(+,−))` and `b_i = −n_i·f^(−,−)`.
pub fn double_sliding_coefficients(fpp: &[f64], fpm: &[f64], fmp: &[f64], fmm: &[f64], n1: &[f64], n2: &[f64]) -> Result<DoubleSliding, SimError> {
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let c1 = diff(fpp, fmp);
    let c2 = diff(fpp, fpm);
    let a = Matrix2::new(dot(n1, &c1), dot(n1, &c2), dot(n2, &c1), dot(n2, &c2));
    let b = Vector2::new(-dot(n1, fmm), -dot(n2, fmm));
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    if !(det > 0.0) {
        return Err(SimError::NonPositiveDeterminant { det });
    }
    let s = (b.x * a[(1, 1)] - b.y * a[(0, 1)]) / det;
    let t = (a[(0, 0)] * b.y - a[(1, 0)] * b.x) / det;
    Ok(DoubleSliding { a, b, det, s, t })
}

/// Double sliding on the tie surfaces of `k` and `l`, each given as
/// `(index, minus, plus)`. Returns `(s, t, velocity)`.
pub fn sliding_velocity_double(domain: &Domain, config: &Configuration, material: &Material, glide: &GlideSet, k: (usize, usize, usize), l: (usize, usize, usize)) -> Result<(f64, f64, Vec<f64>), SimError> {
    let ctx = linear_ctx(domain, config, material, glide)?;
    let g = grouped(&ctx, &config.state(), &[k, l])?;
    let fmm = g[0].base.clone();
    let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
    let fpm = add(&fmm, &g[0].delta);
    let fmp = add(&fmm, &g[1].delta);
    let fpp = add(&fpm, &g[1].delta);
    if !attracting_signs(&fpp, &fpm, &fmp, &fmm, &g[0].normal, &g[1].normal) {
        return Err(SimError::SignConditions);
    }
    let d = double_sliding_coefficients(&fpp, &fpm, &fmp, &fmm, &g[0].normal, &g[1].normal)?;
    let v = (0..fmm.len()).map(|i| fmm[i] + d.s * g[0].delta[i] + d.t * g[1].delta[i]).collect();
    Ok((d.s, d.t, v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Choice {
    Minus,
    Plus,
    Slide,
}

/// Dormand-Prince 5(4) tableau.
mod dopri {
    pub const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    pub const E: [f64; 7] = [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];
    pub const D: [f64; 7] = [
        -12715105075.0 / 11282082432.0,
        0.0,
        87487479700.0 / 32700410799.0,
        -10690763975.0 / 1880347072.0,
        701980252875.0 / 199316789632.0,
        -1453857185.0 / 822651844.0,
        69997945.0 / 29380423.0,
    ];
}

/// Continuous extension of one accepted step.
struct Dense {
    y0: Vec<f64>,
    r: [Vec<f64>; 4],
}

impl Dense {
    fn new(y0: &[f64], y1: &[f64], k: &[Vec<f64>], h: f64) -> Self {
        let n = y0.len();
        let mut r = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let dy = y1[i] - y0[i];
            let bspl = h * k[0][i] - dy;
            r[0][i] = dy;
            r[1][i] = bspl;
            r[2][i] = dy - h * k[6][i] - bspl;
            r[3][i] = h * (0..7).map(|s| dopri::D[s] * k[s][i]).sum::<f64>();
        }
        Dense { y0: y0.to_vec(), r }
    }

    fn at(&self, th: f64) -> Vec<f64> {
        let t1 = 1.0 - th;
        (0..self.y0.len())
            .map(|i| self.y0[i] + th * (self.r[0][i] + t1 * (self.r[1][i] + th * (self.r[2][i] + t1 * self.r[3][i]))))
            .collect()
    }
}

/// The event-driven integrator.
pub struct Simulator {
    ctx: Ctx,
    controls: Controls,
    material: Material,
    config: Configuration,
    t: f64,
    z: Vec<f64>,
    motions: Vec<Motion>,
    surfaces: Vec<Surface>,
    floors: Vec<f64>,
    h: f64,
    dissipated: f64,
    record: SimulationRecord,
    finished: bool,
}

impl Simulator {
    pub fn new(domain: &Domain, config: &Configuration, material: &Material, glide: &GlideSet, kinetics: Kinetics, controls: Controls) -> Result<Self, SimError> {
        controls.validate()?;
        if config.is_empty() {
            return Err(SimError::InitialConfiguration("no dislocations".into()));
        }
        if kinetics.len() != glide.len() {
            return Err(InclusionError::KineticsLength { got: kinetics.len(), expected: glide.len() }.into());
        }
        let report = validate_configuration(domain, config, controls.eps_coll, controls.eps_bdry);
        if !report.is_ok() {
            return Err(SimError::InitialConfiguration(report.to_string()));
        }
        let engine = ForceEngine::for_config(domain, config, material)?;
        let n = config.len();
        let mut sim = Simulator {
            ctx: Ctx { engine, glide: glide.clone(), kinetics },
            controls,
            material: *material,
            config: config.clone(),
            t: 0.0,
            z: config.state(),
            motions: vec![Motion::Frozen; n],
            surfaces: vec![],
            floors: vec![0.0; n],
            h: 0.0,
            dissipated: 0.0,
            record: SimulationRecord { samples: vec![], events: vec![], energy: vec![], failure: None, accepted: 0, rejected: 0 },
            finished: false,
        };
        let j = sim.ctx.engine.forces(&sim.z)?;
        let eps = sim.ctx.eps_zero(&sim.z);
        let mut contacts = vec![];
        for l in 0..n {
            match select_glide(j[l], glide, sim.controls.tol_amb, eps)? {
                GlideSelection::Zero => sim.emit(EventKind::ZeroForce { index: l }),
                GlideSelection::Unique(g) => sim.motions[l] = Motion::Glide(g),
                GlideSelection::Ambiguous(..) => contacts.push(l),
            }
        }
        let started = if contacts.is_empty() { Ok(()) } else { sim.resolve(&contacts, true) };
        match started {
            Ok(()) => {
                sim.reset_floors();
                sim.h = sim.initial_step();
                sim.push_sample();
            }
            Err(stop) => sim.finish(stop),
        }
        Ok(sim)
    }

    pub fn state(&self) -> IntegratorState {
        IntegratorState { t: self.t, z: self.z.clone(), mode: self.mode(), motions: self.motions.clone(), surfaces: self.surfaces.clone(), h: self.h }
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn record(&self) -> &SimulationRecord {
        &self.record
    }

    /// Advances by one accepted step and returns the events it produced.
    pub fn step(&mut self) -> Vec<Event> {
        let before = self.record.events.len();
        if !self.finished {
            if let Err(stop) = self.advance() {
                self.finish(stop);
            }
        }
        self.record.events[before..].to_vec()
    }

    pub fn run(mut self) -> SimulationRecord {
        while !self.finished {
            self.step();
        }
        self.record
    }

    fn mode(&self) -> Mode {
        match &self.surfaces[..] {
            [] => Mode::Smooth,
            [s] => Mode::Sliding { members: s.indices() },
            [a, b, ..] => Mode::Double { first: a.indices(), second: b.indices() },
        }
    }

    fn emit(&mut self, kind: EventKind) {
        self.record.events.push(Event { t: self.t, kind, state: self.z.clone() });
    }

    fn finish(&mut self, stop: Stop) {
        if self.record.samples.last().is_none_or(|s| s.t < self.t) {
            self.push_sample();
        }
        match stop {
            Stop::Terminal(kind) => self.emit(kind),
            Stop::Fail(e) => self.record.failure = Some(e),
        }
        self.finished = true;
    }

    fn eval_stop(&self, e: EvalError) -> Stop {
        match e {
            EvalError::Force(f) => Stop::Fail(f.into()),
            EvalError::Singular(index) => Stop::Terminal(EventKind::SingularPoint { index }),
            EvalError::System => Stop::Fail(SimError::SingularSliding { t: self.t }),
        }
    }

    fn rhs(&self, z: &[f64]) -> Result<Eval, EvalError> {
        self.ctx.field(z, &self.motions, &self.surfaces)
    }

    fn push_sample(&mut self) {
        let (velocity, power) = match self.rhs(&self.z) {
            Ok(e) => {
                let p = e.power();
                (e.v, p)
            }
            Err(_) => (vec![0.0; self.z.len()], 0.0),
        };
        let energy = match self.ctx.engine.domain() {
            Domain::Plane => self.config.with_state(&self.z).ok().and_then(|c| renormalized_energy_plane(&c, &self.material).ok()),
            _ => None,
        };
        let t = self.t;
        self.record.energy.push(EnergySample { t, energy, power, dissipated: self.dissipated });
        self.record.samples.push(Sample { t, z: self.z.clone(), velocity, mode: self.mode() });
    }

    fn initial_step(&self) -> f64 {
        let c = &self.controls;
        let h = match self.rhs(&self.z) {
            Ok(e) => {
                let sc: Vec<f64> = self.z.iter().map(|x| c.atol + c.rtol * x.abs()).collect();
                let d0 = (self.z.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / sc.len() as f64).sqrt();
                let d1 = (e.v.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / sc.len() as f64).sqrt();
                if d0 < 1e-5 || d1 < 1e-5 {
                    1e-6
                } else {
                    0.01 * d0 / d1
                }
            }
            Err(_) => 1e-6,
        };
        h.min(c.dt_max).min(c.t_max)
    }

    fn set_surfaces(&mut self, surfaces: Vec<Surface>) {
        for (s, surf) in surfaces.iter().enumerate() {
            for m in &surf.members {
                self.motions[m.index] = Motion::Sliding { surface: s };
            }
        }
        self.surfaces = surfaces;
    }

    fn triggers(&self, z: &[f64]) -> Result<Vec<Trigger>, EvalError> {
        let geo = self.ctx.geometric(z, &self.controls);
        if !geo.is_empty() {
            return Ok(geo);
        }
        let e = self.rhs(z)?;
        let mut out = vec![];
        for (l, m) in self.motions.iter().enumerate() {
            match m {
                Motion::Glide(g) => {
                    if self.ctx.gap(e.j[l], &[*g]) < self.floors[l] {
                        out.push(Trigger::Gap(l));
                    }
                }
                Motion::Sliding { surface } => {
                    let mem = self.surfaces[*surface].members.iter().find(|m| m.index == l).expect("member");
                    if self.ctx.gap(e.j[l], &[mem.minus, mem.plus]) < self.floors[l] {
                        out.push(Trigger::Third(l));
                    }
                }
                Motion::Frozen => {}
            }
        }
        let margin = self.controls.exit_margin;
        for (s, a) in e.alpha.iter().enumerate() {
            if *a < margin {
                out.push(Trigger::AlphaLow(s));
            } else if *a > 1.0 - margin {
                out.push(Trigger::AlphaHigh(s));
            }
        }
        Ok(out)
    }

    fn any_triggered(&self, z: &[f64]) -> bool {
        self.triggers(z).map_or(true, |t| !t.is_empty())
    }

    fn reset_floors(&mut self) {
        let Ok(j) = self.ctx.engine.forces(&self.z) else { return };
        for (l, m) in self.motions.iter().enumerate() {
            let w = match m {
                Motion::Glide(g) => self.ctx.gap(j[l], &[*g]),
                Motion::Sliding { surface } => {
                    let mem = self.surfaces[*surface].members.iter().find(|m| m.index == l).expect("member");
                    self.ctx.gap(j[l], &[mem.minus, mem.plus])
                }
                Motion::Frozen => 0.0,
            };
            self.floors[l] = w.min(0.0) - WATCH_SLACK;
        }
    }

    /// Newton projection of the state back onto the sliding surfaces.
    fn project(&mut self) -> Result<(), Stop> {
        if self.surfaces.is_empty() {
            return Ok(());
        }
        let mut z = self.z.clone();
        for iter in 0..3 {
            let j = self.ctx.engine.forces(&z).map_err(|e| self.eval_stop(e.into()))?;
            let mut rows = vec![];
            let mut vals = vec![];
            let mut ok = true;
            for s in &self.surfaces {
                let p = s.primary();
                let (g, e) = self.ctx.surface_gradient(&z, &j, p).map_err(|e| self.eval_stop(e))?;
                let g0 = self.ctx.glide.get(p.plus) - self.ctx.glide.get(p.minus);
                ok &= e.abs() <= self.controls.drift_tol * j[p.index].norm() * g0.norm();
                rows.push(g);
                vals.push(e);
            }
            if (iter > 0 && ok) || vals.iter().all(|v| *v == 0.0) {
                break;
            }
            let k = rows.len();
            let y = match k {
                1 => vec![vals[0] / dot(&rows[0], &rows[0])],
                _ => {
                    let m = Matrix2::new(dot(&rows[0], &rows[0]), dot(&rows[0], &rows[1]), dot(&rows[1], &rows[0]), dot(&rows[1], &rows[1]));
                    match m.try_inverse() {
                        Some(inv) => {
                            let y = inv * Vector2::new(vals[0], vals[1]);
                            vec![y.x, y.y]
                        }
                        None => break,
                    }
                }
            };
            let mut next = z.clone();
            for (row, yi) in rows.iter().zip(&y) {
                for (zi, gi) in next.iter_mut().zip(row) {
                    *zi -= yi * gi;
                }
            }
            if self.ctx.engine.check_state(&next).is_err() {
                break;
            }
            z = next;
        }
        self.z = z;
        Ok(())
    }

    /// Two sliding surfaces whose normals have come together are slid on as
    /// one; the double system is singular there.
    fn merge_coincident(&mut self) -> Result<(), Stop> {
        if self.surfaces.len() != 2 {
            return Ok(());
        }
        let j = self.ctx.engine.forces(&self.z).map_err(|e| self.eval_stop(e.into()))?;
        let mut units = vec![];
        for s in &self.surfaces {
            let (g, _) = self.ctx.surface_gradient(&self.z, &j, s.primary()).map_err(|e| self.eval_stop(e))?;
            let mag = norm(&g);
            units.push(g.iter().map(|x| x / mag).collect::<Vec<f64>>());
        }
        let minus: Vec<f64> = units[0].iter().zip(&units[1]).map(|(a, b)| a - b).collect();
        let plus: Vec<f64> = units[0].iter().zip(&units[1]).map(|(a, b)| a + b).collect();
        let sign = if norm(&minus) < COINCIDENT_TOL {
            1.0
        } else if norm(&plus) < COINCIDENT_TOL {
            -1.0
        } else {
            return Ok(());
        };
        let primaries: Vec<usize> = self.surfaces.iter().map(|s| s.primary().index).collect();
        let mut members = self.surfaces[0].members.clone();
        members.extend(self.surfaces[1].members.iter().map(|m| Member { orient: m.orient * sign, ..*m }));
        members.sort_by_key(|m| m.index);
        let o = members[0].orient;
        for m in members.iter_mut() {
            m.orient *= o;
        }
        let merged = Surface { members };
        let p = *merged.primary();
        let partners = merged.indices()[1..].to_vec();
        self.set_surfaces(vec![merged]);
        self.emit(EventKind::DoubleSlipExit { first: primaries[0], second: primaries[1] });
        self.emit(EventKind::FineSlipEnter { index: p.index, minus: p.minus, plus: p.plus, partners });
        self.project()
    }

    /// Classifies a contact of the listed gliding dislocations with their
    /// tie surfaces, together with the surfaces already slid on.
    fn resolve(&mut self, contacts: &[usize], initial: bool) -> Result<(), Stop> {
        let z = self.z.clone();
        let j = self.ctx.engine.forces(&z).map_err(|e| self.eval_stop(e.into()))?;
        let mut groups: Vec<(Vec<Member>, Option<usize>)> = self.surfaces.iter().enumerate().map(|(i, s)| (s.members.clone(), Some(i))).collect();
        let mut normals = vec![];
        for (members, _) in &groups {
            let (g, _) = self.ctx.surface_gradient(&z, &j, &members[0]).map_err(|e| self.eval_stop(e))?;
            let mag = norm(&g);
            normals.push(g.iter().map(|x| x / mag).collect::<Vec<f64>>());
        }
        for &l in contacts {
            let (minus, plus) = self.ctx.top_pair(j[l], self.controls.tol_amb).map_err(|e| Stop::Fail(e.into()))?;
            let m = Member { index: l, minus, plus, orient: 1.0 };
            let (g, _) = self.ctx.surface_gradient(&z, &j, &m).map_err(|e| self.eval_stop(e))?;
            let mag = norm(&g);
            let n: Vec<f64> = g.iter().map(|x| x / mag).collect();
            let hit = normals.iter().enumerate().find_map(|(s, ns)| {
                let d: Vec<f64> = n.iter().zip(ns).map(|(a, b)| a - b).collect();
                let e: Vec<f64> = n.iter().zip(ns).map(|(a, b)| a + b).collect();
                if norm(&d) < COINCIDENT_TOL {
                    Some((s, 1.0))
                } else if norm(&e) < COINCIDENT_TOL {
                    Some((s, -1.0))
                } else {
                    None
                }
            });
            match hit {
                Some((s, orient)) => groups[s].0.push(Member { orient, ..m }),
                None => {
                    groups.push((vec![m], None));
                    normals.push(n);
                }
            }
        }
        if groups.len() > 2 {
            let mut indices: Vec<usize> = groups.iter().flat_map(|g| g.0.iter().map(|m| m.index)).collect();
            indices.sort_unstable();
            return Err(Stop::Terminal(EventKind::UnsupportedIntersection { indices }));
        }
        // lowest index becomes the primary
        for (members, _) in groups.iter_mut() {
            members.sort_by_key(|m| m.index);
            let o = members[0].orient;
            for m in members.iter_mut() {
                m.orient *= o;
            }
        }
        let candidates: Vec<Surface> = groups.iter().map(|g| Surface { members: g.0.clone() }).collect();
        let mut units = vec![];
        for s in &candidates {
            let (g, _) = self.ctx.surface_gradient(&z, &j, s.primary()).map_err(|e| self.eval_stop(e))?;
            let mag = norm(&g);
            units.push(g.iter().map(|x| x / mag).collect::<Vec<f64>>());
        }
        let mut motions = self.motions.clone();
        for s in &candidates {
            for m in &s.members {
                motions[m.index] = Motion::Frozen;
            }
        }
        let (base, deltas) = self.ctx.split(&j, &motions, &candidates);
        let choice = self.choose(&base, &deltas, &units, &candidates)?;

        let old_count = self.surfaces.len();
        let old_primaries: Vec<usize> = self.surfaces.iter().map(|s| s.primary().index).collect();
        let mut kept = vec![];
        let mut events = vec![];
        for ((s, (_, existing)), c) in candidates.iter().zip(&groups).zip(&choice) {
            match c {
                Choice::Slide => {
                    let same = existing.is_some_and(|e| self.surfaces[e].indices() == s.indices());
                    if !same {
                        let p = s.primary();
                        events.push(EventKind::FineSlipEnter { index: p.index, minus: p.minus, plus: p.plus, partners: s.indices()[1..].to_vec() });
                    }
                    kept.push(s.clone());
                }
                side => {
                    let plus_side = *side == Choice::Plus;
                    for m in &s.members {
                        let to = m.side(plus_side);
                        if let (Motion::Glide(from), false) = (self.motions[m.index], initial) {
                            if from != to {
                                events.insert(0, EventKind::CrossSlip { index: m.index, from, to });
                            }
                        }
                        self.motions[m.index] = Motion::Glide(to);
                    }
                    if existing.is_some() {
                        events.push(EventKind::FineSlipExit { index: s.primary().index, to: s.primary().side(plus_side), partners: s.indices()[1..].to_vec() });
                    }
                }
            }
        }
        if kept.len() == 2 && old_count < 2 {
            events.push(EventKind::DoubleSlipEnter { first: kept[0].primary().index, second: kept[1].primary().index });
        }
        if old_count == 2 && kept.len() < 2 {
            events.push(EventKind::DoubleSlipExit { first: old_primaries[0], second: old_primaries[1] });
        }
        self.set_surfaces(kept);
        for e in events {
            self.emit(e);
        }
        self.project()
    }

    /// Enumerates minus, plus and slide for every surface and keeps the
    /// self-consistent combination.
    fn choose(&self, base: &[f64], deltas: &[Vec<f64>], units: &[Vec<f64>], surfaces: &[Surface]) -> Result<Vec<Choice>, Stop> {
        let k = surfaces.len();
        let mut corner_max: f64 = 0.0;
        for mask in 0..1usize << k {
            let mut v = base.to_vec();
            for (s, d) in deltas.iter().enumerate() {
                if mask >> s & 1 == 1 {
                    v.iter_mut().zip(d).for_each(|(a, b)| *a += b);
                }
            }
            corner_max = corner_max.max(norm(&v));
        }
        let tau = 1e-10 * corner_max;
        let mut strict = vec![];
        let mut border = vec![];
        for code in 0..3usize.pow(k as u32) {
            let choice: Vec<Choice> = (0..k).map(|s| [Choice::Minus, Choice::Plus, Choice::Slide][code / 3usize.pow(s as u32) % 3]).collect();
            let mut v = base.to_vec();
            for (s, d) in deltas.iter().enumerate() {
                if choice[s] == Choice::Plus {
                    v.iter_mut().zip(d).for_each(|(a, b)| *a += b);
                }
            }
            let slide: Vec<usize> = (0..k).filter(|&s| choice[s] == Choice::Slide).collect();
            let g: Vec<&[f64]> = slide.iter().map(|&s| units[s].as_slice()).collect();
            let d: Vec<&[f64]> = slide.iter().map(|&s| deltas[s].as_slice()).collect();
            let Some(alpha) = solve_alphas(&g, &d, &v) else { continue };
            for (a, &s) in alpha.iter().zip(&slide) {
                v.iter_mut().zip(&deltas[s]).for_each(|(x, y)| *x += a * y);
            }
            let mut score = f64::INFINITY;
            for s in 0..k {
                let slack = match choice[s] {
                    Choice::Minus => -dot(&units[s], &v),
                    Choice::Plus => dot(&units[s], &v),
                    Choice::Slide => {
                        let a = alpha[slide.iter().position(|&x| x == s).unwrap()];
                        let jump = dot(&units[s], &deltas[s]).abs();
                        (a * jump).min((1.0 - a) * jump)
                    }
                };
                score = score.min(slack);
            }
            if score > tau {
                strict.push(choice.clone());
            }
            if score >= -tau {
                border.push((score, choice));
            }
        }
        match strict.len() {
            1 => return Ok(strict.remove(0)),
            0 => {}
            _ => {
                let index = (0..k).find(|&s| strict.iter().any(|c| c[s] != strict[0][s])).unwrap_or(0);
                return Err(Stop::Terminal(EventKind::SourcePoint { index: surfaces[index].primary().index }));
            }
        }
        // grazing contact: take the most consistent borderline combination
        border.sort_by(|a, b| b.0.total_cmp(&a.0));
        match border.into_iter().next() {
            Some((_, c)) => Ok(c),
            None => Err(Stop::Fail(SimError::ClassificationUncertain {
                t: self.t,
                indices: surfaces.iter().flat_map(|s| s.indices()).collect(),
            })),
        }
    }

    /// Handles every watcher that fires at the current state.
    fn handle_events(&mut self) -> Result<(), Stop> {
        for round in 0..16 {
            let trig = self.triggers(&self.z).map_err(|e| self.eval_stop(e))?;
            if let Some(&Trigger::Collision(first, second)) = trig.iter().find(|t| matches!(t, Trigger::Collision(..))) {
                return Err(Stop::Terminal(EventKind::Collision { first, second }));
            }
            if let Some(&Trigger::Boundary(index)) = trig.iter().find(|t| matches!(t, Trigger::Boundary(_))) {
                return Err(Stop::Terminal(EventKind::BoundaryCollision { index }));
            }
            if trig.iter().any(|t| matches!(t, Trigger::Third(_))) {
                return Err(Stop::Fail(InclusionError::Degenerate { count: 3 }.into()));
            }
            let exits: Vec<(usize, bool)> = trig
                .iter()
                .filter_map(|t| match t {
                    Trigger::AlphaLow(s) => Some((*s, false)),
                    Trigger::AlphaHigh(s) => Some((*s, true)),
                    _ => None,
                })
                .collect();
            let gaps: Vec<usize> = trig.iter().filter_map(|t| if let Trigger::Gap(l) = t { Some(*l) } else { None }).collect();
            if exits.is_empty() && gaps.is_empty() {
                return Ok(());
            }
            let mut excluded = vec![];
            if !exits.is_empty() {
                let double = self.surfaces.len() == 2;
                let primaries: Vec<usize> = self.surfaces.iter().map(|s| s.primary().index).collect();
                let mut remaining = vec![];
                let mut events = vec![];
                for (i, s) in std::mem::take(&mut self.surfaces).into_iter().enumerate() {
                    match exits.iter().find(|e| e.0 == i) {
                        Some(&(_, plus_side)) => {
                            for m in &s.members {
                                self.motions[m.index] = Motion::Glide(m.side(plus_side));
                                excluded.push(m.index);
                            }
                            events.push(EventKind::FineSlipExit { index: s.primary().index, to: s.primary().side(plus_side), partners: s.indices()[1..].to_vec() });
                        }
                        None => remaining.push(s),
                    }
                }
                if double {
                    events.push(EventKind::DoubleSlipExit { first: primaries[0], second: primaries[1] });
                }
                self.set_surfaces(remaining);
                for e in events {
                    self.emit(e);
                }
            }
            let j = self.ctx.engine.forces(&self.z).map_err(|e| self.eval_stop(e.into()))?;
            let mut contacts = gaps.clone();
            for (l, m) in self.motions.iter().enumerate() {
                if let Motion::Glide(g) = m {
                    if !contacts.contains(&l) && !excluded.contains(&l) && self.ctx.gap(j[l], &[*g]).abs() <= self.controls.tol_amb {
                        contacts.push(l);
                    }
                }
            }
            // after a first exit, ties left behind are resolved jointly
            // with the rest; resolving them one at a time can cycle
            if round == 0 {
                contacts.retain(|l| !excluded.contains(l));
            } else {
                for &l in &excluded {
                    if let Motion::Glide(g) = self.motions[l] {
                        if !contacts.contains(&l) && self.ctx.gap(j[l], &[g]).abs() <= self.controls.tol_amb {
                            contacts.push(l);
                        }
                    }
                }
            }
            contacts.sort_unstable();
            if !contacts.is_empty() || (!exits.is_empty() && !self.surfaces.is_empty()) {
                self.resolve(&contacts, false)?;
            }
            self.reset_floors();
        }
        Err(Stop::Fail(SimError::EventLoop { t: self.t }))
    }

    /// Freezes gliding dislocations whose force vanished and restarts
    /// frozen ones whose force came back.
    fn check_zero_force(&mut self) -> Result<(), Stop> {
        let j = self.ctx.engine.forces(&self.z).map_err(|e| self.eval_stop(e.into()))?;
        let eps = self.ctx.eps_zero(&self.z);
        let mut contacts = vec![];
        let mut changed = false;
        for l in 0..self.motions.len() {
            match self.motions[l] {
                Motion::Glide(_) if j[l].norm() < eps => {
                    self.motions[l] = Motion::Frozen;
                    self.emit(EventKind::ZeroForce { index: l });
                    changed = true;
                }
                Motion::Frozen if j[l].norm() >= eps => match select_glide(j[l], &self.ctx.glide, self.controls.tol_amb, eps).map_err(|e| Stop::Fail(e.into()))? {
                    GlideSelection::Unique(g) => {
                        self.motions[l] = Motion::Glide(g);
                        self.emit(EventKind::Resume { index: l, direction: g });
                        changed = true;
                    }
                    GlideSelection::Ambiguous(..) => contacts.push(l),
                    GlideSelection::Zero => {}
                },
                _ => {}
            }
        }
        if !contacts.is_empty() {
            self.resolve(&contacts, true)?;
            changed = true;
        }
        if changed {
            self.reset_floors();
        }
        Ok(())
    }

    /// One Dormand-Prince attempt; `Err` when a stage leaves the domain of
    /// the field.
    fn attempt(&self, z0: &[f64], k1: &[f64], h: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>, f64), EvalError> {
        let n = z0.len();
        let mut k: Vec<Vec<f64>> = vec![k1.to_vec()];
        for s in 1..7 {
            let y: Vec<f64> = (0..n).map(|i| z0[i] + h * (0..s).map(|r| dopri::A[s][r] * k[r][i]).sum::<f64>()).collect();
            k.push(self.rhs(&y)?.v);
        }
        let z1: Vec<f64> = (0..n).map(|i| z0[i] + h * (0..6).map(|r| dopri::A[6][r] * k[r][i]).sum::<f64>()).collect();
        let c = &self.controls;
        let mut acc = 0.0;
        for i in 0..n {
            let e = h * (0..7).map(|s| dopri::E[s] * k[s][i]).sum::<f64>();
            let sc = c.atol + c.rtol * z0[i].abs().max(z1[i].abs());
            acc += (e / sc).powi(2);
        }
        Ok((z1, k, (acc / n as f64).sqrt()))
    }

    fn advance(&mut self) -> Result<(), Stop> {
        let c = self.controls.clone();
        let t0 = self.t;
        let hmin = 16.0 * f64::EPSILON * t0.abs().max(1.0);
        if t0 >= c.t_max || c.t_max - t0 <= hmin {
            return Err(Stop::Terminal(EventKind::MaxTime));
        }
        if self.record.accepted >= c.max_steps {
            return Err(Stop::Fail(SimError::MaxSteps(c.max_steps)));
        }
        let z0 = self.z.clone();
        let e0 = self.rhs(&z0).map_err(|e| self.eval_stop(e))?;
        let p0 = e0.power();
        let mut h = self.h.min(c.dt_max).min(c.t_max - t0);
        let mut retried = false;
        let (z1, k, err) = loop {
            if h < hmin {
                if let Some(kind) = self.ctx.imminent(&z0, &e0.v, 1024.0 * hmin, &c) {
                    return Err(Stop::Terminal(kind));
                }
                return Err(Stop::Fail(SimError::StepUnderflow { t: t0, h }));
            }
            match self.attempt(&z0, &e0.v, h) {
                Err(_) => {
                    h *= 0.25;
                    retried = true;
                    self.record.rejected += 1;
                }
                Ok((z1, k, err)) if err <= 1.0 => break (z1, k, err),
                Ok((_, _, err)) => {
                    h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                    retried = true;
                    self.record.rejected += 1;
                }
            }
        };
        let dense = Dense::new(&z0, &z1, &k, h);
        let hit = if self.any_triggered(&dense.at(0.5)) {
            Some((0.0, 0.5))
        } else if self.any_triggered(&z1) {
            Some((0.5, 1.0))
        } else {
            None
        };
        let (t1, z_new) = match hit {
            None => (t0 + h, z1),
            Some((mut lo, mut hi)) => {
                let tol = 1e-12 * t0.abs().max(1.0) / h;
                while hi - lo > tol {
                    let mid = 0.5 * (lo + hi);
                    if self.any_triggered(&dense.at(mid)) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                if hi == 1.0 {
                    (t0 + h, z1)
                } else {
                    (t0 + hi * h, dense.at(hi))
                }
            }
        };
        self.t = t1;
        self.z = z_new;
        self.record.accepted += 1;
        if !self.surfaces.is_empty() {
            self.project()?;
            if self.ctx.geometric(&self.z, &c).is_empty() {
                self.merge_coincident()?;
            }
        }
        let p1 = self.rhs(&self.z).map(|e| e.power()).unwrap_or(p0);
        self.dissipated += 0.5 * (p0 + p1) * (t1 - t0);
        // no growth right after a rejection
        let grow = if retried { 1.0 } else { 5.0 };
        let fac = if err == 0.0 { grow } else { (0.9 * err.powf(-0.2)).clamp(0.2, grow) };
        self.h = if hit.is_some() { h } else { h * fac };
        self.handle_events()?;
        self.check_zero_force()?;
        self.push_sample();
        if self.t >= c.t_max {
            return Err(Stop::Terminal(EventKind::MaxTime));
        }
        Ok(())
    }
}

/// Runs to a terminal event with linear kinetics.
pub fn simulate(domain: &Domain, config: &Configuration, material: &Material, glide: &GlideSet, controls: &Controls) -> Result<SimulationRecord, SimError> {
    simulate_with(domain, config, material, glide, Kinetics::linear(glide.len()), controls)
}

/// Runs to a terminal event with the given speed law.
pub fn simulate_with(domain: &Domain, config: &Configuration, material: &Material, glide: &GlideSet, kinetics: Kinetics, controls: &Controls) -> Result<SimulationRecord, SimError> {
    Ok(Simulator::new(domain, config, material, glide, kinetics, controls.clone())?.run())
}

/// Distance in state space from the configuration to the set where two
/// dislocations meet or one touches the boundary.
pub fn forbidden_distance(domain: &Domain, config: &Configuration) -> f64 {
    let mut d = f64::INFINITY;
    let p = config.positions();
    for (i, a) in p.iter().enumerate() {
        if !matches!(domain, Domain::Plane) {
            d = d.min(domain.boundary_distance(*a));
        }
        for b in &p[i + 1..] {
            d = d.min((a - b).norm() / std::f64::consts::SQRT_2);
        }
    }
    d
}

/// Lower bound `r0/m0` on the existence time, with `m0` the largest
/// `(Σ|j_ℓ|²)^{1/2}` sampled on the closed ball of radius `r0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExistenceBound {
    pub r0: f64,
    pub dist: f64,
    pub m0: f64,
    /// `+∞` when every sampled force vanishes.
    pub t_min: f64,
    pub samples: usize,
}

pub const EXISTENCE_SAMPLES: usize = 2048;

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut k = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= k).all(|p| !k.is_multiple_of(*p)) {
            out.push(k);
        }
        k += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Samples the center and [`EXISTENCE_SAMPLES`] Halton points of the ball.
/// The estimate is not rigorous: the true maximum may sit between samples.
pub fn existence_bound(domain: &Domain, config: &Configuration, material: &Material, r0: f64) -> Result<ExistenceBound, SimError> {
    let dist = forbidden_distance(domain, config);
    if !(r0 > 0.0 && r0 < dist) {
        return Err(SimError::Radius { r0, dist });
    }
    let engine = ForceEngine::for_config(domain, config, material)?;
    let z0 = config.state();
    let dim = z0.len();
    let mag = |z: &[f64]| -> Result<f64, SimError> { Ok(engine.forces(z)?.iter().map(|j| j.norm_squared()).sum::<f64>().sqrt()) };
    let mut m0 = mag(&z0)?;
    let bases = primes(dim + 1);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    for i in 1..=EXISTENCE_SAMPLES as u64 {
        let dir: Vec<f64> = bases[..dim].iter().map(|&b| normal.inverse_cdf(radical_inverse(i, b).clamp(1e-12, 1.0 - 1e-12))).collect();
        let len = norm(&dir);
        if len == 0.0 {
            continue;
        }
        let r = r0 * radical_inverse(i, bases[dim]).powf(1.0 / dim as f64);
        let z: Vec<f64> = z0.iter().zip(&dir).map(|(a, d)| a + r * d / len).collect();
        m0 = m0.max(mag(&z)?);
    }
    let t_min = if m0 > 0.0 { r0 / m0 } else { f64::INFINITY };
    Ok(ExistenceBound { r0, dist, m0, t_min, samples: EXISTENCE_SAMPLES + 1 })
}
