//! Shared domain types: material, glide directions, dislocations, domains.
//!
//! Everything here is an immutable value after construction. Constructors
//! validate their invariants, and deserialization goes through the same
//! constructors so a parsed value is always valid.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

/// Tolerance for unit length and duplicate checks on glide directions.
const GLIDE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("material parameters must be finite and positive (mu = {mu}, lambda = {lambda})")]
    Material { mu: f64, lambda: f64 },
    #[error("glide direction {index} is zero or not finite")]
    ZeroGlide { index: usize },
    #[error("glide directions {first} and {second} coincide")]
    DuplicateGlide { first: usize, second: usize },
    #[error("glide set is not closed under negation: -({x}, {y}) is missing for direction {index}")]
    NotNegationClosed { index: usize, x: f64, y: f64 },
    #[error("glide directions do not span the plane")]
    NotSpanning,
    #[error("burgers modulus of dislocation {index} must be finite and nonzero")]
    Burgers { index: usize },
    #[error("position of dislocation {index} is not finite")]
    Position { index: usize },
    #[error("state vector has length {got}, expected {expected}")]
    StateLength { got: usize, expected: usize },
    #[error("invalid boundary curve: {0}")]
    Boundary(String),
}

/// Elastic constants of the antiplane problem.
///
/// The tensor is `L = diag(mu, mu·lambda²)`; `lambda = 1` is the isotropic case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaterialRaw", into = "MaterialRaw")]
pub struct Material {
    mu: f64,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct MaterialRaw {
    mu: f64,
    lambda: f64,
}

impl TryFrom<MaterialRaw> for Material {
    type Error = TypeError;
    fn try_from(raw: MaterialRaw) -> Result<Self, TypeError> {
        Material::new(raw.mu, raw.lambda)
    }
}

impl From<Material> for MaterialRaw {
    fn from(m: Material) -> Self {
        MaterialRaw { mu: m.mu, lambda: m.lambda }
    }
}

impl Material {
    pub fn new(mu: f64, lambda: f64) -> Result<Self, TypeError> {
        if !(mu.is_finite() && lambda.is_finite() && mu > 0.0 && lambda > 0.0) {
            return Err(TypeError::Material { mu, lambda });
        }
        Ok(Material { mu, lambda })
    }

    pub fn isotropic() -> Self {
        Material { mu: 1.0, lambda: 1.0 }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_unit(&self) -> bool {
        self.mu == 1.0 && self.lambda == 1.0
    }

    /// The elasticity tensor `L`.
    pub fn tensor(&self) -> Matrix2<f64> {
        Matrix2::new(self.mu, 0.0, 0.0, self.mu * self.lambda * self.lambda)
    }

    /// `L h` without building the matrix.
    pub fn apply(&self, h: Vec2) -> Vec2 {
        Vec2::new(self.mu * h.x, self.mu * self.lambda * self.lambda * h.y)
    }
}

impl Default for Material {
    fn default() -> Self {
        Material::isotropic()
    }
}

/// Finite set of unit glide directions, closed under negation and spanning R².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct GlideSet {
    directions: Vec<Vec2>,
}

impl TryFrom<Vec<Vec2>> for GlideSet {
    type Error = TypeError;
    fn try_from(v: Vec<Vec2>) -> Result<Self, TypeError> {
        GlideSet::new(&v)
    }
}

impl From<GlideSet> for Vec<Vec2> {
    fn from(g: GlideSet) -> Self {
        g.directions
    }
}

impl GlideSet {
    /// Normalizes the given vectors and checks every invariant.
    pub fn new(vectors: &[Vec2]) -> Result<Self, TypeError> {
        let directions = normalize_all(vectors)?;
        for (i, g) in directions.iter().enumerate() {
            for (k, h) in directions.iter().enumerate().skip(i + 1) {
                if (g - h).norm() <= GLIDE_TOL {
                    return Err(TypeError::DuplicateGlide { first: i, second: k });
                }
            }
        }
        for (i, g) in directions.iter().enumerate() {
            if !directions.iter().any(|h| (g + h).norm() <= GLIDE_TOL) {
                return Err(TypeError::NotNegationClosed { index: i, x: vectors[i].x, y: vectors[i].y });
            }
        }
        let spans = directions
            .iter()
            .any(|g| directions.iter().any(|h| cross(*g, *h).abs() > 1e-9));
        if !spans {
            return Err(TypeError::NotSpanning);
        }
        Ok(GlideSet { directions })
    }

    /// Like [`GlideSet::new`] but first appends every missing negation,
    /// in input order, after the given vectors.
    pub fn with_negations(vectors: &[Vec2]) -> Result<Self, TypeError> {
        let mut all = normalize_all(vectors)?;
        let given = all.len();
        for i in 0..given {
            let neg = -all[i];
            if !all.iter().any(|h| (neg - h).norm() <= GLIDE_TOL) {
                all.push(neg);
            }
        }
        GlideSet::new(&all)
    }

    /// Directions at the given angles in degrees, closed under negation.
    pub fn from_angles_deg(angles: &[f64]) -> Result<Self, TypeError> {
        let v: Vec<Vec2> = angles
            .iter()
            .map(|a| {
                let r = a * PI / 180.0;
                Vec2::new(r.cos(), r.sin())
            })
            .collect();
        GlideSet::with_negations(&v)
    }

    /// `{±e1, ±e2}`.
    pub fn axes() -> Self {
        GlideSet::with_negations(&[Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]).unwrap()
    }

    /// `{±g1, ±g2}` with `g1 = (1,1)/√2` and `g2 = (1,-1)/√2`.
    pub fn diagonals() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        GlideSet::with_negations(&[Vec2::new(s, s), Vec2::new(s, -s)]).unwrap()
    }

    /// `{±e1, ±e2, ±(e1+e2)/√2}`, six directions.
    pub fn axes_and_diagonal() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        GlideSet::with_negations(&[Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(s, s)]).unwrap()
    }

    pub fn directions(&self) -> &[Vec2] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn get(&self, i: usize) -> Vec2 {
        self.directions[i]
    }

    /// Index of the direction equal to `g` within tolerance.
    pub fn index_of(&self, g: Vec2) -> Option<usize> {
        self.directions.iter().position(|h| (g - h).norm() <= 1e-9)
    }

    /// Largest half-angle between angularly adjacent directions.
    pub fn max_half_gap(&self) -> f64 {
        let mut angles: Vec<f64> = self.directions.iter().map(|g| g.y.atan2(g.x)).collect();
        angles.sort_by(|a, b| a.total_cmp(b));
        let mut gap: f64 = angles[0] + 2.0 * PI - angles[angles.len() - 1];
        for w in angles.windows(2) {
            gap = gap.max(w[1] - w[0]);
        }
        0.5 * gap
    }
}

fn normalize_all(vectors: &[Vec2]) -> Result<Vec<Vec2>, TypeError> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let n = v.norm();
            if !n.is_finite() || n == 0.0 {
                Err(TypeError::ZeroGlide { index: i })
            } else {
                Ok(v / n)
            }
        })
        .collect()
}

/// z-component of the cross product `a × b`.
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dislocation {
    pub position: Vec2,
    pub burgers: f64,
}

impl Dislocation {
    pub fn new(x: f64, y: f64, burgers: f64) -> Self {
        Dislocation { position: Vec2::new(x, y), burgers }
    }
}

/// Ordered list of dislocations. The flat state vector interleaves
/// coordinates as `(x1, y1, x2, y2, ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Dislocation>", into = "Vec<Dislocation>")]
pub struct Configuration {
    dislocations: Vec<Dislocation>,
}

impl TryFrom<Vec<Dislocation>> for Configuration {
    type Error = TypeError;
    fn try_from(v: Vec<Dislocation>) -> Result<Self, TypeError> {
        Configuration::new(v)
    }
}

impl From<Configuration> for Vec<Dislocation> {
    fn from(c: Configuration) -> Self {
        c.dislocations
    }
}

impl Configuration {
    pub fn new(dislocations: Vec<Dislocation>) -> Result<Self, TypeError> {
        for (i, d) in dislocations.iter().enumerate() {
            if !(d.burgers.is_finite() && d.burgers != 0.0) {
                return Err(TypeError::Burgers { index: i });
            }
            if !(d.position.x.is_finite() && d.position.y.is_finite()) {
                return Err(TypeError::Position { index: i });
            }
        }
        Ok(Configuration { dislocations })
    }

    /// Convenience constructor from `(x, y, b)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self, TypeError> {
        Configuration::new(triples.iter().map(|&(x, y, b)| Dislocation::new(x, y, b)).collect())
    }

    pub fn empty() -> Self {
        Configuration { dislocations: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.dislocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dislocations.is_empty()
    }

    pub fn dislocations(&self) -> &[Dislocation] {
        &self.dislocations
    }

    pub fn position(&self, i: usize) -> Vec2 {
        self.dislocations[i].position
    }

    pub fn burgers(&self, i: usize) -> f64 {
        self.dislocations[i].burgers
    }

    pub fn burgers_all(&self) -> Vec<f64> {
        self.dislocations.iter().map(|d| d.burgers).collect()
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.dislocations.iter().map(|d| d.position).collect()
    }

    pub fn state(&self) -> Vec<f64> {
        self.dislocations.iter().flat_map(|d| [d.position.x, d.position.y]).collect()
    }

    /// Same moduli at the positions given by a flat state vector.
    pub fn with_state(&self, z: &[f64]) -> Result<Self, TypeError> {
        if z.len() != 2 * self.len() {
            return Err(TypeError::StateLength { got: z.len(), expected: 2 * self.len() });
        }
        let dislocations = self
            .dislocations
            .iter()
            .enumerate()
            .map(|(i, d)| Dislocation { position: Vec2::new(z[2 * i], z[2 * i + 1]), burgers: d.burgers })
            .collect();
        Configuration::new(dislocations)
    }

    /// Concatenation of two configurations.
    pub fn union(&self, other: &Configuration) -> Configuration {
        let mut d = self.dislocations.clone();
        d.extend_from_slice(&other.dislocations);
        Configuration { dislocations: d }
    }

    /// Largest pairwise distance, zero for fewer than two dislocations.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.dislocations.iter().enumerate() {
            for b in &self.dislocations[i + 1..] {
                d = d.max((a.position - b.position).norm());
            }
        }
        d
    }

    /// Smallest pairwise distance, infinite for fewer than two dislocations.
    pub fn min_pair_distance(&self) -> f64 {
        let mut d = f64::INFINITY;
        for (i, a) in self.dislocations.iter().enumerate() {
            for b in &self.dislocations[i + 1..] {
                d = d.min((a.position - b.position).norm());
            }
        }
        d
    }
}

/// A closed, simple, counterclockwise polyline with outward unit normals
/// at each sample point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveRaw", into = "CurveRaw")]
pub struct BoundaryCurve {
    points: Vec<Vec2>,
    normals: Vec<Vec2>,
    weights: Vec<f64>,
    centroid: Vec2,
    mean_radius: f64,
    perimeter: f64,
}

#[derive(Serialize, Deserialize)]
struct CurveRaw {
    vertices: Vec<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spacing: Option<f64>,
}

impl TryFrom<CurveRaw> for BoundaryCurve {
    type Error = TypeError;
    fn try_from(raw: CurveRaw) -> Result<Self, TypeError> {
        BoundaryCurve::new(&raw.vertices, raw.spacing)
    }
}

impl From<BoundaryCurve> for CurveRaw {
    fn from(c: BoundaryCurve) -> Self {
        CurveRaw { vertices: c.points, spacing: None }
    }
}

impl BoundaryCurve {
    /// Builds the curve from polyline vertices. A repeated closing vertex is
    /// dropped and clockwise input is reversed. With `spacing`, the polyline
    /// is resampled at equal arc length steps no longer than `spacing`,
    /// starting at the first vertex.
    pub fn new(vertices: &[Vec2], spacing: Option<f64>) -> Result<Self, TypeError> {
        let mut v: Vec<Vec2> = vertices.to_vec();
        if v.len() >= 2 && (v[0] - v[v.len() - 1]).norm() == 0.0 {
            v.pop();
        }
        if v.len() < 3 {
            return Err(TypeError::Boundary("need at least 3 distinct vertices".into()));
        }
        if v.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(TypeError::Boundary("vertex not finite".into()));
        }
        let n = v.len();
        for i in 0..n {
            if (v[(i + 1) % n] - v[i]).norm() == 0.0 {
                return Err(TypeError::Boundary(format!("vertices {i} and {} coincide", (i + 1) % n)));
            }
        }
        let area = signed_area(&v);
        if area == 0.0 {
            return Err(TypeError::Boundary("polyline encloses no area".into()));
        }
        if area < 0.0 {
            v.reverse();
        }
        if let Some((a, b)) = first_self_intersection(&v) {
            return Err(TypeError::Boundary(format!("edges {a} and {b} intersect")));
        }
        let centroid = polygon_centroid(&v);

        let (points, normals) = match spacing {
            None => {
                let normals = (0..n).map(|i| vertex_normal(&v, i)).collect();
                (v, normals)
            }
            Some(h) => {
                if !(h.is_finite() && h > 0.0) {
                    return Err(TypeError::Boundary("spacing must be positive".into()));
                }
                resample(&v, h)
            }
        };
        let m = points.len();
        let weights = (0..m)
            .map(|i| 0.5 * ((points[i] - points[(i + m - 1) % m]).norm() + (points[(i + 1) % m] - points[i]).norm()))
            .collect::<Vec<f64>>();
        let perimeter = weights.iter().sum();
        let mean_radius = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / m as f64;
        Ok(BoundaryCurve { points, normals, weights, centroid, mean_radius, perimeter })
    }

    /// Regular polygon with `n` vertices inscribed in the circle of the given
    /// center and radius.
    pub fn regular_polygon(center: Vec2, radius: f64, n: usize) -> Result<Self, TypeError> {
        let v: Vec<Vec2> = (0..n)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / n as f64;
                center + radius * Vec2::new(th.cos(), th.sin())
            })
            .collect();
        BoundaryCurve::new(&v, None)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn normals(&self) -> &[Vec2] {
        &self.normals
    }

    /// Arc length attributed to each sample point.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn centroid(&self) -> Vec2 {
        self.centroid
    }

    pub fn mean_radius(&self) -> f64 {
        self.mean_radius
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    /// Point-in-polygon test by crossing number; boundary points count as outside.
    pub fn contains(&self, p: Vec2) -> bool {
        if self.distance(p) == 0.0 {
            return false;
        }
        let n = self.points.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if x > p.x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Euclidean distance from `p` to the polyline.
    pub fn distance(&self, p: Vec2) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| segment_distance(p, self.points[i], self.points[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn signed_area(v: &[Vec2]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>()
}

fn polygon_centroid(v: &[Vec2]) -> Vec2 {
    let n = v.len();
    let a = signed_area(v);
    let mut c = Vec2::zeros();
    for i in 0..n {
        let p = v[i];
        let q = v[(i + 1) % n];
        c += (p + q) * cross(p, q);
    }
    c / (6.0 * a)
}

fn edge_normal(a: Vec2, b: Vec2) -> Vec2 {
    let t = (b - a).normalize();
    Vec2::new(t.y, -t.x)
}

fn vertex_normal(v: &[Vec2], i: usize) -> Vec2 {
    let n = v.len();
    let prev = edge_normal(v[(i + n - 1) % n], v[i]);
    let next = edge_normal(v[i], v[(i + 1) % n]);
    let s = prev + next;
    if s.norm() < 1e-12 {
        next
    } else {
        s.normalize()
    }
}

fn resample(v: &[Vec2], h: f64) -> (Vec<Vec2>, Vec<Vec2>) {
    let n = v.len();
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        cum[i + 1] = cum[i] + (v[(i + 1) % n] - v[i]).norm();
    }
    let total = cum[n];
    let m = ((total / h).ceil() as usize).max(3);
    let step = total / m as f64;
    let snap = 1e-9 * step;
    let mut points = Vec::with_capacity(m);
    let mut normals = Vec::with_capacity(m);
    let mut edge = 0;
    for k in 0..m {
        let s = k as f64 * step;
        while edge + 1 < n && cum[edge + 1] <= s {
            edge += 1;
        }
        let a = v[edge];
        let b = v[(edge + 1) % n];
        let len = cum[edge + 1] - cum[edge];
        let local = s - cum[edge];
        if local <= snap {
            points.push(a);
            normals.push(vertex_normal(v, edge));
        } else if len - local <= snap {
            points.push(b);
            normals.push(vertex_normal(v, (edge + 1) % n));
        } else {
            points.push(a + (b - a) * (local / len));
            normals.push(edge_normal(a, b));
        }
    }
    (points, normals)
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let o = |a: Vec2, b: Vec2, c: Vec2| cross(b - a, c - a);
    let d1 = o(q1, q2, p1);
    let d2 = o(q1, q2, p2);
    let d3 = o(p1, p2, q1);
    let d4 = o(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Vec2, b: Vec2, c: Vec2| {
        c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
    };
    (d1 == 0.0 && on(q1, q2, p1))
        || (d2 == 0.0 && on(q1, q2, p2))
        || (d3 == 0.0 && on(p1, p2, q1))
        || (d4 == 0.0 && on(p1, p2, q2))
}

fn first_self_intersection(v: &[Vec2]) -> Option<(usize, usize)> {
    let n = v.len();
    for i in 0..n {
        for k in i + 2..n {
            if i == 0 && k == n - 1 {
                continue;
            }
            if segments_intersect(v[i], v[(i + 1) % n], v[k], v[(k + 1) % n]) {
                return Some((i, k));
            }
        }
    }
    None
}

/// The region occupied by the crystal cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    UnitDisk,
    HalfPlane,
    Plane,
    Polygon {
        boundary: BoundaryCurve,
        #[serde(default = "default_charges")]
        n_charges: usize,
    },
}

fn default_charges() -> usize {
    128
}

impl Domain {
    pub fn polygon(boundary: BoundaryCurve) -> Self {
        Domain::Polygon { boundary, n_charges: default_charges() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Domain::UnitDisk => "unit_disk",
            Domain::HalfPlane => "half_plane",
            Domain::Plane => "plane",
            Domain::Polygon { .. } => "polygon",
        }
    }

    /// Signed distance to the boundary: positive inside, negative outside,
    /// infinite for the plane.
    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        match self {
            Domain::UnitDisk => 1.0 - p.norm(),
            Domain::HalfPlane => p.y,
            Domain::Plane => f64::INFINITY,
            Domain::Polygon { boundary, .. } => {
                let d = boundary.distance(p);
                if boundary.contains(p) {
                    d
                } else {
                    -d
                }
            }
        }
    }

    /// Whether `p` lies in the open domain.
    pub fn contains(&self, p: Vec2) -> bool {
        match self {
            Domain::Polygon { boundary, .. } => boundary.contains(p),
            _ => self.boundary_distance(p) > 0.0,
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Domain::UnitDisk | Domain::Polygon { .. })
    }
}

/// Outcome of [`validate_configuration`]. Indices are zero-based; the
/// `Display` form numbers dislocations from one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub collisions: Vec<(usize, usize)>,
    /// Dislocations closer than the tolerance to the boundary, or outside,
    /// with their signed boundary distance.
    pub boundary: Vec<(usize, f64)>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.collisions.is_empty() && self.boundary.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "OK");
        }
        let mut parts = Vec::new();
        for (i, j) in &self.collisions {
            parts.push(format!("dislocations {} and {} collide", i + 1, j + 1));
        }
        for (i, d) in &self.boundary {
            if *d <= 0.0 {
                parts.push(format!("dislocation {} lies outside the domain", i + 1));
            } else {
                parts.push(format!("dislocation {} is within {d:e} of the boundary", i + 1));
            }
        }
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks pairwise separation and distance to the boundary.
pub fn validate_configuration(domain: &Domain, config: &Configuration, eps_coll: f64, eps_bdry: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = config.len();
    for i in 0..n {
        for j in i + 1..n {
            if (config.position(i) - config.position(j)).norm() < eps_coll {
                report.collisions.push((i, j));
            }
        }
    }
    for i in 0..n {
        let p = config.position(i);
        let d = domain.boundary_distance(p);
        if d < eps_bdry || !domain.contains(p) {
            report.boundary.push((i, d));
        }
    }
    report
}
