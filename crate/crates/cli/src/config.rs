//! Run configuration: a JSON document describing domain, material, glide
//! set, dislocations, kinetics, controls and output. See `docs/config.md`.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use screwdyn::inclusion::Kinetics;
use screwdyn::integrator::Controls;
use screwdyn::types::{validate_configuration, BoundaryCurve, TypeError};
use screwdyn::{Configuration, Dislocation, Domain, GlideSet, Material, Vec2};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    /// Malformed JSON or a field of the wrong shape; line and column are
    /// one-based.
    #[error("{line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    /// Well-formed but invalid; `at` is a JSON path such as `dislocations[2].burgers`.
    #[error("{at}: {message}")]
    Invalid { at: String, message: String },
}

fn invalid(at: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { at: at.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Plane,
    HalfPlane,
    UnitDisk,
    Polygon {
        vertices: Vec<[f64; 2]>,
        /// Resampling spacing along the boundary; the vertices are used
        /// as given when absent.
        #[serde(default)]
        spacing: Option<f64>,
        #[serde(default = "default_charges")]
        n_charges: usize,
    },
}

fn default_charges() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "one")]
    pub lambda: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for MaterialSpec {
    fn default() -> Self {
        MaterialSpec { mu: 1.0, lambda: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlideSpec {
    /// Direction vectors; normalized on load.
    #[serde(default)]
    pub directions: Vec<[f64; 2]>,
    /// Directions by angle in degrees; always closed under negation.
    #[serde(default)]
    pub angles_deg: Vec<f64>,
    #[serde(default)]
    pub close_under_negation: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DislocationSpec {
    pub position: [f64; 2],
    pub burgers: f64,
}

/// Speed law `M(g)[max{j·g − P(g), 0}]^p`, tables in glide-set order.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticsSpec {
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default, rename = "M")]
    pub mobility: Option<Vec<f64>>,
    #[serde(default, rename = "P")]
    pub threshold: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<String>,
    /// Keep every `stride`-th trajectory sample; the last one is always kept.
    #[serde(default = "one_usize")]
    pub stride: usize,
}

fn one_usize() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: None, stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    #[serde(default)]
    pub material: MaterialSpec,
    pub glide: GlideSpec,
    pub dislocations: Vec<DislocationSpec>,
    #[serde(default)]
    pub kinetics: Option<KineticsSpec>,
    #[serde(default)]
    pub controls: Controls,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Everything a run needs, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub domain: Domain,
    pub material: Material,
    pub glide: GlideSet,
    pub config: Configuration,
    pub kinetics: Kinetics,
    pub controls: Controls,
    pub stride: usize,
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Syntax { line: e.line(), column: e.column(), message: e.to_string() })
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse(&text)
}

impl RunConfig {
    pub fn build(&self) -> Result<Problem, ConfigError> {
        let material = Material::new(self.material.mu, self.material.lambda).map_err(|e| invalid("material", e.to_string()))?;
        let domain = match &self.domain {
            DomainSpec::Plane => Domain::Plane,
            DomainSpec::HalfPlane => Domain::HalfPlane,
            DomainSpec::UnitDisk => Domain::UnitDisk,
            DomainSpec::Polygon { vertices, spacing, n_charges } => {
                let v: Vec<Vec2> = vertices.iter().map(|p| Vec2::new(p[0], p[1])).collect();
                let curve = BoundaryCurve::new(&v, *spacing).map_err(|e| invalid("domain.vertices", e.to_string()))?;
                if *n_charges == 0 {
                    return Err(invalid("domain.n_charges", "must be positive"));
                }
                Domain::Polygon { boundary: curve, n_charges: *n_charges }
            }
        };
        let glide = self.glide_set()?;
        let dislocations: Vec<Dislocation> = self.dislocations.iter().map(|d| Dislocation::new(d.position[0], d.position[1], d.burgers)).collect();
        let config = Configuration::new(dislocations).map_err(|e| match e {
            TypeError::Burgers { index } => invalid(format!("dislocations[{index}].burgers"), "must be finite and nonzero"),
            TypeError::Position { index } => invalid(format!("dislocations[{index}].position"), "must be finite"),
            other => invalid("dislocations", other.to_string()),
        })?;
        if config.is_empty() {
            return Err(invalid("dislocations", "at least one dislocation is required"));
        }
        let kinetics = match &self.kinetics {
            None => Kinetics::linear(glide.len()),
            Some(k) => {
                let m = k.mobility.clone().unwrap_or_else(|| vec![1.0; glide.len()]);
                let p = k.threshold.clone().unwrap_or_else(|| vec![0.0; glide.len()]);
                Kinetics::new(k.p, m, p, &glide).map_err(|e| invalid("kinetics", format!("{e} (tables follow the closed glide set of {} directions)", glide.len())))?
            }
        };
        self.controls.validate().map_err(|e| invalid("controls", e.to_string()))?;
        let report = validate_configuration(&domain, &config, self.controls.eps_coll, self.controls.eps_bdry);
        if !report.is_ok() {
            let at = match (report.collisions.first(), report.boundary.first()) {
                (Some(&(i, _)), _) | (None, Some(&(i, _))) => format!("dislocations[{i}]"),
                _ => "dislocations".into(),
            };
            return Err(invalid(at, report.to_string()));
        }
        if self.output.stride == 0 {
            return Err(invalid("output.stride", "must be positive"));
        }
        Ok(Problem { domain, material, glide, config, kinetics, controls: self.controls.clone(), stride: self.output.stride })
    }

    fn glide_set(&self) -> Result<GlideSet, ConfigError> {
        let g = &self.glide;
        match (g.directions.is_empty(), g.angles_deg.is_empty()) {
            (false, false) => return Err(invalid("glide", "give either directions or angles_deg, not both")),
            (true, true) => return Err(invalid("glide", "no glide directions given")),
            (true, false) => return GlideSet::from_angles_deg(&g.angles_deg).map_err(|e| invalid("glide.angles_deg", e.to_string())),
            (false, true) => {}
        }
        let v: Vec<Vec2> = g.directions.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        let built = if g.close_under_negation { GlideSet::with_negations(&v) } else { GlideSet::new(&v) };
        built.map_err(|e| match e {
            TypeError::NotNegationClosed { index, x, y } => invalid(
                format!("glide.directions[{index}]"),
                format!("the negation of ({x}, {y}) is missing; add it or set close_under_negation"),
            ),
            TypeError::ZeroGlide { index } => invalid(format!("glide.directions[{index}]"), "zero or not finite"),
            TypeError::DuplicateGlide { first, second } => invalid(format!("glide.directions[{second}]"), format!("duplicates direction {first}")),
            other => invalid("glide.directions", other.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAIR: &str = r#"{
        "domain": {"kind": "plane"},
        "glide": {"angles_deg": [45, -45]},
        "dislocations": [
            {"position": [0, 0], "burgers": 1},
            {"position": [1, 0], "burgers": -1}
        ]
    }"#;

    #[test]
    fn minimal_config_builds() {
        let p = parse(PAIR).unwrap().build().unwrap();
        assert_eq!(p.glide.len(), 4);
        assert_eq!(p.config.len(), 2);
        assert!(p.kinetics.is_linear());
        assert_eq!(p.controls, Controls::default());
        assert_eq!(p.stride, 1);
    }

    #[test]
    fn syntax_errors_are_located() {
        let bad = "{\n  \"domain\": {\"kind\": \"plane\"},\n  \"glide\": 3\n}";
        match parse(bad) {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let unknown = PAIR.replace("\"glide\"", "\"glyde\"");
        assert!(matches!(parse(&unknown), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn open_glide_set_names_the_vector() {
        let text = PAIR.replace(r#"{"angles_deg": [45, -45]}"#, r#"{"directions": [[1, 0], [-1, 0], [0, 2]]}"#);
        let err = parse(&text).unwrap().build().unwrap_err().to_string();
        assert!(err.starts_with("glide.directions[2]"), "{err}");
        assert!(err.contains("(0, 2)"), "{err}");
        let closed = text.replace("]]}", "]], \"close_under_negation\": true}");
        assert_eq!(parse(&closed).unwrap().build().unwrap().glide.len(), 4);
    }

    #[test]
    fn invalid_values_carry_paths() {
        let zero = PAIR.replace("\"burgers\": -1", "\"burgers\": 0");
        assert!(parse(&zero).unwrap().build().unwrap_err().to_string().starts_with("dislocations[1].burgers"));
        let outside = PAIR.replace("\"plane\"", "\"unit_disk\"").replace("[1, 0]", "[1.5, 0]");
        assert!(parse(&outside).unwrap().build().unwrap_err().to_string().starts_with("dislocations[1]"));
        let controls = PAIR.replace("\"dislocations\"", "\"controls\": {\"rtol\": -1}, \"dislocations\"");
        assert!(parse(&controls).unwrap().build().unwrap_err().to_string().starts_with("controls"));
        let kin = PAIR.replace("\"dislocations\"", "\"kinetics\": {\"p\": 2, \"M\": [1, 1]}, \"dislocations\"");
        assert!(parse(&kin).unwrap().build().unwrap_err().to_string().starts_with("kinetics"));
    }

    #[test]
    fn polygon_domain() {
        let text = PAIR
            .replace(r#"{"kind": "plane"}"#, r#"{"kind": "polygon", "vertices": [[-2,-2],[2,-2],[2,2],[-2,2]], "spacing": 0.05, "n_charges": 64}"#);
        let p = parse(&text).unwrap().build().unwrap();
        assert!(matches!(p.domain, Domain::Polygon { n_charges: 64, .. }));
    }
}
