//! Simulation of screw dislocations in a two-dimensional cross-section.
//!
//! Each dislocation moves along one of finitely many glide directions,
//! picking the one that maximizes the dissipation `j·g` where `j` is the
//! Peach-Köhler force. Where two directions tie the motion is a Filippov
//! differential inclusion; the [`integrator`] resolves it with event
//! detection, cross-slip switching and sliding along the tie surface.

pub mod boundary;
pub mod elasticity;
pub mod forces;
pub mod inclusion;
pub mod integrator;
pub mod oracles;
pub mod scenarios;
pub mod types;

pub use types::{Configuration, Dislocation, Domain, GlideSet, Material, Vec2};
