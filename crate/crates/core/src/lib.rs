//! Lagrangian mechanics on general algebroids in a single coordinate chart.
//!
//! An algebroid is described by its structure functions (left anchor `rho`,
//! right anchor `sigma`, bracket coefficients `c`) given as expressions in
//! the base coordinates. On top of a chart this crate provides the
//! Legendre map and Tulczyjew differential of a Lagrangian, the
//! Euler-Lagrange operator `delta_L`, free/forced integration, and the
//! vakonomic, nonholonomic (Chetaev) and affine-reduced constrained
//! dynamics, together with numerical checks of the structural identities.

pub mod algebroid;
pub mod cli;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod lagrangian;
mod linalg;
pub mod scenarios;
pub mod trajectory;

pub use error::{Error, Result};
pub use expr::{EvalContext, Expr, SecondOrderJet};

pub use algebroid::{AlgebroidChart, AxiomReport, CotangentEPoint, SectionExpr, TangentEDualPoint, TangentEPoint};
pub use constraints::{AffineConstraint, GeometricConstraint, HolonomicityReport};
pub use dynamics::{integrate, IntegratorConfig, Mode, System};
pub use lagrangian::{ForceField, Lagrangian, LegendreJet};
pub use trajectory::{SampleDiagnostics, SystemState, Trajectory};
