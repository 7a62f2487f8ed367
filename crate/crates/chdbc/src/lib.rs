//! Finite-difference solver for the 2-D Cahn-Hilliard equation with
//! dynamical boundary conditions on the walls y = 0, 1 and periodicity in x.
//!
//! The crate provides
//! - the mesh, grid-function containers and discrete operators ([`grid`]),
//! - fast inverses of the modified negative Laplacian and the discrete
//!   H^{-1} norms built on them ([`elliptic`]),
//! - the logarithmic Flory-Huggins free energy and its convex splitting
//!   ([`potential`]),
//! - two structure-preserving time steppers, first-order convex splitting
//!   and stabilized BDF2, with a positivity-safeguarded Newton solver
//!   ([`scheme`]),
//! - structure-preservation audits and observed-order convergence studies
//!   ([`verify`]),
//! - a configuration-driven command line driver ([`config`], [`io`]).

pub mod config;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod io;
pub mod potential;
pub mod scheme;
pub mod sum;
pub mod verify;

pub use error::ChdbcError;
pub use grid::{BoundaryField, BulkField, Mesh, State};
pub use potential::ModelParams;
pub use scheme::{SchemeKind, SchemeParams, StepDiagnostics, Stepper};
