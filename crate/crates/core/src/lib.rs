//! Dimensional reduction of locally invariant Ricci flow on twisted abelian bundles.
//!
//! The unknown of the reduced flow is a triple on a periodic base grid: the fiber
//! metric `G`, the connection `A` (a fixed constant-curvature background plus a
//! periodic part) and the base metric `g`. This crate evaluates the reduced
//! curvature, integrates the reduced flow, evaluates the modified entropy
//! functionals together with their dissipation identities, and provides the
//! closed-form expanding solitons used as references.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod curvature;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod functionals;
pub mod linalg;
pub mod math;
pub mod oracle;
pub mod perturb;
pub mod solitons;
pub mod state;

pub use curvature::{curvature_package, CurvaturePackage, NodeCurvature};
pub use domain::{BaseDomain, DomainMode, Signature, Stencil, StencilKind};
pub use error::{Error, Result};
pub use flow::{StepControl, Tangent, Trajectory};
pub use functionals::{FunctionalKind, FunctionalSample};
pub use linalg::Mat;
pub use solitons::{SolitonKind, SolitonSpec};
pub use state::{BundleState, Connection, Convention, DensityField, ValidationReport};
