//! Static analysis of nonlocal shallow cylindrical shell panels.
//!
//! The library builds finite element models of shear-deformable cylindrical
//! panels whose kinematics use fractional-order (Riesz–Caputo) derivatives in
//! place of the classical gradients. The fractional order `alpha` and the
//! horizon length `l_f` control the strength and the reach of the long-range
//! elastic interactions; `alpha = 1` recovers the classical local shell.
//!
//! Module map:
//!
//! - [`frac`] — scalar fractional operators (Caputo/Riesz–Caputo derivatives,
//!   Riesz integrals, discrete stencils on uniform grids, basis coefficients
//!   of the rotating cylindrical frame).
//! - [`mesh`] — panel geometry, structured quadrilateral meshing, DOF
//!   numbering and per-quadrature-point horizon maps.
//! - [`shell`] — material law, first-order shear deformation kinematics,
//!   strain/resultant evaluation and energy functionals.
//! - [`assembly`] — nonlocal strain-displacement operators, global stiffness,
//!   residual/tangent assembly, boundary conditions and load vectors.
//! - [`linalg`] — symmetric system storage with direct (dense/banded)
//!   Cholesky and a conjugate-gradient fallback.
//! - [`solve`] — linear solve and incremental Newton–Raphson continuation.
//! - [`study`] — configuration ingestion, study drivers and CSV/JSON result
//!   emission for batch runs.

// Index-style loops mirror the matrix algebra; negated comparisons in the
// validators deliberately trap NaN inputs.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::excessive_precision)]
#![allow(clippy::too_many_arguments)]

pub mod assembly;
pub mod error;
pub mod frac;
pub mod linalg;
pub mod mesh;
pub mod shell;
pub mod solve;
pub mod study;

pub use assembly::{BcKind, BoundarySpec, GlobalSystem, LoadDirection, LoadSpec, QpOperators};
pub use error::{Error, ErrorCategory, Result};
pub use frac::{CurvilinearCoefficients, DiscreteFracStencil, FracOperatorSpec};
pub use mesh::{DofMap, HorizonMap, PanelGeometry, StructuredMesh};
pub use shell::{GeneralizedDisplacements, IsotropicMaterial, MidplaneStrainState, StressResultants};
pub use solve::{EquilibriumPath, PathRecord, SolverConfig, StateVector};
pub use study::{CaseConfig, ResultRecord};
