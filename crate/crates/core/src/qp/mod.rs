//! Quadratic programs with box and ellipsoidal constraints.

mod condensed;
mod ellipsoid;
mod splitting;

pub use condensed::*;
pub use ellipsoid::{project_ellipsoid, projection_kkt_residual, Ellipsoid};
pub use splitting::{ConeBlock, ConicProgram, KktResiduals, QpSettings, QpSolution, SolveStatus, WarmStart};
