//! Numerical workbench for spectral and dynamical stability of planar
//! viscous shock profiles in hyperbolic-parabolic systems of conservation
//! laws.
//!
//! The pipeline runs in stages, each usable on its own:
//! structural certificates (symmetrizers, block structure, genuine coupling,
//! compensating matrices) -> traveling-wave profile construction ->
//! inviscid (Lopatinski) stability of the underlying shock -> Evans-function
//! evaluation and winding-number counts for the viscous spectrum ->
//! low-frequency expansion coefficients tying the two together ->
//! time-evolution cross-checks against the spectral verdicts.

pub mod evans;
pub mod inviscid_stability;
pub mod linalg;
pub mod profile_solver;
pub mod structure_checks;
pub mod system_model;
pub mod timeevolution;
