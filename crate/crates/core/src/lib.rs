//! Variational calculus on piecewise differentiable curves of a control
//! system `q' = psi(t, q, z)`.
//!
//! The crate covers symbolic expressions, admissible curves, transport of
//! frames along curves, abnormality analysis, broken extremals, and the
//! Lagrange multipliers of the equivalent constrained problem.

pub mod abnormality;
pub mod curve;
pub mod error;
pub mod expr;
pub mod extremal;
pub mod multipliers;
pub mod numeric;
pub mod problem;
pub mod system;
pub mod transport;

pub use abnormality::{
    abnormality_index, annihilator, gram_matrix, local_normality_scan, AbnormalityOptions,
    AbnormalityReport,
};
pub use curve::{integrate_admissible, Arc, ArcControl, ControlPath, PiecewiseCurve};
pub use error::{Error, Result};
pub use expr::{parse, Expr};
pub use extremal::{
    extremal_residuals, gauge_transform, i0_extremals, integrate_hamilton, shoot_extremal,
    CovectorPath, ExtremalCandidate, ReducedHamiltonian, ResidualReport, ShootOptions,
    ShootOutcome,
};
pub use multipliers::{
    recover_multipliers, verify_correspondence, CorrespondenceReport, MultiplierPath,
};
pub use nalgebra;
pub use problem::{builtin_names, Numerics, Problem};
pub use system::{ControlSystem, ExtrinsicProblem};
pub use transport::{
    transport_frame, variational_integrate, DeformationDatum, InfinitesimalControl,
};
