//! Pointwise Dirac structures, implicit Hamiltonian systems with multiplier
//! elimination, and regular and singular symmetry reduction, all checked
//! numerically at probe points.

pub mod dirac_point;
pub mod error;
pub mod fields;
pub mod ihs_core;
pub mod poly;
pub mod reduction;
pub mod report;
pub mod subspace;
pub mod symmetry;
pub mod systems;

pub use dirac_point::{is_dirac, plus_orthogonal, ConstantDirac, DiracReport};
pub use error::{DiracError, Result};
pub use fields::{DistributionField, PoissonField, SmoothMap};
pub use ihs_core::{integrate, ImplicitSystem, IntegrateOptions, Trajectory};
pub use report::CheckReport;
pub use subspace::Subspace;
pub use symmetry::{GroupAction, MomentumMap};
pub use systems::{builtin, SystemBundle};
