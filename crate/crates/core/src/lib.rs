//! Nearest delta-stable matrix by a two-level method: a rank-adaptive
//! low-rank gradient flow at fixed perturbation size, and a Newton-bisection
//! search over the size.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod eigen;
pub mod error;
pub mod flow;
pub mod functional;
pub mod gallery;
pub mod inner;
pub mod integrator;
pub mod linalg;
pub mod outer;
pub mod structure;

pub use faer;

pub use eigen::{eig_triplets, EigenTriplet, Spectrum};
pub use error::{Result, StabError};
pub use functional::{FunctionalKind, Gradient, StabConfig};
pub use integrator::{LowRankFactors, StepReport};
pub use structure::{StructureKind, StructurePattern};
