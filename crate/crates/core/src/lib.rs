//! Riemannian Fletcher-Reeves conjugate gradient with a scaled vector
//! transport, plus the manifolds, problems and diagnostics needed to study it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cg;
pub mod checks;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod linesearch;
pub mod manifold;
pub mod manifolds;
pub mod problems;
pub mod transports;

pub use cg::{cg_solve, cg_step, CgConfig, CgOutcome, CgState, Status, Variant};
pub use error::{Error, Result};
pub use linesearch::{strong_wolfe_search, WolfeConfig};
pub use manifold::{Manifold, Point, Tangent};
pub use problems::Problem;
