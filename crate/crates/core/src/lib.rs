//! Numerical laboratory for Riemannian approximations of sub-Riemannian
//! structures.

pub mod error;
pub mod expr;
pub mod flows;
pub mod frames;
pub mod geodesy;
pub mod heat;
pub mod lab;
pub mod lattice;
pub mod measure;
pub mod norms;
pub mod par;
pub mod rng;

pub use error::{LabError, Result};
pub use frames::{build_builtin_frame, make_eps_frame, Builtin, EpsFrame, Frame};
pub use lattice::Lattice;
