//! Discrete-ordinates transport solvers with synthetic acceleration and
//! trajectory-aware reduced-order preconditioners.

pub mod discretization;
pub mod dsa;
pub mod error;
pub mod krylov;
pub mod linalg;
pub mod oracle;
pub mod rom;
pub mod tar;
pub mod transport;
pub mod workbench;

pub use error::{Error, Result};
