//! hp-adaptive conforming finite elements for the Poisson problem in 2D.
//!
//! The adaptive loop is SOLVE → ESTIMATE → MARK → REFINE:
//! [`assembly::solve_primal`], [`flux::estimate`], [`marking::mark`] and
//! [`refine`] (residual liftings deciding between h- and p-refinement),
//! followed by [`certificate`], which bounds the error reduction of the step.

pub mod assembly;
pub mod basis;
pub mod certificate;
pub mod driver;
pub mod error;
pub mod flux;
pub mod marking;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod refine;
pub mod rtn;
pub mod space;
pub mod strategy;

pub use error::{Error, Result};
