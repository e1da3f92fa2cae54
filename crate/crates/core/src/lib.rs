pub mod assembly;
pub mod error;
pub mod expr;
pub mod mesh;
pub mod output;
pub mod postproc;
pub mod problems;
pub mod reference;
pub mod runner;
pub mod solver;
pub mod sparse;
pub mod stencil;

pub use error::{Error, Result};
