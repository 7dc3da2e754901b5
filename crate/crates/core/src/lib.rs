pub mod diagnostics;
pub mod error;
pub mod generate;
pub mod io;
pub mod kkt;
pub mod linalg;
pub mod lp;
pub mod plq;
pub mod polyhedral;
pub mod qp;
pub mod sqp;
pub mod subqp;

pub use error::{Error, Result};
