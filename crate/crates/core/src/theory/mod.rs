//! Derived constants of the convergence analysis and a quadratic test bed for
//! checking them empirically.

mod constants;
mod problem;
mod verify;

pub use constants::*;
pub use problem::*;
pub use verify::*;
