//! Warm-up, dynamic-threshold selection and the two training modes.

mod schedule;
mod selection;
mod stage;
mod train;

pub use schedule::*;
pub use selection::*;
pub use stage::*;
pub use train::*;
