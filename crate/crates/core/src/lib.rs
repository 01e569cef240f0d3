pub mod error;
pub mod grid;
pub mod linalg;
pub mod neural;
pub mod phase_field;
pub mod reference;
pub mod step;
pub mod willmore;

pub use error::{Error, Result};
