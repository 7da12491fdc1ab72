pub mod cli;
pub mod error;
pub mod geometry;
pub mod hamside;
pub mod integrate;
pub mod json;
pub mod koperator;
pub mod kvector;
pub mod lagside;
pub mod linalg;
pub mod symcore;
pub mod unified;
pub mod verify;

pub use error::{Error, Result};
