pub mod alignment;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod layers;
pub mod numerics;
pub mod surrogate;
pub mod synthbench;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use numerics::{Matrix, Prng};
