pub mod autodiff;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod mention;
pub mod model;
pub mod nn;
pub mod training;
pub mod triplet;

pub use error::{Error, Result};
