pub mod array;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod sacc;
pub mod segments;
pub mod simulate;
pub mod tcn;

pub use error::{Error, Result};
