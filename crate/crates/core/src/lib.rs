pub mod cumulant;
pub mod dblock;
pub mod entropy;
pub mod error;
pub mod fisher;
pub mod measures;
pub mod ncderiv;
pub mod ncpart;
pub mod randmat;

pub use error::{Error, Result};
