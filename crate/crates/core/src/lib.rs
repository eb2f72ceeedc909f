pub mod error;
pub mod spectral;
pub mod torus;
mod krylov;
pub mod cell;

pub use error::{Error, Result};
pub mod effective;
pub mod profile;
pub mod flux;
pub mod direct;
pub mod asymptotics;
