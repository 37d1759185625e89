pub mod bmo;
pub mod error;
pub mod field;
pub mod grid;
pub mod hilbert;
pub mod operators;
pub mod paraproducts;

pub use error::Error;
