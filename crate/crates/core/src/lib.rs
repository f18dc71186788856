pub mod bnn;
pub mod config;
pub mod error;
pub mod harness;
pub mod meals;
pub mod mpc;
pub mod seed;
pub mod sim;
pub mod symptom;

pub use error::{Error, Result};
