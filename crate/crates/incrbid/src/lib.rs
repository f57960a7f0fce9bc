pub mod agent;
pub mod conversion;
pub mod env;
pub mod error;
pub mod harness;
pub mod hob;
pub mod model;
pub mod pamm;
pub mod planner;
pub mod scenario;

pub use error::{Error, Result, Violation};
