pub mod binio;
pub mod cli;
pub mod config;
pub mod damage;
pub mod dataset;
pub mod error;
pub mod euler2d;
pub mod field;
pub mod metrics;
pub mod forecast;
pub mod network;
pub mod nn;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
