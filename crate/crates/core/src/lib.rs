pub mod arima;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod models;
pub mod panel;
pub mod parallel;
pub mod reservoir;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
