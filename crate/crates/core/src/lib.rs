pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod curiosity;
pub mod env;
pub mod error;
pub mod harness;
pub mod models;
pub mod nn;
pub mod report;
pub mod sound;

pub use config::{Config, Method, PolicyInit};
pub use env::Task;
pub use error::{Error, Result};
pub use models::CrossmodalMode;
