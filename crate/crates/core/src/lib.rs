pub mod agle;
pub mod agents;
pub mod align;
pub mod config;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod eval;
pub mod gasp;
pub mod nn;
pub mod oracle;
pub mod planner;
pub mod rollout;
pub mod seed;

pub use error::{Error, Result};
