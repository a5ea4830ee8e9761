pub mod artifact;
pub mod baselines;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod lang;
pub mod nn;
pub mod planner;
pub mod reward;
pub mod seeding;
pub mod sim;

pub use error::{Error, Result};
