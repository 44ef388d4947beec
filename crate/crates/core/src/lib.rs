pub mod autodiff;
pub mod bayes;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod gru;
pub mod metrics;
pub mod models;
pub mod multifidelity;
pub mod numerics;
pub mod persist;
pub mod sequence;
pub mod training;

pub use error::{Error, Result};
