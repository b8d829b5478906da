//! Train small models from a shared base, fuse their weights, and measure
//! which learned knowledge survives the fusion.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fisher;
pub mod fusion;
pub mod memorization;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod rng;

pub use error::{Error, Result};
pub use nn::{Arch, Model, ModelConfig, TrainConfig};
pub use params::{ParameterSet, Segment};
pub use rng::Rng;
