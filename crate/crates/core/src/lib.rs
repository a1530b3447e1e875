pub mod audio;
pub mod data;
pub mod error;
pub mod fusion;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;
pub mod report;
pub mod train;
pub mod verify;
pub mod video;

pub use error::{Error, Result};
