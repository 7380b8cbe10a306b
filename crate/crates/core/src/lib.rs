//! Spatially dynamic patch-selection network for recognizing small, distant
//! gestures in video, with exact FLOP accounting, a synthetic long-distance
//! gesture dataset, training, evaluation and sliding-window inference.

pub mod config;
pub mod error;
pub mod evaluator;
pub mod net;
pub mod parallel;
pub mod stream;
pub mod synthdata;
pub mod trainer;

pub use config::{DataConfig, NetworkConfig, Pipeline, RunConfig, TrainConfig};
pub use error::{Error, Result};
pub use net::{FlopReport, GestureNet};
