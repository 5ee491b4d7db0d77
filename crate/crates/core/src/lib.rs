pub mod active_update;
pub mod error;
pub mod feature_nets;
pub mod filter_model;
pub mod filterability;
pub mod redundancy;
pub mod reuse_cache;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
