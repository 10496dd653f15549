pub mod analysis;
pub mod cli;
pub mod cube;
pub mod degrade;
pub mod error;
pub mod fuse;
mod io_util;
pub mod metrics;
pub mod siren;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
