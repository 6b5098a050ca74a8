pub mod encoder;
pub mod error;
pub mod metrics;
pub mod ndtensor;
pub mod params;
pub mod protocol;
pub mod rasters;
pub mod stage1;
pub mod stage2;

pub use error::{Error, ErrorKind, Result};
