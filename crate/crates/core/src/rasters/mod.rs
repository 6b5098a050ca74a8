//! Multispectral / panchromatic rasters, their file format, synthetic scenes
//! and previews.

mod io;
mod preview;
mod raster;
mod synth;

pub(crate) use io::read_u32;
pub use io::{decode_raster, encode_raster, read_raster, write_raster, DTYPE_F32, RASTER_MAGIC};
pub use preview::{export_preview, BandMap};
pub use raster::{Raster, Scene};
pub use synth::synth_scene;
