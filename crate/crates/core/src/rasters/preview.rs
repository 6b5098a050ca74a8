//! 8-bit binary PPM/PGM previews with a per-band 1–99 percentile stretch.

use crate::error::{Error, Result};

use super::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandMap {
    /// Single-channel graymap; multi-band rasters are averaged first.
    Gray,
    Rgb([usize; 3]),
}

fn percentile(sorted: &[f32], p: f64) -> f32 {
    let idx = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

fn stretch(values: &[f32]) -> Vec<u8> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let lo = percentile(&sorted, 1.0);
    let hi = percentile(&sorted, 99.0);
    if hi - lo <= f32::EPSILON {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn export_preview(r: &Raster, map: BandMap) -> Result<Vec<u8>> {
    let (w, h) = (r.width(), r.height());
    match map {
        BandMap::Gray => {
            let plane: Vec<f32> = if r.bands() == 1 {
                r.band(0).to_vec()
            } else {
                (0..r.pixels())
                    .map(|i| (0..r.bands()).map(|b| r.band(b)[i]).sum::<f32>() / r.bands() as f32)
                    .collect()
            };
            let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
            out.extend(stretch(&plane));
            Ok(out)
        }
        BandMap::Rgb(idx) => {
            if let Some(&bad) = idx.iter().find(|&&b| b >= r.bands()) {
                return Err(Error::Parameter(format!(
                    "band index {bad} out of range for {}-band raster",
                    r.bands()
                )));
            }
            let channels: Vec<Vec<u8>> = idx.iter().map(|&b| stretch(r.band(b))).collect();
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            out.reserve(3 * r.pixels());
            for i in 0..r.pixels() {
                out.extend(channels.iter().map(|c| c[i]));
            }
            Ok(out)
        }
    }
}
