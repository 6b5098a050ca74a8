//! `PANR` raster container.
//!
//! Layout (little-endian): magic `PANR`, `u32` width, `u32` height,
//! `u32` bands, `u32` dtype tag (0 = f32), then `width·height·bands` f32
//! samples in band-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::raster::Raster;

pub const RASTER_MAGIC: &[u8; 4] = b"PANR";
pub const DTYPE_F32: u32 = 0;
const HEADER_LEN: usize = 20;

pub fn encode_raster(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + r.data().len() * 4);
    out.extend_from_slice(RASTER_MAGIC);
    for v in [r.width() as u32, r.height() as u32, r.bands() as u32, DTYPE_F32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in r.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::format(bytes.len() as u64, format!("truncated: need 4 bytes at {offset}")))?;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4 bytes")))
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "truncated before magic"));
    }
    if &bytes[..4] != RASTER_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let width = read_u32(bytes, 4)? as usize;
    let height = read_u32(bytes, 8)? as usize;
    let bands = read_u32(bytes, 12)? as usize;
    let dtype = read_u32(bytes, 16)?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(16, format!("unsupported dtype tag {dtype}")));
    }
    if width == 0 || height == 0 || bands == 0 {
        return Err(Error::format(4, format!("empty dimensions {width}x{height}x{bands}")));
    }
    let payload = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bands))
        .and_then(|n| n.checked_mul(4))
        .filter(|n| n.checked_add(HEADER_LEN).is_some())
        .ok_or_else(|| Error::format(4, format!("dimensions {width}x{height}x{bands} overflow")))?;
    let end = HEADER_LEN + payload;
    if bytes.len() < end {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: header declares {payload} bytes, found {}", bytes.len() - HEADER_LEN),
        ));
    }
    if bytes.len() > end {
        return Err(Error::format(end as u64, "trailing bytes after payload"));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect::<Vec<_>>();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format((HEADER_LEN + 4 * i) as u64, "non-finite sample"));
    }
    Raster::new(width, height, bands, data)
}

pub fn write_raster(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_raster(r))?;
    Ok(())
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    decode_raster(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> Raster {
        Raster::from_fn(5, 3, 2, |b, y, x| ((b * 15 + y * 5 + x) as f32 * 0.031).fract()).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_raster(&sample());
        assert_eq!(&bytes[..4], b"PANR");
        assert_eq!(read_u32(&bytes, 4).unwrap(), 5);
        assert_eq!(read_u32(&bytes, 8).unwrap(), 3);
        assert_eq!(read_u32(&bytes, 12).unwrap(), 2);
        assert_eq!(read_u32(&bytes, 16).unwrap(), 0);
        assert_eq!(bytes.len(), 20 + 5 * 3 * 2 * 4);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = encode_raster(&sample());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_raster(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn rejects_truncation() {
        let bytes = encode_raster(&sample());
        let cut = &bytes[..bytes.len() - 3];
        match decode_raster(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, cut.len() as u64),
            other => panic!("expected truncation error, got {other:?}"),
        }
        assert!(matches!(decode_raster(&bytes[..10]), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_overflowing_dimensions() {
        let mut bytes = encode_raster(&sample());
        for off in [4, 8, 12] {
            bytes[off..off + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_raster(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.panr");
        let r = sample();
        write_raster(&r, &path).unwrap();
        assert_eq!(read_raster(&path).unwrap(), r);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(w in 1usize..9, h in 1usize..9, b in 1usize..5, seed in any::<u64>()) {
            let mut state = seed;
            let data: Vec<f32> = (0..w * h * b)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (state >> 40) as f32 / (1u64 << 24) as f32
                })
                .collect();
            let r = Raster::new(w, h, b, data).unwrap();
            let back = decode_raster(&encode_raster(&r)).unwrap();
            prop_assert_eq!(
                back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                r.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back.shape(), r.shape());
        }
    }
}
