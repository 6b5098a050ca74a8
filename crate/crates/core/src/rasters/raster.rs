use crate::error::{Error, Result};
use crate::ndtensor::{Real, Tensor};

/// Planar image with band-major `f32` samples in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f32>,
}

impl Raster {
    /// Builds a raster, clamping samples into `[0,1]`. Non-finite samples are
    /// rejected.
    pub fn new(width: usize, height: usize, bands: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::Dimension(format!(
                "raster dimensions must be positive, got {width}x{height}x{bands}"
            )));
        }
        let want = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(bands))
            .ok_or_else(|| Error::Dimension("raster size overflows".into()))?;
        if want != data.len() {
            return Err(Error::Dimension(format!(
                "{width}x{height}x{bands} raster needs {want} samples, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite sample at index {i}")));
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(Raster {
            width,
            height,
            bands,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, bands: usize, value: f32) -> Result<Self> {
        Raster::new(width, height, bands, vec![value; width * height * bands])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * bands);
        for b in 0..bands {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(b, y, x));
                }
            }
        }
        Raster::new(width, height, bands, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f32 {
        self.data[(b * self.height + y) * self.width + x]
    }

    /// `[1, bands, height, width]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            &[1, self.bands, self.height, self.width],
            self.data.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("raster shape is consistent")
    }

    /// Stacks equally-shaped rasters into `[N, bands, height, width]`.
    pub fn stack<T: Real>(rasters: &[&Raster]) -> Result<Tensor<T>> {
        let first = rasters.first().ok_or(Error::EmptyBatch)?;
        let mut data = Vec::with_capacity(rasters.len() * first.data.len());
        for r in rasters {
            if r.shape() != first.shape() {
                return Err(Error::Dimension(format!(
                    "cannot stack {:?} with {:?}",
                    r.shape(),
                    first.shape()
                )));
            }
            data.extend(r.data.iter().map(|&v| T::of(v as f64)));
        }
        Tensor::new(&[rasters.len(), first.bands, first.height, first.width], data)
    }

    /// Item `index` of a `[N, C, H, W]` tensor, clamped into `[0,1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Raster> {
        let s = t.shape();
        if s.len() != 4 || index >= s[0] {
            return Err(Error::Dimension(format!("no item {index} in tensor {s:?}")));
        }
        let n = s[1] * s[2] * s[3];
        let data = t.data()[index * n..(index + 1) * n]
            .iter()
            .map(|v| v.as_f64() as f32)
            .collect();
        Raster::new(s[3], s[2], s[1], data)
    }

    /// `(width, height, bands)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.bands)
    }
}

/// Synthetic ground scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub seed: u64,
    pub size: usize,
    pub hr_ms: Raster,
}
