use crate::error::{Error, Result};
use crate::ndtensor::apply_separable;
use crate::ndtensor::resample::{bicubic_matrix, mtf_matrix};
use crate::rasters::Raster;

/// Sensor used to simulate LRMS and PAN from a high-resolution scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorModel {
    pub ratio: usize,
    /// Per-band MS response at the LR Nyquist frequency.
    pub mtf_gains: Vec<f64>,
    /// PAN response at the LR Nyquist frequency, used when PAN is degraded.
    pub pan_gain: f64,
    pub pan_weights: Vec<f64>,
}

impl SensorModel {
    /// Ratio 4, gains 0.3, uniform PAN weights.
    pub fn new(bands: usize) -> Self {
        SensorModel {
            ratio: 4,
            mtf_gains: vec![0.3; bands],
            pan_gain: 0.3,
            pan_weights: vec![1.0 / bands as f64; bands],
        }
    }

    pub fn bands(&self) -> usize {
        self.mtf_gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio < 2 {
            return Err(Error::Parameter(format!("ratio must be >= 2, got {}", self.ratio)));
        }
        if self.pan_weights.len() != self.mtf_gains.len() {
            return Err(Error::Parameter(format!(
                "{} PAN weights for {} MTF gains",
                self.pan_weights.len(),
                self.mtf_gains.len()
            )));
        }
        for &g in self.mtf_gains.iter().chain([&self.pan_gain]) {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::Parameter(format!("MTF gain must lie in (0,1), got {g}")));
            }
        }
        if self.pan_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter("PAN weights must be nonnegative".into()));
        }
        let total: f64 = self.pan_weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!("PAN weights sum to {total}, not 1")));
        }
        Ok(())
    }

    fn check_bands(&self, bands: usize) -> Result<()> {
        self.validate()?;
        if bands != self.bands() {
            return Err(Error::Parameter(format!(
                "sensor model describes {} bands, raster has {bands}",
                self.bands()
            )));
        }
        Ok(())
    }
}

pub(crate) fn plane_f64(r: &Raster, b: usize) -> Vec<f64> {
    r.band(b).iter().map(|&v| v as f64).collect()
}

pub(crate) fn raster_from_planes(w: usize, h: usize, planes: &[Vec<f64>]) -> Result<Raster> {
    let data = planes.iter().flatten().map(|&v| v as f32).collect();
    Raster::new(w, h, planes.len(), data)
}

fn check_divisible(r: &Raster, ratio: usize) -> Result<()> {
    let (w, h, _) = r.shape();
    if w % ratio != 0 || h % ratio != 0 {
        return Err(Error::Size(format!("{w}x{h} raster not divisible by ratio {ratio}")));
    }
    Ok(())
}

/// Gaussian MTF blur followed by decimation of a single plane.
pub(crate) fn degrade_plane(plane: &[f64], w: usize, h: usize, gain: f64, ratio: usize) -> Result<Vec<f64>> {
    let ry = mtf_matrix(h, gain, ratio)?;
    let rx = mtf_matrix(w, gain, ratio)?;
    Ok(apply_separable(plane, h, w, &ry, &rx))
}

pub(crate) fn upsample_plane(plane: &[f64], w: usize, h: usize, ratio: usize) -> Result<Vec<f64>> {
    let ry = bicubic_matrix(h, h * ratio)?;
    let rx = bicubic_matrix(w, w * ratio)?;
    Ok(apply_separable(plane, h, w, &ry, &rx))
}

/// Per-band Gaussian MTF blur and decimation at offset 0.
pub fn mtf_degrade(hr: &Raster, model: &SensorModel) -> Result<Raster> {
    let (w, h, bands) = hr.shape();
    model.check_bands(bands)?;
    check_divisible(hr, model.ratio)?;
    let planes = (0..bands)
        .map(|b| degrade_plane(&plane_f64(hr, b), w, h, model.mtf_gains[b], model.ratio))
        .collect::<Result<Vec<_>>>()?;
    raster_from_planes(w / model.ratio, h / model.ratio, &planes)
}

/// PAN brought to the LR grid with the sensor's PAN MTF.
pub fn degrade_pan(pan: &Raster, model: &SensorModel) -> Result<Raster> {
    let (w, h, bands) = pan.shape();
    model.validate()?;
    if bands != 1 {
        return Err(Error::Dimension(format!("PAN must have 1 band, got {bands}")));
    }
    check_divisible(pan, model.ratio)?;
    let plane = degrade_plane(&plane_f64(pan, 0), w, h, model.pan_gain, model.ratio)?;
    raster_from_planes(w / model.ratio, h / model.ratio, &[plane])
}

/// Pixelwise weighted band sum.
pub fn synth_pan(hr: &Raster, model: &SensorModel) -> Result<Raster> {
    let (w, h, bands) = hr.shape();
    model.check_bands(bands)?;
    let mut pan = vec![0.0f64; w * h];
    for (b, &wt) in model.pan_weights.iter().enumerate() {
        for (p, &v) in pan.iter_mut().zip(hr.band(b)) {
            *p += wt * v as f64;
        }
    }
    raster_from_planes(w, h, &[pan])
}

/// Bicubic upsampling of every band by `ratio`.
pub fn upsample_bicubic(r: &Raster, ratio: usize) -> Result<Raster> {
    let (w, h, bands) = r.shape();
    if ratio == 0 {
        return Err(Error::Parameter("upsampling ratio must be positive".into()));
    }
    let planes = (0..bands)
        .map(|b| upsample_plane(&plane_f64(r, b), w, h, ratio))
        .collect::<Result<Vec<_>>>()?;
    raster_from_planes(w * ratio, h * ratio, &planes)
}

/// The EXP baseline: plain ×4 bicubic upsampling.
pub fn exp_upsample(lrms: &Raster) -> Result<Raster> {
    upsample_bicubic(lrms, 4)
}
