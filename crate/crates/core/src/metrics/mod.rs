//! Reference-based (MPSNR, ERGAS, SAM, Q2n) and no-reference (Dλ, Ds, QNR)
//! quality indices, evaluated in `f64`.

mod hypercomplex;
mod qindex;
mod report;

pub use qindex::{q2n, q_index, q_index_blocks, Q_EPS};
pub use report::{evaluate, MetricReport, METRIC_HEADER};

use crate::error::{Error, Result};
use crate::protocol::{degrade_pan, SensorModel};
use crate::rasters::Raster;

/// PSNR reported for bands that match exactly.
pub const PSNR_CAP: f64 = 99.0;

/// Default Q-index block edge.
pub const Q_BLOCK: usize = 32;

fn same_shape(a: &Raster, b: &Raster) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "raster shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn band_mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

/// Per-band PSNR with unit peak, capped at [`PSNR_CAP`].
pub fn band_psnr(fused: &Raster, reference: &Raster) -> Result<Vec<f64>> {
    same_shape(fused, reference)?;
    Ok((0..fused.bands())
        .map(|b| {
            let mse = band_mse(fused.band(b), reference.band(b));
            if mse == 0.0 {
                PSNR_CAP
            } else {
                (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
            }
        })
        .collect())
}

pub fn mpsnr(fused: &Raster, reference: &Raster) -> Result<f64> {
    let per_band = band_psnr(fused, reference)?;
    Ok(per_band.iter().sum::<f64>() / per_band.len() as f64)
}

pub fn ergas(fused: &Raster, reference: &Raster, ratio: usize) -> Result<f64> {
    same_shape(fused, reference)?;
    if ratio == 0 {
        return Err(Error::Parameter("ERGAS ratio must be positive".into()));
    }
    let bands = fused.bands();
    let mut acc = 0.0;
    for b in 0..bands {
        let r = reference.band(b);
        let mu = r.iter().map(|&v| v as f64).sum::<f64>() / r.len() as f64;
        if mu == 0.0 {
            return Err(Error::Degenerate(format!("reference band {b} has zero mean")));
        }
        acc += band_mse(fused.band(b), r) / (mu * mu);
    }
    Ok(100.0 / ratio as f64 * (acc / bands as f64).sqrt())
}

/// Spectral angle in degrees, with the number of skipped zero-vector pixels.
pub fn sam_with_skipped(fused: &Raster, reference: &Raster) -> Result<(f64, usize)> {
    same_shape(fused, reference)?;
    let (mut total, mut used) = (0.0, 0usize);
    for p in 0..fused.pixels() {
        let (mut dot, mut nf, mut nr) = (0.0, 0.0, 0.0);
        for b in 0..fused.bands() {
            let f = fused.band(b)[p] as f64;
            let r = reference.band(b)[p] as f64;
            dot += f * r;
            nf += f * f;
            nr += r * r;
        }
        if nf == 0.0 || nr == 0.0 {
            continue;
        }
        total += (dot / (nf * nr).sqrt()).clamp(-1.0, 1.0).acos();
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("SAM: every pixel is a zero vector".into()));
    }
    Ok((total / used as f64 * 180.0 / std::f64::consts::PI, fused.pixels() - used))
}

pub fn sam(fused: &Raster, reference: &Raster) -> Result<f64> {
    sam_with_skipped(fused, reference).map(|(v, _)| v)
}

/// No-reference distortion indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QnrScores {
    pub d_lambda: f64,
    pub d_s: f64,
    pub qnr: f64,
}

fn planes(r: &Raster) -> Vec<Vec<f64>> {
    (0..r.bands())
        .map(|b| r.band(b).iter().map(|&v| v as f64).collect())
        .collect()
}

/// Dλ, Ds and QNR with exponents p = q = 1. Fused-scale Q uses `block`
/// windows; LR-scale Q uses `block / ratio`.
pub fn qnr_with_block(
    fused: &Raster,
    lrms: &Raster,
    pan: &Raster,
    model: &SensorModel,
    block: usize,
) -> Result<QnrScores> {
    let (fw, fh, bands) = fused.shape();
    let (lw, lh, lb) = lrms.shape();
    if bands != lb {
        return Err(Error::Dimension(format!("fused has {bands} bands, LRMS has {lb}")));
    }
    if pan.shape() != (fw, fh, 1) {
        return Err(Error::Dimension(format!(
            "PAN {:?} does not match fused {fw}x{fh}",
            pan.shape()
        )));
    }
    if fw != lw * model.ratio || fh != lh * model.ratio {
        return Err(Error::Dimension(format!(
            "fused {fw}x{fh} is not {}x LRMS {lw}x{lh}",
            model.ratio
        )));
    }
    if bands < 2 {
        return Err(Error::UndefinedMetric("Dλ needs at least two bands".into()));
    }
    let lr_block = (block / model.ratio).max(1);
    let f = planes(fused);
    let m = planes(lrms);
    let p = planes(pan).remove(0);
    let p_l = planes(&degrade_pan(pan, model)?).remove(0);

    let mut d_lambda = 0.0;
    for l in 0..bands {
        for r in 0..bands {
            if l != r {
                let qf = q_index_blocks(&f[l], &f[r], fw, fh, block)?;
                let qm = q_index_blocks(&m[l], &m[r], lw, lh, lr_block)?;
                d_lambda += (qf - qm).abs();
            }
        }
    }
    d_lambda /= (bands * (bands - 1)) as f64;

    let mut d_s = 0.0;
    for l in 0..bands {
        let qf = q_index_blocks(&f[l], &p, fw, fh, block)?;
        let qm = q_index_blocks(&m[l], &p_l, lw, lh, lr_block)?;
        d_s += (qf - qm).abs();
    }
    d_s /= bands as f64;
    Ok(QnrScores {
        d_lambda,
        d_s,
        qnr: (1.0 - d_lambda) * (1.0 - d_s),
    })
}

pub fn qnr(fused: &Raster, lrms: &Raster, pan: &Raster, model: &SensorModel) -> Result<QnrScores> {
    qnr_with_block(fused, lrms, pan, model, Q_BLOCK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_band(f: [f32; 2], r: [f32; 2]) -> (Raster, Raster) {
        (
            Raster::from_fn(4, 4, 2, |b, _, _| f[b]).unwrap(),
            Raster::from_fn(4, 4, 2, |b, _, _| r[b]).unwrap(),
        )
    }

    #[test]
    fn psnr_hand_value_and_cap() {
        let a = Raster::filled(8, 8, 3, 0.6).unwrap();
        let r = Raster::filled(8, 8, 3, 0.5).unwrap();
        assert!((mpsnr(&a, &r).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(mpsnr(&r, &r).unwrap(), PSNR_CAP);
    }

    #[test]
    fn ergas_hand_value() {
        // ref mean 1 needs a 1-valued plane; RMSE 0.1 via a constant offset.
        let r = Raster::filled(4, 4, 1, 1.0).unwrap();
        let f = Raster::filled(4, 4, 1, 0.9).unwrap();
        assert!((ergas(&f, &r, 4).unwrap() - 2.5).abs() < 1e-6);
        assert_eq!(ergas(&r, &r, 4).unwrap(), 0.0);
        let z = Raster::filled(4, 4, 1, 0.0).unwrap();
        assert!(matches!(ergas(&f, &z, 4), Err(Error::Degenerate(_))));
    }

    #[test]
    fn sam_angles() {
        let (f, r) = two_band([1.0, 0.0], [1.0, 1.0]);
        assert!((sam(&f, &r).unwrap() - 45.0).abs() < 1e-9);
        assert_eq!(sam(&r, &r).unwrap(), 0.0);
        let (z, _) = two_band([0.0, 0.0], [1.0, 1.0]);
        assert!(matches!(sam(&z, &r), Err(Error::UndefinedMetric(_))));
        let half = Raster::from_fn(4, 4, 2, |b, y, _| if y < 2 { 0.0 } else { [0.2, 0.0][b] }).unwrap();
        let (v, skipped) = sam_with_skipped(&half, &r).unwrap();
        assert!((v - 45.0).abs() < 1e-9);
        assert_eq!(skipped, 8);
    }

    #[test]
    fn shape_mismatch() {
        let a = Raster::filled(4, 4, 2, 0.5).unwrap();
        let b = Raster::filled(4, 4, 3, 0.5).unwrap();
        assert!(matches!(mpsnr(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn qnr_identity_and_single_band() {
        let model = SensorModel::new(4);
        let lrms = Raster::from_fn(8, 8, 4, |b, y, x| ((b + y * 3 + x * 5) % 7) as f32 / 7.0).unwrap();
        let fused = crate::protocol::exp_upsample(&lrms).unwrap();
        let pan = crate::protocol::synth_pan(&fused, &model).unwrap();
        let s = qnr(&fused, &lrms, &pan, &model).unwrap();
        assert_eq!(s.qnr, (1.0 - s.d_lambda) * (1.0 - s.d_s));
        let one = Raster::filled(8, 8, 1, 0.5).unwrap();
        let one_f = Raster::filled(32, 32, 1, 0.5).unwrap();
        assert!(matches!(
            qnr(&one_f, &one, &pan, &SensorModel::new(1)),
            Err(Error::UndefinedMetric(_))
        ));
    }
}
