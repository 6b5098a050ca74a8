use std::sync::Arc;

use crate::encoder::{EncoderGraph, ImageKind};
use crate::error::{Error, Result};
use crate::metrics::{q_index_blocks, Q_EPS};
use crate::ndtensor::resample::block_mean_matrix;
use crate::ndtensor::{mae, mse, resize_bicubic, ssim, Real, Tape, Tensor, Var};
use crate::protocol::{degrade_pan, SensorModel};
use crate::rasters::Raster;

/// Displacements shorter than this are treated as having no direction.
pub const DIRECTION_EPS: f64 = 1e-8;

fn mse_ssim<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let m = mse(tape, a, b)?;
    let s = ssim(tape, a, b)?;
    let dissim = tape.affine(s, -1.0, 1.0);
    tape.add(m, dissim)
}

/// `mse(↓out, lrms) + 1 − ssim(↓out, lrms)` with bicubic ↓ by the PAN ratio.
pub fn loss_spec<T: Real>(tape: &mut Tape<T>, out: Var, lrms: Var) -> Result<Var> {
    let (os, ls) = (tape.shape(out).to_vec(), tape.shape(lrms).to_vec());
    if os.len() != 4 || ls.len() != 4 || os[..2] != ls[..2] || ls[2] == 0 || os[2] % ls[2] != 0 {
        return Err(Error::Dimension(format!("output {os:?} cannot be reduced onto LRMS {ls:?}")));
    }
    let down = resize_bicubic(tape, out, ls[2] as f64 / os[2] as f64)?;
    if tape.shape(down) != ls.as_slice() {
        return Err(Error::Dimension(format!(
            "downsampled output {:?} vs LRMS {ls:?}",
            tape.shape(down)
        )));
    }
    mse_ssim(tape, down, lrms)
}

/// `mse(φ(out), pan) + 1 − ssim(φ(out), pan)`; `phi_w` is `[1,B,1,1]`.
pub fn loss_spat<T: Real>(tape: &mut Tape<T>, out: Var, pan: Var, phi_w: Var) -> Result<Var> {
    let p = tape.conv2d(out, phi_w, 1, 0)?;
    if tape.shape(p) != tape.shape(pan) {
        return Err(Error::Dimension(format!(
            "φ(output) {:?} vs PAN {:?}",
            tape.shape(p),
            tape.shape(pan)
        )));
    }
    mse_ssim(tape, p, pan)
}

/// Mean absolute difference to the pseudo-reference.
pub fn loss_pseudo<T: Real>(tape: &mut Tape<T>, out: Var, reference: Var) -> Result<Var> {
    if tape.shape(out) != tape.shape(reference) {
        return Err(Error::Dimension(format!(
            "output {:?} vs pseudo-reference {:?}",
            tape.shape(out),
            tape.shape(reference)
        )));
    }
    mae(tape, out, reference)
}

/// Band pairs `(l, r)`, `l < r`, entering Dλ.
fn band_pairs(bands: usize) -> Vec<(usize, usize)> {
    (0..bands).flat_map(|l| (l + 1..bands).map(move |r| (l, r))).collect()
}

/// Low-resolution side of QNR for one scene: Q between LRMS band pairs
/// followed by Q between each LRMS band and the degraded PAN. These depend
/// only on the inputs, so they are computed once.
pub fn qnr_reference(lrms: &Raster, pan: &Raster, model: &SensorModel, block: usize) -> Result<Vec<f64>> {
    let (w, h, bands) = lrms.shape();
    if bands < 2 {
        return Err(Error::UndefinedMetric("Dλ needs at least two bands".into()));
    }
    let lr_block = (block / model.ratio).max(1);
    let planes: Vec<Vec<f64>> = (0..bands)
        .map(|b| lrms.band(b).iter().map(|&v| v as f64).collect())
        .collect();
    let p_l: Vec<f64> = degrade_pan(pan, model)?.band(0).iter().map(|&v| v as f64).collect();
    if p_l.len() != w * h {
        return Err(Error::Dimension("degraded PAN does not match LRMS".into()));
    }
    let mut out = Vec::new();
    for (l, r) in band_pairs(bands) {
        out.push(q_index_blocks(&planes[l], &planes[r], w, h, lr_block)?);
    }
    for plane in &planes {
        out.push(q_index_blocks(plane, &p_l, w, h, lr_block)?);
    }
    Ok(out)
}

/// Blockwise Q between channel pairs of `a` and `b` (`[N,K,H,W]` each),
/// averaged over blocks: `[N,K]`.
fn q_blocks<T: Real>(tape: &mut Tape<T>, a: Var, b: Var, block: usize) -> Result<Var> {
    let s = tape.shape(a).to_vec();
    let (h, w) = (s[2], s[3]);
    let ry = Arc::new(block_mean_matrix(h, block.min(h))?.cast::<T>());
    let rx = Arc::new(block_mean_matrix(w, block.min(w))?.cast::<T>());
    let pool = |t: &mut Tape<T>, v: Var| t.spatial_map(v, ry.clone(), rx.clone());
    let ma = pool(tape, a)?;
    let mb = pool(tape, b)?;
    let aa = tape.mul(a, a)?;
    let bb = tape.mul(b, b)?;
    let ab = tape.mul(a, b)?;
    let eaa = pool(tape, aa)?;
    let ebb = pool(tape, bb)?;
    let eab = pool(tape, ab)?;
    let maa = tape.mul(ma, ma)?;
    let mbb = tape.mul(mb, mb)?;
    let mab = tape.mul(ma, mb)?;
    let va = tape.sub(eaa, maa)?;
    let vb = tape.sub(ebb, mbb)?;
    let cov = tape.sub(eab, mab)?;
    let num = tape.mul(cov, mab)?;
    let num = tape.affine(num, 4.0, 0.0);
    let vs = tape.add(va, vb)?;
    let d1 = tape.affine(vs, 1.0, Q_EPS);
    let ms = tape.add(maa, mbb)?;
    let d2 = tape.affine(ms, 1.0, Q_EPS);
    let den = tape.mul(d1, d2)?;
    let q = tape.div(num, den)?;
    tape.mean_spatial(q)
}

/// Per-image `(Dλ, Ds)` as two `[N,1]` variables.
pub fn qnr_distortions<T: Real>(
    tape: &mut Tape<T>,
    out: Var,
    pan: Var,
    reference: &[Vec<f64>],
    block: usize,
) -> Result<(Var, Var)> {
    let s = tape.shape(out).to_vec();
    if s.len() != 4 || tape.shape(pan) != [s[0], 1, s[2], s[3]] {
        return Err(Error::Dimension(format!(
            "output {s:?} and PAN {:?} disagree",
            tape.shape(pan)
        )));
    }
    let (n, bands) = (s[0], s[1]);
    if bands < 2 {
        return Err(Error::UndefinedMetric("Dλ needs at least two bands".into()));
    }
    let pairs = band_pairs(bands);
    let k = pairs.len() + bands;
    if reference.len() != n || reference.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension(format!("QNR reference must be {n} rows of {k} values")));
    }
    let band = |t: &mut Tape<T>, b: usize| t.narrow(out, 1, b, 1);
    let mut left = Vec::with_capacity(k);
    let mut right = Vec::with_capacity(k);
    for &(l, r) in &pairs {
        left.push(band(tape, l)?);
        right.push(band(tape, r)?);
    }
    for b in 0..bands {
        left.push(band(tape, b)?);
        right.push(pan);
    }
    let a = tape.concat(&left, 1)?;
    let b = tape.concat(&right, 1)?;
    let q = q_blocks(tape, a, b, block)?;
    let q_ref = Tensor::new(&[n, k], reference.concat().into_iter().map(T::of).collect())?;
    let q_ref = tape.constant(q_ref);
    let diff = tape.sub(q, q_ref)?;
    let diff = tape.abs(diff);
    let avg = |t: &mut Tape<T>, start: usize, len: usize| -> Result<Var> {
        let part = t.narrow(diff, 1, start, len)?;
        let ones = t.constant(Tensor::full(&[len, 1], T::of(1.0 / len as f64)));
        t.matmul(part, ones)
    };
    let d_lambda = avg(tape, 0, pairs.len())?;
    let d_s = avg(tape, pairs.len(), bands)?;
    Ok((d_lambda, d_s))
}

/// `1 − mean_n (1 − Dλ)(1 − Ds)`.
pub fn loss_qnr<T: Real>(
    tape: &mut Tape<T>,
    out: Var,
    pan: Var,
    reference: &[Vec<f64>],
    block: usize,
) -> Result<Var> {
    let (dl, ds) = qnr_distortions(tape, out, pan, reference, block)?;
    let a = tape.affine(dl, -1.0, 1.0);
    let b = tape.affine(ds, -1.0, 1.0);
    let q = tape.mul(a, b)?;
    let q = tape.mean(q);
    Ok(tape.affine(q, -1.0, 1.0))
}

/// `1 − ½(cos(ΔI_ms, ΔT_ms) + cos(ΔI_pan, ΔT_pan))` averaged over rows.
/// Image displacements are `[N,D]`, text displacements `[1,D]`; every row
/// must be nonzero.
pub fn loss_directional<T: Real>(
    tape: &mut Tape<T>,
    di_ms: Var,
    di_pan: Var,
    dt_ms: Var,
    dt_pan: Var,
) -> Result<Var> {
    let n = tape.shape(di_ms)[0];
    let mut cos_sum = None;
    for (di, dt) in [(di_ms, dt_ms), (di_pan, dt_pan)] {
        let a = tape.normalize_rows(di)?;
        let b = tape.normalize_rows(dt)?;
        let c = tape.matmul_t(a, b, false, true)?;
        let c = tape.sum(c);
        cos_sum = Some(match cos_sum {
            None => c,
            Some(prev) => tape.add(prev, c)?,
        });
    }
    let total = cos_sum.expect("two terms");
    Ok(tape.affine(total, -0.5 / n as f64, 1.0))
}

/// Frozen-encoder quantities reused across Stage II steps.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticAnchors {
    /// `F_wald − F_ms` and `F_wald − F_pan` in text space.
    pub text_ms: Vec<f32>,
    pub text_pan: Vec<f32>,
}

pub struct SemanticOutcome {
    pub loss: Var,
    /// Rows whose displacement was too short to define a direction.
    pub skipped: usize,
}

fn row_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

/// Directional semantic loss for a batch of outputs. `f_ms` and `f_pan`
/// hold the cached source embeddings of each row. Rows with a degenerate
/// displacement contribute zero.
pub fn loss_semantic<T: Real>(
    tape: &mut Tape<T>,
    encoder: &EncoderGraph<'_>,
    out: Var,
    f_ms: &[&[f32]],
    f_pan: &[&[f32]],
    anchors: &SemanticAnchors,
) -> Result<SemanticOutcome> {
    let e = encoder.image(tape, ImageKind::Hrms, out)?;
    let (n, d) = (tape.shape(e)[0], tape.shape(e)[1]);
    if f_ms.len() != n || f_pan.len() != n {
        return Err(Error::Dimension(format!("{n} outputs but {} / {} source embeddings", f_ms.len(), f_pan.len())));
    }
    let zero = |t: &mut Tape<T>| t.constant(Tensor::scalar(T::zero()));
    if row_norm(&anchors.text_ms) < DIRECTION_EPS || row_norm(&anchors.text_pan) < DIRECTION_EPS {
        return Ok(SemanticOutcome { loss: zero(tape), skipped: n });
    }
    let rows = |src: &[&[f32]]| -> Result<Tensor<T>> {
        Tensor::new(&[n, d], src.iter().flat_map(|r| r.iter().map(|&v| T::of(v as f64))).collect())
    };
    let c_ms = tape.constant(rows(f_ms)?);
    let c_pan = tape.constant(rows(f_pan)?);
    let di_ms = tape.sub(e, c_ms)?;
    let di_pan = tape.sub(e, c_pan)?;
    let valid: Vec<usize> = (0..n)
        .filter(|&i| {
            let norm = |v: Var| {
                let row = &tape.value(v).data()[i * d..(i + 1) * d];
                row.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()
            };
            norm(di_ms) >= DIRECTION_EPS && norm(di_pan) >= DIRECTION_EPS
        })
        .collect();
    if valid.is_empty() {
        return Ok(SemanticOutcome { loss: zero(tape), skipped: n });
    }
    let di_ms = tape.gather_rows(di_ms, &valid)?;
    let di_pan = tape.gather_rows(di_pan, &valid)?;
    let text = |v: &[f32]| Tensor::new(&[1, d], v.iter().map(|&x| T::of(x as f64)).collect());
    let dt_ms = tape.constant(text(&anchors.text_ms)?);
    let dt_pan = tape.constant(text(&anchors.text_pan)?);
    let per_valid = loss_directional(tape, di_ms, di_pan, dt_ms, dt_pan)?;
    // skipped rows count as zero in the batch mean
    let loss = tape.affine(per_valid, valid.len() as f64 / n as f64, 0.0);
    Ok(SemanticOutcome {
        loss,
        skipped: n - valid.len(),
    })
}
