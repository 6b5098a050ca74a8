//! Composite differentiable operations built from tape primitives.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::resample;
use super::tape::{CeItem, Tape, Var};
use super::tensor::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn plane_dims<T: Real>(tape: &Tape<T>, x: Var) -> Result<(usize, usize)> {
    let s = tape.shape(x);
    if s.len() < 2 {
        return Err(Error::Dimension(format!("expected an image tensor, got {s:?}")));
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

/// Bicubic (Catmull-Rom) resize of the trailing two axes by `scale`;
/// `scale < 1` low-passes before sampling.
pub fn resize_bicubic<T: Real>(tape: &mut Tape<T>, x: Var, scale: f64) -> Result<Var> {
    let (h, w) = plane_dims(tape, x)?;
    let (ho, wo) = (resample::resized_len(h, scale)?, resample::resized_len(w, scale)?);
    let ry = Arc::new(resample::bicubic_matrix(h, ho)?.cast());
    let rx = Arc::new(resample::bicubic_matrix(w, wo)?.cast());
    tape.spatial_map(x, ry, rx)
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur<T: Real>(tape: &mut Tape<T>, x: Var, sigma: f64, kernel_size: usize) -> Result<Var> {
    let (h, w) = plane_dims(tape, x)?;
    let taps = resample::gaussian_kernel(sigma, kernel_size)?;
    let ry = Arc::new(resample::gaussian_reflect_matrix(h, &taps).cast());
    let rx = Arc::new(resample::gaussian_reflect_matrix(w, &taps).cast());
    tape.spatial_map(x, ry, rx)
}

/// Unit-norm copy of a 1-D vector.
pub fn l2_normalize<T: Real>(tape: &mut Tape<T>, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    if shape.len() != 1 {
        return Err(Error::Dimension(format!("l2_normalize expects a vector, got {shape:?}")));
    }
    let row = tape.reshape(v, &[1, shape[0]])?;
    let n = tape.normalize_rows(row)?;
    tape.reshape(n, &shape)
}

pub fn cosine_sim<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let na = l2_normalize(tape, a)?;
    let nb = l2_normalize(tape, b)?;
    let p = tape.mul(na, nb)?;
    Ok(tape.sum(p))
}

/// Row-wise contrastive cross-entropy with positives on the diagonal.
pub fn info_nce<T: Real>(tape: &mut Tape<T>, similarity: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!("temperature must be > 0, got {temperature}")));
    }
    let logits = tape.affine(similarity, 1.0 / temperature, 0.0);
    diagonal_ce(tape, logits)
}

fn diagonal_ce<T: Real>(tape: &mut Tape<T>, logits: Var) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::Dimension(format!("info_nce expects a square matrix, got {s:?}")));
    }
    let all: Vec<usize> = (0..s[1]).collect();
    let items = (0..s[0])
        .map(|i| CeItem {
            row: i,
            target: i,
            allowed: all.clone(),
        })
        .collect();
    tape.cross_entropy(logits, items)
}

/// Mean structural similarity over 11×11 Gaussian (σ = 1.5) windows on
/// unit dynamic range, averaged over every plane of `a` and `b`.
pub fn ssim<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Dimension(format!(
            "ssim operands differ: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    let (h, w) = plane_dims(tape, a)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "{h}x{w} image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = resample::gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW)?;
    let ry = Arc::new(resample::gaussian_valid_matrix(h, &taps)?.cast::<T>());
    let rx = Arc::new(resample::gaussian_valid_matrix(w, &taps)?.cast::<T>());
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let win = |t: &mut Tape<T>, v: Var| t.spatial_map(v, ry.clone(), rx.clone());

    let mu_a = win(tape, a)?;
    let mu_b = win(tape, b)?;
    let aa = tape.mul(a, a)?;
    let bb = tape.mul(b, b)?;
    let ab = tape.mul(a, b)?;
    let e_aa = win(tape, aa)?;
    let e_bb = win(tape, bb)?;
    let e_ab = win(tape, ab)?;
    let mu_aa = tape.mul(mu_a, mu_a)?;
    let mu_bb = tape.mul(mu_b, mu_b)?;
    let mu_ab = tape.mul(mu_a, mu_b)?;
    let var_a = tape.sub(e_aa, mu_aa)?;
    let var_b = tape.sub(e_bb, mu_bb)?;
    let cov = tape.sub(e_ab, mu_ab)?;

    let l_num = tape.affine(mu_ab, 2.0, c1);
    let c_num = tape.affine(cov, 2.0, c2);
    let num = tape.mul(l_num, c_num)?;
    let mu_sq = tape.add(mu_aa, mu_bb)?;
    let l_den = tape.affine(mu_sq, 1.0, c1);
    let var_sum = tape.add(var_a, var_b)?;
    let c_den = tape.affine(var_sum, 1.0, c2);
    let den = tape.mul(l_den, c_den)?;
    let map = tape.div(num, den)?;
    Ok(tape.mean(map))
}

/// Mean squared difference.
pub fn mse<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Mean absolute difference.
pub fn mae<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let ad = tape.abs(d);
    Ok(tape.mean(ad))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ndtensor::Tensor;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn normalize_3_4() {
        let mut t = Tape::<f64>::new();
        let v = t.constant(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        let n = l2_normalize(&mut t, v).unwrap();
        let d = t.value(n).data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_keeps_unit_vectors_and_rejects_zero() {
        let mut t = Tape::<f64>::new();
        let u = t.constant(Tensor::new(&[3], vec![0.0, 1.0, 0.0]).unwrap());
        let n = l2_normalize(&mut t, u).unwrap();
        assert_eq!(t.value(n).data(), &[0.0, 1.0, 0.0]);
        let r = t.constant(random(&[16], 3).map(|v| v - 0.5));
        let n = l2_normalize(&mut t, r).unwrap();
        let norm: f64 = t.value(n).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let z = t.constant(Tensor::zeros(&[4]));
        assert!(matches!(l2_normalize(&mut t, z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cosine_cases() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::new(&[3], vec![1.0, 2.0, -0.5]).unwrap());
        let na = t.neg(a);
        let o = t.constant(Tensor::new(&[3], vec![2.0, -1.0, 0.0]).unwrap());
        let same = cosine_sim(&mut t, a, a).unwrap();
        let anti = cosine_sim(&mut t, a, na).unwrap();
        let orth = cosine_sim(&mut t, a, o).unwrap();
        assert!((t.value(same).item() - 1.0).abs() < 1e-15);
        assert!((t.value(anti).item() + 1.0).abs() < 1e-15);
        assert!(t.value(orth).item().abs() < 1e-15);
        let z = t.constant(Tensor::zeros(&[3]));
        assert!(cosine_sim(&mut t, a, z).is_err());
    }

    #[test]
    fn info_nce_special_cases() {
        let mut t = Tape::<f64>::new();
        let one = t.constant(Tensor::new(&[1, 1], vec![0.3]).unwrap());
        let l = info_nce(&mut t, one, 0.07).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let flat = t.constant(Tensor::full(&[5, 5], 0.2));
        let l = info_nce(&mut t, flat, 0.07).unwrap();
        assert!((t.value(l).item() - 5f64.ln()).abs() < 1e-12);

        let tau = 0.07;
        let two = t.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let l = info_nce(&mut t, two, tau).unwrap();
        let e = (1.0f64 / tau).exp();
        let hand = -(e / (e + 1.0)).ln();
        assert!((t.value(l).item() - hand).abs() < 1e-12);

        assert!(matches!(info_nce(&mut t, two, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn ssim_identity_and_range() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(random(&[2, 16, 16], 11));
        let b = t.constant(random(&[2, 16, 16], 12));
        let same = ssim(&mut t, a, a).unwrap();
        assert!((t.value(same).item() - 1.0).abs() < 1e-12);
        let r = ssim(&mut t, a, b).unwrap();
        let v = t.value(r).item();
        assert!((-1.0..=1.0).contains(&v));
        let inv = t.affine(a, -1.0, 1.0);
        let s = ssim(&mut t, a, inv).unwrap();
        assert!(t.value(s).item() < 1.0);
        let small = t.constant(random(&[8, 8], 1));
        assert!(matches!(ssim(&mut t, small, small), Err(Error::Size(_))));
    }

    #[test]
    fn blur_constant_and_impulse() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Tensor::full(&[1, 9, 9], 0.4));
        let b = gaussian_blur(&mut t, c, 1.2, 5).unwrap();
        assert!(t.value(b).data().iter().all(|v| (v - 0.4).abs() < 1e-15));

        let mut imp = Tensor::zeros(&[9, 9]);
        imp.data_mut()[4 * 9 + 4] = 1.0;
        let x = t.constant(imp);
        let b = gaussian_blur(&mut t, x, 1.0, 5).unwrap();
        let k = resample::gaussian_kernel(1.0, 5).unwrap();
        for i in 0..9usize {
            for j in 0..9usize {
                let want = if (2..7).contains(&i) && (2..7).contains(&j) {
                    k[i - 2] * k[j - 2]
                } else {
                    0.0
                };
                assert!((t.value(b).data()[i * 9 + j] - want).abs() < 1e-15);
            }
        }
        assert!(matches!(gaussian_blur(&mut t, x, 0.0, 5), Err(Error::Parameter(_))));
    }

    #[test]
    fn resize_constant_and_size_error() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Tensor::full(&[2, 8, 12], 0.7));
        let up = resize_bicubic(&mut t, c, 4.0).unwrap();
        assert_eq!(t.shape(up), &[2, 32, 48]);
        assert!(t.value(up).data().iter().all(|v| (v - 0.7).abs() < 1e-12));
        let down = resize_bicubic(&mut t, c, 0.25).unwrap();
        assert_eq!(t.shape(down), &[2, 2, 3]);
        assert!(matches!(resize_bicubic(&mut t, c, 0.01), Err(Error::Size(_))));
    }

    #[test]
    fn down_up_round_trip_loses_information() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(random(&[4, 4], 5));
        let d = resize_bicubic(&mut t, x, 0.25).unwrap();
        let u = resize_bicubic(&mut t, d, 4.0).unwrap();
        assert_eq!(t.shape(u), &[4, 4]);
        assert_ne!(t.value(u).data(), t.value(x).data());
    }
}
