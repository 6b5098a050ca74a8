//! Fixed linear operators along one image axis.
//!
//! Every spatial resampling in the crate (bicubic resize, Gaussian blur,
//! decimation, block averaging) is expressed as a dense `out × in` matrix
//! applied separably to rows and columns, which makes it differentiable for
//! free: the adjoint is the transpose.
//!
//! Grid convention: output sample `i` sits at input coordinate `i / scale`,
//! so LR pixel `i` coincides with HR pixel `ratio * i`. This matches
//! decimation at offset 0.

use crate::error::{Error, Result};

use super::tensor::Mat;

/// Whole-sample symmetric reflection (`d c b | a b c d | c b a`).
pub fn reflect(j: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = j.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Catmull-Rom cubic kernel (a = -0.5).
pub fn cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Bicubic resampling matrix from `n_in` to `n_out` samples. Downscaling
/// stretches the kernel by `1/scale` so that it low-passes before sampling.
pub fn bicubic_matrix(n_in: usize, n_out: usize) -> Result<Mat<f64>> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::Size(format!("cannot resample {n_in} -> {n_out} samples")));
    }
    let scale = n_out as f64 / n_in as f64;
    let kscale = scale.min(1.0);
    let support = 2.0 / kscale;
    let mut m = Mat::zeros(n_out, n_in);
    for i in 0..n_out {
        let x = i as f64 / scale;
        let lo = (x - support).floor() as isize;
        let hi = (x + support).ceil() as isize;
        let mut total = 0.0;
        for j in lo..=hi {
            let w = cubic(kscale * (x - j as f64));
            if w == 0.0 {
                continue;
            }
            *m.at_mut(i, reflect(j, n_in)) += w;
            total += w;
        }
        for j in 0..n_in {
            *m.at_mut(i, j) /= total;
        }
    }
    Ok(m)
}

/// Output length for a resize by `scale`.
pub fn resized_len(n: usize, scale: f64) -> Result<usize> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Parameter(format!("resize scale must be positive, got {scale}")));
    }
    let out = (n as f64 * scale).round();
    if out < 1.0 {
        return Err(Error::Size(format!("resizing {n} by {scale} leaves no samples")));
    }
    Ok(out as usize)
}

/// Normalized 1-D Gaussian taps of odd length.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    if size.is_multiple_of(2) {
        return Err(Error::Parameter(format!("gaussian kernel size must be odd, got {size}")));
    }
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Smallest odd size covering ±3σ.
pub fn gaussian_size(sigma: f64) -> usize {
    2 * (3.0 * sigma).ceil().max(1.0) as usize + 1
}

/// Same-size convolution with reflected borders.
pub fn gaussian_reflect_matrix(n: usize, taps: &[f64]) -> Mat<f64> {
    let r = (taps.len() / 2) as isize;
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        for (t, &w) in taps.iter().enumerate() {
            let j = reflect(i as isize + t as isize - r, n);
            *m.at_mut(i, j) += w;
        }
    }
    m
}

/// Valid-mode convolution: `n - k + 1` outputs.
pub fn gaussian_valid_matrix(n: usize, taps: &[f64]) -> Result<Mat<f64>> {
    let k = taps.len();
    if n < k {
        return Err(Error::Size(format!("{n} samples smaller than {k}-tap window")));
    }
    let mut m = Mat::zeros(n - k + 1, n);
    for i in 0..n - k + 1 {
        for (t, &w) in taps.iter().enumerate() {
            *m.at_mut(i, i + t) = w;
        }
    }
    Ok(m)
}

/// Keeps every `ratio`-th sample starting at offset 0.
pub fn decimation_matrix(n: usize, ratio: usize) -> Result<Mat<f64>> {
    if ratio == 0 || !n.is_multiple_of(ratio) {
        return Err(Error::Size(format!("{n} samples not divisible by ratio {ratio}")));
    }
    let mut m = Mat::zeros(n / ratio, n);
    for i in 0..n / ratio {
        *m.at_mut(i, i * ratio) = 1.0;
    }
    Ok(m)
}

/// Averages non-overlapping blocks; trailing samples that do not fill a
/// block are dropped.
pub fn block_mean_matrix(n: usize, block: usize) -> Result<Mat<f64>> {
    if block == 0 || block > n {
        return Err(Error::Size(format!("block {block} does not fit {n} samples")));
    }
    let nb = n / block;
    let mut m = Mat::zeros(nb, n);
    let w = 1.0 / block as f64;
    for b in 0..nb {
        for j in 0..block {
            *m.at_mut(b, b * block + j) = w;
        }
    }
    Ok(m)
}

/// Gaussian σ whose frequency response equals `gain` at the Nyquist
/// frequency of the `ratio`-decimated grid.
pub fn mtf_sigma(gain: f64, ratio: usize) -> Result<f64> {
    if !(gain > 0.0 && gain < 1.0) {
        return Err(Error::Parameter(format!("MTF gain must lie in (0,1), got {gain}")));
    }
    Ok(ratio as f64 / std::f64::consts::PI * (-2.0 * gain.ln()).sqrt())
}

/// `gaussian blur → decimate` along one axis.
pub fn mtf_matrix(n: usize, gain: f64, ratio: usize) -> Result<Mat<f64>> {
    let sigma = mtf_sigma(gain, ratio)?;
    let taps = gaussian_kernel(sigma, gaussian_size(sigma))?;
    let blur = gaussian_reflect_matrix(n, &taps);
    Ok(decimation_matrix(n, ratio)?.matmul(&blur))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|j| reflect(j, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn cubic_interpolates() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        // partition of unity at an arbitrary phase
        let s: f64 = (-2..=2).map(|j| cubic(0.3 - j as f64)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        for (a, b) in [(16, 64), (64, 16), (7, 3), (5, 5)] {
            let m = bicubic_matrix(a, b).unwrap();
            for r in 0..m.rows {
                let s: f64 = (0..m.cols).map(|c| m.at(r, c)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nyquist_gain_matches() {
        // Continuous Gaussian response exp(-2π²σ²f²) at f = 1/(2·ratio).
        let sigma = mtf_sigma(0.3, 4).unwrap();
        let f = 1.0 / 8.0;
        let g = (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * f * f).exp();
        assert!((g - 0.3).abs() < 1e-12);
        assert!(mtf_sigma(1.0, 4).is_err());
        assert!(mtf_sigma(0.0, 4).is_err());
    }
}
