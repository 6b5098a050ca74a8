use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rasters::Raster;

use super::degrade::{degrade_plane, plane_f64, raster_from_planes, upsample_plane, SensorModel};

/// Ridge added to the diagonal of the normal equations.
pub const BDSD_RIDGE: f64 = 1e-6;

struct Prepared {
    /// Upsampled MS at PAN scale, one plane per band.
    up: Vec<Vec<f64>>,
    /// Least-squares design at LR scale: `[p_L, M̃_LR,1..B]`, column-major.
    design: Vec<Vec<f64>>,
    /// Per-band regression target `M_b − M̃_LR,b`.
    targets: Vec<Vec<f64>>,
}

fn prepare(lrms: &Raster, pan: &Raster, model: &SensorModel) -> Result<Prepared> {
    let (lw, lh, bands) = lrms.shape();
    let (pw, ph, pb) = pan.shape();
    if pb != 1 {
        return Err(Error::Dimension(format!("PAN must have 1 band, got {pb}")));
    }
    let r = model.ratio;
    if pw != lw * r || ph != lh * r {
        return Err(Error::Dimension(format!(
            "PAN {pw}x{ph} is not {r}x LRMS {lw}x{lh}"
        )));
    }
    if bands != model.bands() {
        return Err(Error::Parameter(format!(
            "sensor model describes {} bands, LRMS has {bands}",
            model.bands()
        )));
    }
    model.validate()?;
    let up = (0..bands)
        .map(|b| upsample_plane(&plane_f64(lrms, b), lw, lh, r))
        .collect::<Result<Vec<_>>>()?;
    let mut design = vec![degrade_plane(&plane_f64(pan, 0), pw, ph, model.pan_gain, r)?];
    for (b, plane) in up.iter().enumerate() {
        design.push(degrade_plane(plane, pw, ph, model.mtf_gains[b], r)?);
    }
    let targets = (0..bands)
        .map(|b| {
            plane_f64(lrms, b)
                .iter()
                .zip(&design[b + 1])
                .map(|(m, d)| m - d)
                .collect()
        })
        .collect();
    Ok(Prepared { up, design, targets })
}

fn solve(design: &[Vec<f64>], target: &[f64]) -> Vec<f64> {
    let k = design.len();
    let gram = DMatrix::from_fn(k, k, |i, j| {
        let dot: f64 = design[i].iter().zip(&design[j]).map(|(a, b)| a * b).sum();
        if i == j {
            dot + BDSD_RIDGE
        } else {
            dot
        }
    });
    let rhs = DVector::from_fn(k, |i, _| design[i].iter().zip(target).map(|(a, b)| a * b).sum());
    match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs).iter().copied().collect(),
        None => gram
            .lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|| vec![0.0; k]),
    }
}

/// Per-band injection coefficients `θ_b = (γ, c_1..c_B)`, fitted at reduced
/// scale. The fused band is `M̃_b + γ·pan + Σ_k c_k·M̃_k`; equivalently
/// `γ·(pan − P̂_b)` with `P̂_b = Σ_k (−c_k/γ)·M̃_k`.
pub fn bdsd_coefficients(lrms: &Raster, pan: &Raster, model: &SensorModel) -> Result<Vec<Vec<f64>>> {
    let prep = prepare(lrms, pan, model)?;
    Ok(prep.targets.iter().map(|t| solve(&prep.design, t)).collect())
}

/// Global band-dependent spatial detail fusion.
pub fn bdsd_fuse(lrms: &Raster, pan: &Raster, model: &SensorModel) -> Result<Raster> {
    let prep = prepare(lrms, pan, model)?;
    let p = plane_f64(pan, 0);
    let planes: Vec<Vec<f64>> = prep
        .targets
        .iter()
        .enumerate()
        .map(|(b, t)| {
            let theta = solve(&prep.design, t);
            let mut out = prep.up[b].clone();
            for (i, o) in out.iter_mut().enumerate() {
                *o += theta[0] * p[i];
                for (k, plane) in prep.up.iter().enumerate() {
                    *o += theta[k + 1] * plane[i];
                }
            }
            out
        })
        .collect();
    raster_from_planes(pan.width(), pan.height(), &planes)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ndtensor::resample::{bicubic_matrix, mtf_matrix};
    use crate::ndtensor::Mat;
    use crate::protocol::exp_upsample;

    /// Gaussian elimination with partial pivoting.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    /// Dense 2-D application of separable matrices, element by element.
    fn apply_dense(plane: &[f64], h: usize, w: usize, ry: &Mat<f64>, rx: &Mat<f64>) -> Vec<f64> {
        let mut out = vec![0.0; ry.rows * rx.rows];
        for i in 0..ry.rows {
            for j in 0..rx.rows {
                let mut acc = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        acc += ry.at(i, y) * rx.at(j, x) * plane[y * w + x];
                    }
                }
                out[i * rx.rows + j] = acc;
            }
        }
        out
    }

    fn random_case(seed: u64) -> (Raster, Raster) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lrms = Raster::from_fn(8, 8, 4, |_, _, _| rng.random_range(0.1..0.9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let pan = Raster::from_fn(32, 32, 1, |_, _, _| rng.random_range(0.1..0.9)).unwrap();
        (lrms, pan)
    }

    #[test]
    fn coefficients_match_normal_equation_oracle() {
        let (lrms, pan) = random_case(11);
        let model = SensorModel::new(4);
        let got = bdsd_coefficients(&lrms, &pan, &model).unwrap();

        let up_y = bicubic_matrix(8, 32).unwrap();
        let deg = |g: f64| mtf_matrix(32, g, 4).unwrap();
        let band = |r: &Raster, b: usize| r.band(b).iter().map(|&v| v as f64).collect::<Vec<_>>();
        let mut cols = vec![apply_dense(&band(&pan, 0), 32, 32, &deg(0.3), &deg(0.3))];
        for b in 0..4 {
            let up = apply_dense(&band(&lrms, b), 8, 8, &up_y, &up_y);
            cols.push(apply_dense(&up, 32, 32, &deg(0.3), &deg(0.3)));
        }
        for b in 0..4 {
            let y: Vec<f64> = band(&lrms, b).iter().zip(&cols[b + 1]).map(|(m, d)| m - d).collect();
            let a: Vec<Vec<f64>> = (0..5)
                .map(|i| {
                    (0..5)
                        .map(|j| {
                            let d: f64 = cols[i].iter().zip(&cols[j]).map(|(p, q)| p * q).sum();
                            d + if i == j { BDSD_RIDGE } else { 0.0 }
                        })
                        .collect()
                })
                .collect();
            let rhs: Vec<f64> = (0..5).map(|i| cols[i].iter().zip(&y).map(|(p, q)| p * q).sum()).collect();
            let want = gauss_solve(a, rhs);
            for (g, w) in got[b].iter().zip(&want) {
                assert!((g - w).abs() < 1e-6, "band {b}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn smooth_inputs_inject_no_detail() {
        // A flat PAN is its own low-pass. The MS bands are half cosines, which
        // stay smooth under border reflection and survive the
        // upsample/degrade round trip almost unchanged.
        let c = |j: usize| (std::f64::consts::PI * j as f64 / 15.0).cos();
        let lrms = Raster::from_fn(16, 16, 4, |b, y, x| {
            let v = match b {
                0 => c(x),
                1 => c(y),
                2 => c(x) * c(y),
                _ => 0.5 * (c(x) + c(y)),
            };
            (0.5 + 0.05 * v) as f32
        })
        .unwrap();
        let pan = Raster::filled(64, 64, 1, 0.5).unwrap();
        let model = SensorModel::new(4);
        let fused = bdsd_fuse(&lrms, &pan, &model).unwrap();
        let up = exp_upsample(&lrms).unwrap();
        let worst = fused
            .data()
            .iter()
            .zip(up.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-3, "max deviation {worst}");
    }

    #[test]
    fn output_shape_and_mismatch() {
        let (lrms, pan) = random_case(3);
        let model = SensorModel::new(4);
        assert_eq!(bdsd_fuse(&lrms, &pan, &model).unwrap().shape(), (32, 32, 4));
        let small = Raster::filled(16, 16, 1, 0.5).unwrap();
        assert!(matches!(bdsd_fuse(&lrms, &small, &model), Err(Error::Dimension(_))));
    }

    #[test]
    fn constant_bands_do_not_crash() {
        let lrms = Raster::filled(8, 8, 4, 0.4).unwrap();
        let pan = Raster::filled(32, 32, 1, 0.4).unwrap();
        let out = bdsd_fuse(&lrms, &pan, &SensorModel::new(4)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-4));
    }
}
