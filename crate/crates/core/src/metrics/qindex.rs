use crate::error::{Error, Result};
use crate::rasters::Raster;

use super::hypercomplex::{conj, mul, norm};

/// Stabilizer added to both denominators of the Q index.
pub const Q_EPS: f64 = 1e-8;

/// Universal image quality index of two equally-sized samples, with
/// population statistics.
pub fn q_index(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cov += (a - mx) * (b - my);
    }
    let (vx, vy, cov) = (vx / n, vy / n, cov / n);
    4.0 * cov * mx * my / ((vx + vy + Q_EPS) * (mx * mx + my * my + Q_EPS))
}

/// Edge of the blocks actually used: `block` clamped to the image.
fn block_edges(w: usize, h: usize, block: usize) -> Result<(usize, usize)> {
    if block == 0 {
        return Err(Error::Parameter("Q block must be positive".into()));
    }
    Ok((block.min(w), block.min(h)))
}

fn block_origins(w: usize, h: usize, bw: usize, bh: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in (0..=h - bh).step_by(bh) {
        for x in (0..=w - bw).step_by(bw) {
            out.push((y, x));
        }
    }
    out
}

/// Mean Q index over non-overlapping blocks (stride = block).
pub fn q_index_blocks(x: &[f64], y: &[f64], w: usize, h: usize, block: usize) -> Result<f64> {
    let (bw, bh) = block_edges(w, h, block)?;
    let origins = block_origins(w, h, bw, bh);
    let mut total = 0.0;
    let mut bx = Vec::with_capacity(bw * bh);
    let mut by = Vec::with_capacity(bw * bh);
    for &(oy, ox) in &origins {
        bx.clear();
        by.clear();
        for r in oy..oy + bh {
            bx.extend_from_slice(&x[r * w + ox..r * w + ox + bw]);
            by.extend_from_slice(&y[r * w + ox..r * w + ox + bw]);
        }
        total += q_index(&bx, &by);
    }
    Ok(total / origins.len() as f64)
}

/// Hypercomplex Q of one block; `za`, `zb` hold one `dim`-vector per pixel.
fn q_hyper(za: &[Vec<f64>], zb: &[Vec<f64>], dim: usize) -> f64 {
    let n = za.len() as f64;
    let mean = |z: &[Vec<f64>]| {
        let mut m = vec![0.0; dim];
        for v in z {
            m.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    };
    let (ma, mb) = (mean(za), mean(zb));
    let (mut va, mut vb) = (0.0, 0.0);
    let mut cov = vec![0.0; dim];
    for (a, b) in za.iter().zip(zb) {
        let da: Vec<f64> = a.iter().zip(&ma).map(|(p, q)| p - q).collect();
        let db: Vec<f64> = b.iter().zip(&mb).map(|(p, q)| p - q).collect();
        va += da.iter().map(|v| v * v).sum::<f64>();
        vb += db.iter().map(|v| v * v).sum::<f64>();
        cov.iter_mut().zip(mul(&da, &conj(&db))).for_each(|(c, v)| *c += v);
    }
    let (va, vb) = (va / n, vb / n);
    let cov_norm = norm(&cov) / n;
    let (na, nb) = (norm(&ma), norm(&mb));
    4.0 * cov_norm * na * nb / ((va + vb + Q_EPS) * (na * na + nb * nb + Q_EPS))
}

/// Q2n: hypercomplex Q index averaged over `block × block` tiles.
pub fn q2n(fused: &Raster, reference: &Raster, block: usize) -> Result<f64> {
    if fused.shape() != reference.shape() {
        return Err(Error::Dimension(format!(
            "raster shapes differ: {:?} vs {:?}",
            fused.shape(),
            reference.shape()
        )));
    }
    let (w, h, bands) = fused.shape();
    if !bands.is_power_of_two() {
        return Err(Error::Parameter(format!("Q2n needs a power-of-two band count, got {bands}")));
    }
    let (bw, bh) = block_edges(w, h, block)?;
    let origins = block_origins(w, h, bw, bh);
    let gather = |r: &Raster, oy: usize, ox: usize| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(bw * bh);
        for y in oy..oy + bh {
            for x in ox..ox + bw {
                out.push((0..bands).map(|b| r.get(b, y, x) as f64).collect());
            }
        }
        out
    };
    let total: f64 = origins
        .iter()
        .map(|&(oy, ox)| q_hyper(&gather(fused, oy, ox), &gather(reference, oy, ox), bands))
        .sum();
    Ok(total / origins.len() as f64)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(seed: u64, w: usize, h: usize, b: usize) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, b, |_, _, _| rng.random_range(0.05..0.95)).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        for bands in [1, 2, 4, 8] {
            let x = random(bands as u64, 40, 40, bands);
            assert!((q2n(&x, &x, 32).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_power_of_two_rejected() {
        let x = random(0, 8, 8, 3);
        assert!(matches!(q2n(&x, &x, 32), Err(Error::Parameter(_))));
    }

    #[test]
    fn range_on_random_pairs() {
        for s in 0..20 {
            let a = random(s, 16, 16, 4);
            let b = random(s + 100, 16, 16, 4);
            let q = q2n(&a, &b, 8).unwrap();
            assert!((0.0..=1.0).contains(&q), "{q}");
        }
    }

    #[test]
    fn flat_blocks_are_finite() {
        let a = Raster::filled(8, 8, 4, 0.5).unwrap();
        assert!(q2n(&a, &a, 32).unwrap().is_finite());
        let x = vec![0.5; 16];
        assert_eq!(q_index(&x, &x), 0.0);
    }

    #[test]
    fn block_clamps_to_image() {
        let a = random(1, 8, 8, 1);
        let b = random(2, 8, 8, 1);
        let pa: Vec<f64> = a.band(0).iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.band(0).iter().map(|&v| v as f64).collect();
        assert_eq!(q_index_blocks(&pa, &pb, 8, 8, 32).unwrap(), q_index(&pa, &pb));
    }
}
