//! Direct-formula metric implementations, written independently of the
//! library, and a driver comparing the two on random raster pairs.

use panlab::metrics::{ergas, mpsnr, q2n, sam, Q_BLOCK, Q_EPS};
use panlab::rasters::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const RATIO: usize = 4;

fn px(r: &Raster, b: usize, y: usize, x: usize) -> f64 {
    r.get(b, y, x) as f64
}

pub fn mpsnr_oracle(f: &Raster, r: &Raster) -> f64 {
    let (w, h, bands) = f.shape();
    let mut total = 0.0;
    for b in 0..bands {
        let mut se = 0.0;
        for y in 0..h {
            for x in 0..w {
                se += (px(f, b, y, x) - px(r, b, y, x)).powi(2);
            }
        }
        let mse = se / (w * h) as f64;
        total += if mse == 0.0 { 99.0 } else { (-10.0 * mse.log10()).min(99.0) };
    }
    total / bands as f64
}

pub fn ergas_oracle(f: &Raster, r: &Raster, ratio: usize) -> f64 {
    let (w, h, bands) = f.shape();
    let n = (w * h) as f64;
    let mut acc = 0.0;
    for b in 0..bands {
        let (mut se, mut sum) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                se += (px(f, b, y, x) - px(r, b, y, x)).powi(2);
                sum += px(r, b, y, x);
            }
        }
        let rmse = (se / n).sqrt();
        let mean = sum / n;
        acc += (rmse / mean).powi(2);
    }
    100.0 / ratio as f64 * (acc / bands as f64).sqrt()
}

pub fn sam_oracle(f: &Raster, r: &Raster) -> f64 {
    let (w, h, bands) = f.shape();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let u: Vec<f64> = (0..bands).map(|b| px(f, b, y, x)).collect();
            let v: Vec<f64> = (0..bands).map(|b| px(r, b, y, x)).collect();
            let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            total += (dot / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees();
        }
    }
    total / (w * h) as f64
}

type Quat = [f64; 4];

fn qmul(p: Quat, q: Quat) -> Quat {
    let [a1, b1, c1, d1] = p;
    let [a2, b2, c2, d2] = q;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

fn qconj(q: Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

fn qadd(p: Quat, q: Quat) -> Quat {
    [p[0] + q[0], p[1] + q[1], p[2] + q[2], p[3] + q[3]]
}

fn qsub(p: Quat, q: Quat) -> Quat {
    [p[0] - q[0], p[1] - q[1], p[2] - q[2], p[3] - q[3]]
}

/// `x · conj(y)` for 4 components (quaternions) or 8 (octonions as pairs
/// of quaternions, `(a,b)(c,d) = (ac − d*b, da + bc*)`).
fn times_conj(x: &[f64], y: &[f64]) -> Vec<f64> {
    let q = |s: &[f64]| -> Quat { [s[0], s[1], s[2], s[3]] };
    match x.len() {
        4 => qmul(q(x), qconj(q(y))).to_vec(),
        8 => {
            let (a, b) = (q(&x[..4]), q(&x[4..]));
            // conj of the octonion (c, d) is (c*, −d)
            let (c, d) = (qconj(q(&y[..4])), q(&y[4..]).map(|v| -v));
            let first = qsub(qmul(a, c), qmul(qconj(d), b));
            let second = qadd(qmul(d, a), qmul(b, qconj(c)));
            first.iter().chain(&second).copied().collect()
        }
        n => panic!("oracle supports 4 or 8 bands, got {n}"),
    }
}

/// Hypercomplex Q over the whole image taken as one block.
pub fn q2n_oracle(f: &Raster, r: &Raster) -> f64 {
    let (w, h, bands) = f.shape();
    let n = (w * h) as f64;
    let pixel = |img: &Raster, y: usize, x: usize| -> Vec<f64> { (0..bands).map(|b| px(img, b, y, x)).collect() };
    let mut mf = vec![0.0; bands];
    let mut mr = vec![0.0; bands];
    for y in 0..h {
        for x in 0..w {
            for b in 0..bands {
                mf[b] += px(f, b, y, x) / n;
                mr[b] += px(r, b, y, x) / n;
            }
        }
    }
    let (mut vf, mut vr) = (0.0, 0.0);
    let mut cov = vec![0.0; bands];
    for y in 0..h {
        for x in 0..w {
            let df: Vec<f64> = pixel(f, y, x).iter().zip(&mf).map(|(a, m)| a - m).collect();
            let dr: Vec<f64> = pixel(r, y, x).iter().zip(&mr).map(|(a, m)| a - m).collect();
            vf += df.iter().map(|v| v * v).sum::<f64>() / n;
            vr += dr.iter().map(|v| v * v).sum::<f64>() / n;
            for (c, v) in cov.iter_mut().zip(times_conj(&df, &dr)) {
                *c += v / n;
            }
        }
    }
    let len = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let (nf, nr) = (len(&mf), len(&mr));
    4.0 * len(&cov) * nf * nr / ((vf + vr + Q_EPS) * (nf * nf + nr * nr + Q_EPS))
}

/// Worst absolute deviation between library and oracle over `trials`
/// random 8×8 pairs with `bands` bands, per metric
/// `[mpsnr, ergas, sam, q2n]`.
pub fn oracle_deviation(trials: usize, bands: usize, seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..trials {
        let mut draw = || Raster::from_fn(8, 8, bands, |_, _, _| rng.random_range(0.02..1.0)).unwrap();
        let (f, r) = (draw(), draw());
        let pairs = [
            (mpsnr(&f, &r).unwrap(), mpsnr_oracle(&f, &r)),
            (ergas(&f, &r, RATIO).unwrap(), ergas_oracle(&f, &r, RATIO)),
            (sam(&f, &r).unwrap(), sam_oracle(&f, &r)),
            (q2n(&f, &r, Q_BLOCK).unwrap(), q2n_oracle(&f, &r)),
        ];
        for (w, (lib, oracle)) in worst.iter_mut().zip(pairs) {
            *w = w.max((lib - oracle).abs());
        }
    }
    worst
}
