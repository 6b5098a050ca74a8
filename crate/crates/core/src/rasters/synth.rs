//! Deterministic synthetic multispectral scenes.
//!
//! A scene is a shared low-frequency latent mixed into every band through a
//! random spectral matrix, overpainted with sharp rectangles, ellipses and
//! lines whose albedo varies smoothly across bands, plus mild per-band noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::raster::{Raster, Scene};

const LATENTS: usize = 3;
const WAVES: usize = 4;
const NOISE_SIGMA: f64 = 0.005;

struct Field {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Field {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..WAVES)
            .map(|_| {
                let u = rng.random_range(-3.0..3.0);
                let v = rng.random_range(-3.0..3.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.2..1.0);
                (u, v, phase, amp)
            })
            .collect();
        Field { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.3).sum();
        self.waves
            .iter()
            .map(|&(u, v, p, a)| a * (2.0 * PI * (u * x + v * y) + p).cos())
            .sum::<f64>()
            / total
    }
}

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Line { ax: f64, ay: f64, bx: f64, by: f64, half: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        match rng.random_range(0..3) {
            0 => {
                let w = rng.random_range(0.08..0.4) * size;
                let h = rng.random_range(0.08..0.4) * size;
                let x0 = rng.random_range(-0.1..0.9) * size;
                let y0 = rng.random_range(-0.1..0.9) * size;
                Shape::Rect { x0, y0, x1: x0 + w, y1: y0 + h }
            }
            1 => Shape::Ellipse {
                cx: rng.random_range(0.0..1.0) * size,
                cy: rng.random_range(0.0..1.0) * size,
                rx: rng.random_range(0.04..0.22) * size,
                ry: rng.random_range(0.04..0.22) * size,
                angle: rng.random_range(0.0..PI),
            },
            _ => Shape::Line {
                ax: rng.random_range(0.0..1.0) * size,
                ay: rng.random_range(0.0..1.0) * size,
                bx: rng.random_range(0.0..1.0) * size,
                by: rng.random_range(0.0..1.0) * size,
                half: rng.random_range(0.5..1.5),
            },
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = (c * dx + s * dy) / rx;
                let v = (-s * dx + c * dy) / ry;
                u * u + v * v <= 1.0
            }
            Shape::Line { ax, ay, bx, by, half } => {
                let (vx, vy) = (bx - ax, by - ay);
                let len2 = (vx * vx + vy * vy).max(1e-12);
                let t = (((x - ax) * vx + (y - ay) * vy) / len2).clamp(0.0, 1.0);
                let (px, py) = (ax + t * vx - x, ay + t * vy - y);
                (px * px + py * py).sqrt() <= half
            }
        }
    }
}

/// Generates scene `seed` of `size × size` pixels with `bands` bands.
pub fn synth_scene(seed: u64, size: usize, bands: usize) -> Result<Scene> {
    if size == 0 || !size.is_multiple_of(4) {
        return Err(Error::Parameter(format!("scene size must be a positive multiple of 4, got {size}")));
    }
    if bands != 4 && bands != 8 {
        return Err(Error::Parameter(format!("scene bands must be 4 or 8, got {bands}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields: Vec<Field> = (0..LATENTS).map(|_| Field::random(&mut rng)).collect();
    let offsets: Vec<f64> = (0..bands).map(|_| rng.random_range(0.25..0.55)).collect();
    let shared: Vec<f64> = (0..LATENTS).map(|_| rng.random_range(-0.15..0.15)).collect();
    let mixing: Vec<Vec<f64>> = (0..bands)
        .map(|_| shared.iter().map(|s| s + rng.random_range(-0.03..0.03)).collect())
        .collect();

    let n_shapes = rng.random_range(6..=12);
    let shapes: Vec<(Shape, Vec<f64>, f64)> = (0..n_shapes)
        .map(|_| {
            let shape = Shape::random(&mut rng, size as f64);
            let level: f64 = rng.random_range(0.1..0.9);
            let tilt: f64 = rng.random_range(-0.3..0.3);
            let albedo = (0..bands)
                .map(|b| {
                    let pos = if bands > 1 { b as f64 / (bands - 1) as f64 - 0.5 } else { 0.0 };
                    level + tilt * pos + rng.random_range(-0.05..0.05)
                })
                .collect();
            let texture = rng.random_range(0.0..0.3);
            (shape, albedo, texture)
        })
        .collect();

    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut data = vec![0.0f32; bands * size * size];
    let mut latent = [0.0f64; LATENTS];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
            for (l, f) in latent.iter_mut().zip(&fields) {
                *l = f.at(u, v);
            }
            let top = shapes
                .iter()
                .rev()
                .find(|(s, _, _)| s.contains(x as f64 + 0.5, y as f64 + 0.5));
            for b in 0..bands {
                let background: f64 =
                    offsets[b] + mixing[b].iter().zip(&latent).map(|(m, l)| m * l).sum::<f64>();
                let value = match top {
                    Some((_, albedo, texture)) => albedo[b] + texture * (background - offsets[b]),
                    None => background,
                };
                data[(b * size + y) * size + x] = value as f32;
            }
        }
    }
    for v in data.iter_mut() {
        *v = (*v as f64 + noise.sample(&mut rng)) as f32;
    }
    Ok(Scene {
        id: seed,
        seed,
        size,
        hr_ms: Raster::new(size, size, bands, data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_range() {
        let s = synth_scene(0, 64, 4).unwrap();
        assert_eq!(s.hr_ms.shape(), (64, 64, 4));
        assert!(s.hr_ms.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = synth_scene(3, 32, 8).unwrap();
        let b = synth_scene(3, 32, 8).unwrap();
        assert_eq!(
            a.hr_ms.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.hr_ms.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let c = synth_scene(4, 32, 8).unwrap();
        assert_ne!(a.hr_ms.data(), c.hr_ms.data());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(synth_scene(0, 62, 4), Err(Error::Parameter(_))));
        assert!(matches!(synth_scene(0, 64, 5), Err(Error::Parameter(_))));
    }

    #[test]
    fn bands_are_correlated() {
        let s = synth_scene(1, 64, 4).unwrap();
        let (a, b) = (s.hr_ms.band(0), s.hr_ms.band(3));
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb)).sum();
        let va: f64 = a.iter().map(|&x| (x as f64 - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|&y| (y as f64 - mb).powi(2)).sum();
        assert!(cov / (va * vb).sqrt() > 0.5);
    }
}
