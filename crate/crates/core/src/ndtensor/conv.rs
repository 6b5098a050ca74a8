//! im2col convolution kernels shared by the tape's `conv2d` primitive.

use crate::error::{Error, Result};

use super::tensor::{gemm, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d expects 4-D input and kernel, got {input:?} and {kernel:?}"
            )));
        }
        let (batch, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (f, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c {
            return Err(Error::Dimension(format!(
                "conv2d kernel expects {kc} channels, input has {c}"
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be >= 1".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Size(format!(
                "{kh}x{kw} kernel larger than padded {h}x{w} input"
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            batch,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.f, self.ho, self.wo]
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn forward<T: Real>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let in_len = g.c * g.h * g.w;
    let out_len = g.f * g.positions();
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch_len() * g.positions()]
    };
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let src: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(
            g.f,
            g.patch_len(),
            g.positions(),
            w,
            false,
            src,
            false,
            &mut out[b * out_len..(b + 1) * out_len],
            false,
        );
    }
    out
}

/// Returns `(d input, d kernel)`; each is computed only when requested.
pub fn backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let in_len = g.c * g.h * g.w;
    let out_len = g.f * g.positions();
    let (k, p) = (g.patch_len(), g.positions());
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * p }];
    let mut dcols = vec![T::zero(); if need_dx && !g.is_pointwise() { k * p } else { 0 }];
    for b in 0..g.batch {
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let src: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, g, &mut cols);
                &cols
            };
            gemm(g.f, p, k, dyb, false, src, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                gemm(k, g.f, p, w, true, dyb, false, dxb, true);
            } else {
                gemm(k, g.f, p, w, true, dyb, false, &mut dcols, false);
                col2im(&dcols, g, dxb);
            }
        }
    }
    (dx, dw)
}


#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::oracle::conv_naive;
    use super::*;

    #[test]
    fn im2col_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (input, kernel, stride, pad) in [
            ([2, 3, 8, 8], [4, 3, 3, 3], 1, 1),
            ([4, 4, 8, 8], [2, 4, 3, 3], 2, 1),
            ([1, 2, 5, 7], [3, 2, 5, 5], 1, 2),
            ([2, 3, 6, 6], [5, 3, 1, 1], 1, 0),
            ([1, 1, 2, 2], [1, 1, 2, 2], 1, 0),
        ] {
            let g = ConvGeom::new(&input, &kernel, stride, pad).unwrap();
            let x: Vec<f64> = (0..input.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..kernel.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = forward(&x, &w, &g);
            let slow = conv_naive(&x, &w, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        assert!(matches!(
            ConvGeom::new(&[1, 3, 8, 8], &[2, 4, 3, 3], 1, 0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            ConvGeom::new(&[1, 3, 2, 2], &[2, 3, 3, 3], 1, 0),
            Err(Error::Size(_))
        ));
    }
}
