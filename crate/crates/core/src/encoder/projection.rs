use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ndtensor::{Real, Tape, Tensor, Var};

/// How a multi-band image becomes the stem's three input channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Projection {
    /// Learnable 1×1 convolution plus a fixed band-average residual.
    #[default]
    Conv,
    /// Top three principal band components of each image.
    Pca,
    /// Bands (2, 1, 0).
    Rgb,
    /// Bands (1, 0, 3).
    Gbnir,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Conv, Projection::Pca, Projection::Rgb, Projection::Gbnir];

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn check_bands(self, bands: usize) -> Result<()> {
        let need = match self {
            Projection::Conv => 1,
            Projection::Pca => 3,
            Projection::Rgb | Projection::Gbnir => 4,
        };
        if bands < need {
            return Err(Error::Parameter(format!("{self} projection needs >= {need} bands, got {bands}")));
        }
        Ok(())
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Projection::Conv => "Conv",
            Projection::Pca => "PCA",
            Projection::Rgb => "RGB",
            Projection::Gbnir => "GBNIR",
        })
    }
}

impl FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown projection {s:?}")))
    }
}

/// Top-3 principal directions `[3][B]` and band means of one `B×HW` image.
/// Each direction's largest-magnitude entry is made positive.
pub fn pca_basis(planes: &[f64], bands: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let hw = planes.len() / bands;
    let means: Vec<f64> = planes.chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
    let cov = DMatrix::from_fn(bands, bands, |i, j| {
        let (pi, pj) = (&planes[i * hw..(i + 1) * hw], &planes[j * hw..(j + 1) * hw]);
        pi.iter()
            .zip(pj)
            .map(|(a, b)| (a - means[i]) * (b - means[j]))
            .sum::<f64>()
            / hw as f64
    });
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let basis = order[..3]
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    (basis, means)
}

/// Projects a `[N,B,H,W]` batch to `[N,3,H,W]` without learnable weights
/// (`conv_weight` supplies the Conv-mode kernel).
pub(crate) fn project<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    mode: Projection,
    conv_weight: Option<Var>,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("expected [N,B,H,W], got {s:?}")));
    }
    let bands = s[1];
    mode.check_bands(bands)?;
    match mode {
        Projection::Conv => {
            let w = conv_weight.ok_or_else(|| Error::Contract("Conv projection without weights".into()))?;
            let avg = tape.constant(Tensor::full(&[3, bands, 1, 1], T::of(1.0 / bands as f64)));
            let k = tape.add(w, avg)?;
            tape.conv2d(x, k, 1, 0)
        }
        Projection::Rgb | Projection::Gbnir => {
            let idx = if mode == Projection::Rgb { [2, 1, 0] } else { [1, 0, 3] };
            let parts = idx
                .iter()
                .map(|&c| tape.narrow(x, 1, c, 1))
                .collect::<Result<Vec<_>>>()?;
            tape.concat(&parts, 1)
        }
        Projection::Pca => {
            let per = bands * s[2] * s[3];
            let mut outs = Vec::with_capacity(s[0]);
            for n in 0..s[0] {
                let planes: Vec<f64> = tape.value(x).data()[n * per..(n + 1) * per]
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                let (basis, means) = pca_basis(&planes, bands);
                let w = Tensor::new(
                    &[3, bands, 1, 1],
                    basis.iter().flatten().map(|&v| T::of(v)).collect(),
                )?;
                let bias = Tensor::new(
                    &[3],
                    basis
                        .iter()
                        .map(|v| T::of(-v.iter().zip(&means).map(|(a, m)| a * m).sum::<f64>()))
                        .collect(),
                )?;
                let w = tape.constant(w);
                let bias = tape.constant(bias);
                let xn = tape.narrow(x, 0, n, 1)?;
                let y = tape.conv2d(xn, w, 1, 0)?;
                outs.push(tape.add_bias(y, bias)?);
            }
            tape.concat(&outs, 0)
        }
    }
}
