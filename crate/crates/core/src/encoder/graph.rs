use crate::error::{Error, Result};
use crate::ndtensor::{Real, Tape, Tensor, Var};
use crate::params::Bound;

use super::projection::{project, Projection};
use super::{EncoderConfig, EncoderParams, ImageKind, INPUT_CENTER, INPUT_SCALE};

/// Encoder parameters placed on a tape.
pub struct EncoderGraph<'a> {
    pub config: EncoderConfig,
    pub params: Bound<'a>,
    max_len: usize,
}

impl<'a> EncoderGraph<'a> {
    /// Binds `p` to `tape`; `trainable = false` freezes every weight.
    pub fn new<T: Real>(p: &'a EncoderParams, tape: &mut Tape<T>, trainable: bool) -> Self {
        EncoderGraph {
            config: p.config,
            params: p.set.bind(tape, trainable),
            max_len: p.vocab.max_len(),
        }
    }

    fn linear<T: Real>(&self, tape: &mut Tape<T>, x: Var, prefix: &str, w: &str, b: &str) -> Result<Var> {
        let y = tape.matmul(x, self.params.var(&format!("{prefix}.{w}")))?;
        tape.add_bias(y, self.params.var(&format!("{prefix}.{b}")))
    }

    /// `x + α·(A(x) − x)` with `A` a ReLU bottleneck.
    fn adapter<T: Real>(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let h = self.linear(tape, x, name, "w1", "b1")?;
        let h = tape.relu(h);
        let a = self.linear(tape, h, name, "w2", "b2")?;
        let diff = tape.sub(a, x)?;
        let scaled = tape.scale_by(diff, self.params.var(&format!("{name}.alpha")))?;
        tape.add(x, scaled)
    }

    pub(crate) fn project_with<T: Real>(
        &self,
        tape: &mut Tape<T>,
        kind: ImageKind,
        x: Var,
        mode: Projection,
    ) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::Dimension(format!("expected [N,C,H,W], got {s:?}")));
        }
        if kind == ImageKind::Pan {
            if s[1] != 1 {
                return Err(Error::Dimension(format!("PAN input must have 1 channel, got {}", s[1])));
            }
            return tape.concat(&[x, x, x], 1);
        }
        if s[1] != self.config.bands {
            return Err(Error::Dimension(format!(
                "encoder expects {} bands, got {}",
                self.config.bands, s[1]
            )));
        }
        project(tape, x, mode, Some(self.params.var("proj.w")))
    }

    /// Per-row standardization across channels, without affine terms.
    fn layer_norm<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let c = tape.shape(x)[1];
        let centering = Tensor::from_fn(&[c, c], |i| {
            T::of(if i / c == i % c { 1.0 } else { 0.0 } - 1.0 / c as f64)
        });
        let centering = tape.constant(centering);
        let centered = tape.matmul(x, centering)?;
        let unit = tape.normalize_rows(centered)?;
        Ok(tape.affine(unit, (c as f64).sqrt(), 0.0))
    }

    /// Stem, pooling and head: `[N,C,H,W] → [N,D]` before adaptation.
    pub fn image_features<T: Real>(&self, tape: &mut Tape<T>, kind: ImageKind, x: Var) -> Result<Var> {
        let mut h = self.project_with(tape, kind, x, self.config.projection)?;
        h = tape.affine(h, INPUT_SCALE, -INPUT_SCALE * INPUT_CENTER);
        for i in 0..3 {
            h = tape.conv2d(h, self.params.var(&format!("stem.{i}.w")), 2, 1)?;
            h = tape.add_bias(h, self.params.var(&format!("stem.{i}.b")))?;
            h = tape.relu(h);
        }
        let pooled = tape.mean_spatial(h)?;
        let pooled = self.layer_norm(tape, pooled)?;
        self.linear(tape, pooled, "img.head", "w", "b")
    }

    /// Unit-norm image embeddings `[N,D]`.
    pub fn image<T: Real>(&self, tape: &mut Tape<T>, kind: ImageKind, x: Var) -> Result<Var> {
        let f = self.image_features(tape, kind, x)?;
        let a = self.adapter(tape, f, &format!("ca.img.{}", kind.tag()))?;
        tape.normalize_rows(a)
    }

    /// Positional-weighted token mean and head: `[1,D]` before adaptation.
    pub fn text_features<T: Real>(&self, tape: &mut Tape<T>, tokens: &[usize]) -> Result<Var> {
        let l = tokens.len();
        if l == 0 || l > self.max_len {
            return Err(Error::Dimension(format!(
                "prompt length {l} outside 1..={}",
                self.max_len
            )));
        }
        let emb = tape.gather_rows(self.params.var("txt.embed"), tokens)?;
        let pos = tape.narrow(self.params.var("txt.pos"), 0, 0, l)?;
        let pos = tape.reshape(pos, &[1, l])?;
        let pos = tape.affine(pos, 1.0 / l as f64, 0.0);
        let mixed = tape.matmul(pos, emb)?;
        self.linear(tape, mixed, "txt.head", "w", "b")
    }

    /// Unit-norm text embedding `[1,D]`.
    pub fn text<T: Real>(&self, tape: &mut Tape<T>, kind: ImageKind, tokens: &[usize]) -> Result<Var> {
        let f = self.text_features(tape, tokens)?;
        let a = self.adapter(tape, f, &format!("ca.txt.{}", kind.tag()))?;
        tape.normalize_rows(a)
    }

    fn fusion<T: Real>(&self, tape: &mut Tape<T>, a: Var, b: Var, prefix: &str) -> Result<Var> {
        let d = self.config.dim;
        for v in [a, b] {
            let s = tape.shape(v);
            if s.len() != 2 || s[1] != d {
                return Err(Error::Dimension(format!("{prefix} expects [N,{d}] inputs, got {s:?}")));
            }
        }
        let x = tape.concat(&[a, b], 1)?;
        let h = self.linear(tape, x, prefix, "w1", "b1")?;
        let h = tape.relu(h);
        let y = self.linear(tape, h, prefix, "w2", "b2")?;
        tape.normalize_rows(y)
    }

    pub fn ifa<T: Real>(&self, tape: &mut Tape<T>, f_ms: Var, f_pan: Var) -> Result<Var> {
        self.fusion(tape, f_ms, f_pan, "ifa")
    }

    pub fn tfa<T: Real>(&self, tape: &mut Tape<T>, t_ms: Var, t_pan: Var) -> Result<Var> {
        self.fusion(tape, t_ms, t_pan, "tfa")
    }

    /// `exp(−log τ)` for `"c"` or `"i"` as a one-element variable.
    pub fn inv_temperature<T: Real>(&self, tape: &mut Tape<T>, which: &str) -> Var {
        let log_tau = self.params.var(&format!("tau.{which}"));
        let neg = tape.neg(log_tau);
        tape.exp(neg)
    }
}
