//! Reverse-mode differentiation over a linear record of primitives.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the
//! record is a valid reverse topological order. Nodes whose inputs carry no
//! gradient are stored as constants and skipped during the sweep.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::conv::{self, ConvGeom};
use super::tensor::{apply_separable, gemm, Mat, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One row-wise softmax cross-entropy term: `-log softmax(logits[row, allowed])[target]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CeItem {
    pub row: usize,
    pub target: usize,
    pub allowed: Vec<usize>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, T),
    ScaleBy(Var, Var),
    Relu(Var),
    Abs(Var),
    Sqrt(Var),
    Exp(Var),
    Ln(Var),
    Sum(Var),
    Mean(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    AddBias {
        x: Var,
        b: Var,
        outer: usize,
        inner: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
    },
    Narrow {
        x: Var,
        outer: usize,
        axis_len: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    Reshape(Var),
    SpatialMap {
        x: Var,
        ry: Arc<Mat<T>>,
        rx: Arc<Mat<T>>,
    },
    MeanSpatial(Var),
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        items: Vec<CeItem>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    grad: bool,
}

/// Record of primitive applications for one forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{what}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let grad = inputs.iter().any(|v| self.nodes[v.0].grad);
        let op = if grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn zip_map(&self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va.shape(), vb.shape(), what)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "div", |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, c) = (T::of(scale), T::of(shift));
        self.unary(x, |v| s * v + c, Op::Affine(x, s))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Dimension(format!(
                "scale_by expects a scalar, got shape {:?}",
                self.shape(s)
            )));
        }
        let k = self.value(s).item();
        let v = self.value(x).map(|e| e * k);
        Ok(self.push(v, Op::ScaleBy(x, s), &[x, s]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Ln(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("same var has same shape")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / T::of(t.numel() as f64));
        self.push(v, Op::Mean(x), &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` for 2-D operands; `ta`/`tb` transpose the stored matrices.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Dimension(format!("matmul expects 2-D operands, got {sa:?} and {sb:?}")));
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {sa:?}{} x {sb:?}{}",
                if ta { "ᵀ" } else { "" },
                if tb { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, false);
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(v, Op::MatMul { a, b, ta, tb, m, k, n }, &[a, b]))
    }

    /// Adds `b[c]` along axis 1 of `x` (rows of `[N,D]`, channels of `[N,C,H,W]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(b).to_vec();
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::Dimension(format!("bias {sb:?} does not match axis 1 of {sx:?}")));
        }
        let outer = sx[0];
        let c = sx[1];
        let inner: usize = sx[2..].iter().product();
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for (ci, &bv) in bias.iter().enumerate() {
                let start = (o * c + ci) * inner;
                data[start..start + inner].iter_mut().for_each(|v| *v += bv);
            }
        }
        let v = Tensor::new(&sx, data)?;
        Ok(self.push(v, Op::AddBias { x, b, outer, inner }, &[x, b]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        let out = conv::forward(self.value(x).data(), self.value(w).data(), &geom);
        let v = Tensor::new(&geom.out_shape(), out)?;
        Ok(self.push(v, Op::Conv2d { x, w, geom }, &[x, w]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::Dimension("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Dimension(format!("concat axis {axis} out of range for {first:?}")));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::Dimension(format!("concat shapes {first:?} and {s:?} disagree")));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&sizes) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let v = Tensor::new(&shape, data)?;
        let parts_info = parts.iter().copied().zip(sizes).collect();
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts_info,
                outer,
                inner,
            },
            parts,
        ))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::Dimension(format!(
                "narrow({axis}, {start}, {len}) out of range for {s:?}"
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let axis_len = s[axis];
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let v = Tensor::new(&shape, data)?;
        Ok(self.push(
            v,
            Op::Narrow {
                x,
                outer,
                axis_len,
                start,
                len,
                inner,
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Applies `ry · X · rxᵀ` to every trailing 2-D plane of `x`.
    pub fn spatial_map(&mut self, x: Var, ry: Arc<Mat<T>>, rx: Arc<Mat<T>>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::Dimension(format!("spatial_map needs >= 2 dims, got {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if ry.cols != h || rx.cols != w {
            return Err(Error::Dimension(format!(
                "operator {}x{} / {}x{} does not fit {h}x{w} planes",
                ry.rows, ry.cols, rx.rows, rx.cols
            )));
        }
        let planes = self.value(x).numel() / (h * w);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(planes * ry.rows * rx.rows);
        for p in 0..planes {
            data.extend(apply_separable(&src[p * h * w..(p + 1) * h * w], h, w, &ry, &rx));
        }
        let mut shape = s;
        let nd = shape.len();
        shape[nd - 2] = ry.rows;
        shape[nd - 1] = rx.rows;
        let v = Tensor::new(&shape, data)?;
        Ok(self.push(v, Op::SpatialMap { x, ry, rx }, &[x]))
    }

    /// `[N,C,H,W] → [N,C]` global average pooling.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::Dimension(format!("mean_spatial expects 4-D input, got {s:?}")));
        }
        let hw = s[2] * s[3];
        let inv = T::of(1.0 / hw as f64);
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let v = Tensor::new(&[s[0], s[1]], data)?;
        Ok(self.push(v, Op::MeanSpatial(x), &[x]))
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("gather_rows expects 2-D table, got {s:?}")));
        }
        if idx.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let d = s[1];
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= s[0] {
                return Err(Error::Dimension(format!("row {i} out of range for {s:?}")));
            }
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let v = Tensor::new(&[idx.len(), d], data)?;
        Ok(self.push(
            v,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    /// Scales each row of a `[N,D]` tensor to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("normalize_rows expects [N,D], got {s:?}")));
        }
        let d = s[1];
        let src = self.value(x).data();
        let mut norms = Vec::with_capacity(s[0]);
        let mut data = Vec::with_capacity(src.len());
        for (r, row) in src.chunks(d).enumerate() {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(n > T::zero()) || !n.is_finite() {
                return Err(Error::Degenerate(format!("row {r} has norm {n}")));
            }
            norms.push(n);
            data.extend(row.iter().map(|&v| v / n));
        }
        let v = Tensor::new(&s, data)?;
        Ok(self.push(v, Op::NormalizeRows { x, norms }, &[x]))
    }

    /// Mean over `items` of `-log softmax` at each item's target column,
    /// restricted to the item's allowed columns. Uses max-subtraction.
    pub fn cross_entropy(&mut self, logits: Var, items: Vec<CeItem>) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("cross_entropy expects [R,K], got {s:?}")));
        }
        if items.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let k = s[1];
        let z = self.value(logits).data();
        let mut total = 0.0f64;
        for it in &items {
            if it.row >= s[0] || it.allowed.iter().any(|&c| c >= k) {
                return Err(Error::Dimension(format!("item {it:?} out of range for {s:?}")));
            }
            if !it.allowed.contains(&it.target) {
                return Err(Error::Contract(format!("target {} not among allowed columns", it.target)));
            }
            let row = &z[it.row * k..(it.row + 1) * k];
            total += (logsumexp(row, &it.allowed) - row[it.target]).as_f64();
        }
        let v = Tensor::scalar(T::of(total / items.len() as f64));
        Ok(self.push(v, Op::CrossEntropy { logits, items }, &[logits]))
    }

    /// Reverse sweep from a scalar `loss`; consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let n = self.nodes.len();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        let grads = self
            .nodes
            .into_iter()
            .zip(grads)
            .map(|(node, g)| match (node.op, g) {
                (Op::Leaf, Some(g)) if node.grad => Some(Tensor::new(node.value.shape(), g).expect("grad shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].grad;
        let acc = |v: Var, grads: &mut [Option<Vec<T>>], f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
            f(slot);
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, grads, &mut |d| add_into(d, g));
                acc(*b, grads, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, grads, &mut |d| add_into(d, g));
                acc(*b, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, grads, &mut |d| {
                    d.iter_mut().zip(g).zip(vb).for_each(|((d, &g), &y)| *d += g * y)
                });
                acc(*b, grads, &mut |d| {
                    d.iter_mut().zip(g).zip(va).for_each(|((d, &g), &x)| *d += g * x)
                });
            }
            Op::Div(a, b) => {
                let vb = nodes[b.0].value.data();
                let q = out.data();
                acc(*a, grads, &mut |d| {
                    d.iter_mut().zip(g).zip(vb).for_each(|((d, &g), &y)| *d += g / y)
                });
                acc(*b, grads, &mut |d| {
                    d.iter_mut()
                        .zip(g)
                        .zip(vb.iter().zip(q))
                        .for_each(|((d, &g), (&y, &q))| *d -= g * q / y)
                });
            }
            Op::Affine(x, s) => acc(*x, grads, &mut |d| {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *s)
            }),
            Op::ScaleBy(x, s) => {
                let k = nodes[s.0].value.item();
                let vx = nodes[x.0].value.data();
                acc(*x, grads, &mut |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * k));
                acc(*s, grads, &mut |d| {
                    d[0] += g.iter().zip(vx).map(|(&g, &x)| g * x).sum::<T>()
                });
            }
            Op::Relu(x) => acc(*x, grads, &mut |d| {
                d.iter_mut()
                    .zip(g)
                    .zip(out.data())
                    .for_each(|((d, &g), &y)| if y > T::zero() { *d += g })
            }),
            Op::Abs(x) => {
                let vx = nodes[x.0].value.data();
                acc(*x, grads, &mut |d| {
                    d.iter_mut().zip(g).zip(vx).for_each(|((d, &g), &x)| {
                        if x > T::zero() {
                            *d += g
                        } else if x < T::zero() {
                            *d -= g
                        }
                    })
                })
            }
            Op::Sqrt(x) => acc(*x, grads, &mut |d| {
                let half = T::of(0.5);
                d.iter_mut()
                    .zip(g)
                    .zip(out.data())
                    .for_each(|((d, &g), &y)| *d += g * half / y)
            }),
            Op::Exp(x) => acc(*x, grads, &mut |d| {
                d.iter_mut().zip(g).zip(out.data()).for_each(|((d, &g), &y)| *d += g * y)
            }),
            Op::Ln(x) => {
                let vx = nodes[x.0].value.data();
                acc(*x, grads, &mut |d| {
                    d.iter_mut().zip(g).zip(vx).for_each(|((d, &g), &x)| *d += g / x)
                })
            }
            Op::Sum(x) => acc(*x, grads, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let k = g[0] / T::of(nodes[x.0].value.numel() as f64);
                acc(*x, grads, &mut |d| d.iter_mut().for_each(|d| *d += k))
            }
            Op::MatMul { a, b, ta, tb, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                // C = op(A)·op(B); dop(A) = G·op(B)ᵀ, dop(B) = op(A)ᵀ·G
                acc(*a, grads, &mut |d| {
                    if *ta {
                        // stored A is k×m: dA = op(B)·Gᵀ
                        gemm(k, n, m, vb, *tb, g, true, d, true);
                    } else {
                        gemm(m, n, k, g, false, vb, !*tb, d, true);
                    }
                });
                acc(*b, grads, &mut |d| {
                    if *tb {
                        // stored B is n×k: dB = Gᵀ·op(A)
                        gemm(n, m, k, g, true, va, *ta, d, true);
                    } else {
                        gemm(k, m, n, va, !*ta, g, false, d, true);
                    }
                });
            }
            Op::AddBias { x, b, outer, inner } => {
                acc(*x, grads, &mut |d| add_into(d, g));
                let c = nodes[b.0].value.numel();
                acc(*b, grads, &mut |d| {
                    for o in 0..*outer {
                        for (ci, dv) in d.iter_mut().enumerate().take(c) {
                            let start = (o * c + ci) * inner;
                            *dv += g[start..start + inner].iter().copied().sum::<T>();
                        }
                    }
                });
            }
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = conv::backward(
                    nodes[x.0].value.data(),
                    nodes[w.0].value.data(),
                    g,
                    geom,
                    wants(*x),
                    wants(*w),
                );
                if let Some(dx) = dx {
                    acc(*x, grads, &mut |d| add_into(d, &dx));
                }
                if let Some(dw) = dw {
                    acc(*w, grads, &mut |d| add_into(d, &dw));
                }
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, len) in parts {
                    acc(p, grads, &mut |d| {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            add_into(&mut d[o * len * inner..(o + 1) * len * inner], &g[src..src + len * inner]);
                        }
                    });
                    offset += len;
                }
            }
            Op::Narrow {
                x,
                outer,
                axis_len,
                start,
                len,
                inner,
            } => acc(*x, grads, &mut |d| {
                for o in 0..*outer {
                    let dst = (o * axis_len + start) * inner;
                    add_into(&mut d[dst..dst + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                }
            }),
            Op::Reshape(x) => acc(*x, grads, &mut |d| add_into(d, g)),
            Op::SpatialMap { x, ry, rx } => {
                let s = nodes[x.0].value.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let (ho, wo) = (ry.rows, rx.rows);
                acc(*x, grads, &mut |d| {
                    let mut tmp = vec![T::zero(); h * wo];
                    for (p, dp) in d.chunks_mut(h * w).enumerate() {
                        let gp = &g[p * ho * wo..(p + 1) * ho * wo];
                        gemm(h, ho, wo, &ry.data, true, gp, false, &mut tmp, false);
                        gemm(h, wo, w, &tmp, false, &rx.data, false, dp, true);
                    }
                })
            }
            Op::MeanSpatial(x) => {
                let s = nodes[x.0].value.shape();
                let hw = s[2] * s[3];
                let inv = T::of(1.0 / hw as f64);
                acc(*x, grads, &mut |d| {
                    for (chunk, &gv) in d.chunks_mut(hw).zip(g) {
                        chunk.iter_mut().for_each(|v| *v += gv * inv);
                    }
                })
            }
            Op::GatherRows { table, idx } => {
                let dim = nodes[table.0].value.shape()[1];
                acc(*table, grads, &mut |d| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut d[i * dim..(i + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                })
            }
            Op::NormalizeRows { x, norms } => {
                let dim = out.shape()[1];
                acc(*x, grads, &mut |d| {
                    for (r, &nr) in norms.iter().enumerate() {
                        let y = &out.data()[r * dim..(r + 1) * dim];
                        let gr = &g[r * dim..(r + 1) * dim];
                        let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..dim {
                            d[r * dim + j] += (gr[j] - y[j] * dot) / nr;
                        }
                    }
                })
            }
            Op::CrossEntropy { logits, items } => {
                let k = nodes[logits.0].value.shape()[1];
                let z = nodes[logits.0].value.data();
                let scale = g[0] / T::of(items.len() as f64);
                acc(*logits, grads, &mut |d| {
                    for it in items {
                        let row = &z[it.row * k..(it.row + 1) * k];
                        let lse = logsumexp(row, &it.allowed);
                        for &c in &it.allowed {
                            d[it.row * k + c] += scale * (row[c] - lse).exp();
                        }
                        d[it.row * k + it.target] -= scale;
                    }
                })
            }
        }
    }
}

fn logsumexp<T: Real>(row: &[T], allowed: &[usize]) -> T {
    let m = allowed
        .iter()
        .map(|&c| row[c])
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let s: T = allowed.iter().map(|&c| (row[c] - m).exp()).sum();
    m + s.ln()
}

/// Gradients of leaf parameters after a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let l = t.sum(x);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn squared_norm_gradient_is_2x() {
        let xs = vec![0.3, -1.5, 2.0, 4.0];
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::new(&[4], xs.clone()).unwrap());
        let sq = t.square(x);
        let l = t.sum(sq);
        let g = t.backward(l).unwrap();
        let want: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.get(x).unwrap().data(), want.as_slice());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::zeros(&[3]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Tensor::full(&[2], 3.0));
        let p = t.param(Tensor::full(&[2], 2.0));
        let y = t.mul(c, p).unwrap();
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn zero_row_normalization_is_degenerate() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::new(&[2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap());
        assert!(matches!(t.normalize_rows(x), Err(Error::Degenerate(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut t = Tape::<f32>::new();
            let x = t.param(Tensor::from_fn(&[1, 2, 6, 6], |i| (i as f32 * 0.37).sin()));
            let w = t.param(Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f32 * 0.11).cos()));
            let y = t.conv2d(x, w, 1, 1).unwrap();
            let r = t.relu(y);
            let l = t.mean(r);
            let g = t.backward(l).unwrap();
            (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
        };
        assert_eq!(run(), run());
    }
}
