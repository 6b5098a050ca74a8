//! Named parameter tensors and the "PANW" checkpoint container.
//!
//! Layout (little-endian): magic `PANW`, u32 tensor count, then per tensor
//! u32 name length, UTF-8 name, u32 rank, rank × u32 dims, f32 payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ndtensor::{Gradients, Real, Tape, Tensor, Var};
use crate::rasters::read_u32;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PANW";

/// Ordered collection of named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.index(&name).is_some() {
            return Err(Error::Contract(format!("duplicate parameter {name:?}")));
        }
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| Error::Format { offset: 0, msg: format!("checkpoint lacks tensor {name:?}") })
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.index(name).map(move |i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Puts every tensor on `tape`, as parameters or as constants.
    pub fn bind<'a, T: Real>(&'a self, tape: &mut Tape<T>, trainable: bool) -> Bound<'a> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let v = t.cast::<T>();
                if trainable {
                    tape.param(v)
                } else {
                    tape.constant(v)
                }
            })
            .collect();
        Bound { set: self, vars }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.get(..4) != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::format(0, "bad magic, expected PANW"));
        }
        let count = read_u32(bytes, 4)? as usize;
        let mut pos = 8;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u32(bytes, pos)? as usize;
            pos += 4;
            let raw = bytes
                .get(pos..pos + name_len)
                .ok_or_else(|| Error::format(bytes.len() as u64, "truncated tensor name"))?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::format(pos as u64, "tensor name is not UTF-8"))?
                .to_string();
            pos += name_len;
            let rank_at = pos;
            let rank = read_u32(bytes, pos)? as usize;
            pos += 4;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(read_u32(bytes, pos)? as usize);
                pos += 4;
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some())
                .ok_or_else(|| Error::format(rank_at as u64, "tensor size overflows"))?;
            let payload = bytes
                .get(pos..pos + 4 * numel)
                .ok_or_else(|| Error::format(bytes.len() as u64, format!("truncated payload of {name:?}")))?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::format(rank_at as u64, e.to_string()))?;
            set.insert(name, t)
                .map_err(|e| Error::format(rank_at as u64, e.to_string()))?;
            pos += 4 * numel;
        }
        if pos != bytes.len() {
            return Err(Error::format(pos as u64, "trailing bytes after last tensor"));
        }
        Ok(set)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// A [`ParamSet`] placed on a tape.
pub struct Bound<'a> {
    set: &'a ParamSet,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    /// Pairs already-placed variables with `set`, one per tensor in order.
    pub fn from_vars(set: &'a ParamSet, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != set.len() {
            return Err(Error::Contract(format!("{} variables for {} parameters", vars.len(), set.len())));
        }
        Ok(Bound { set, vars })
    }

    /// Variable of parameter `name`; panics on unknown names, which are
    /// programming errors.
    pub fn var(&self, name: &str) -> Var {
        let i = self
            .set
            .index(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in set order, zeros where none arrived.
    pub fn collect<T: Real>(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(self.set.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect()
    }
}
