//! Execution backends for block and model forward passes.
//!
//! Blocks are written once against [`Exec`]. [`Eval`] runs the kernels
//! directly and tallies the work it performs; [`crate::tape::Tape`] records
//! the same calls for reverse-mode differentiation.

use crate::error::Result;
use crate::irmb::attention::{window_attention, AttnSpec};
use crate::ops::{conv2d_raw, global_avg_pool, Activation, BatchNorm, ConvSpec, LayerNorm};
use crate::tensor::{Param, Scalar, Shape, Tensor};

pub trait Exec<T: Scalar> {
    type Var: Clone;

    fn shape(&self, x: &Self::Var) -> Shape;
    fn conv(&mut self, x: &Self::Var, w: &Param<T>, b: Option<&Param<T>>, spec: &ConvSpec) -> Result<Self::Var>;
    fn batch_norm(&mut self, x: &Self::Var, bn: &BatchNorm<T>) -> Result<Self::Var>;
    fn layer_norm(&mut self, x: &Self::Var, ln: &LayerNorm<T>) -> Result<Self::Var>;
    fn activate(&mut self, x: &Self::Var, act: Activation) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn attention(&mut self, q: &Self::Var, k: &Self::Var, v: &Self::Var, spec: &AttnSpec) -> Result<Self::Var>;
    fn avg_pool(&mut self, x: &Self::Var) -> Result<Self::Var>;
}

/// Work actually performed by kernels during an [`Eval`] pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceCounts {
    pub macs: u64,
    pub softmax_flops: u64,
}

impl TraceCounts {
    pub fn flops_2x(&self) -> u64 {
        2 * self.macs + self.softmax_flops
    }
}

/// Direct evaluation.
#[derive(Debug, Default)]
pub struct Eval {
    pub trace: TraceCounts,
}

impl Eval {
    pub fn new() -> Self {
        Eval::default()
    }
}

impl<T: Scalar> Exec<T> for Eval {
    type Var = Tensor<T>;

    fn shape(&self, x: &Tensor<T>) -> Shape {
        x.shape()
    }

    fn conv(&mut self, x: &Tensor<T>, w: &Param<T>, b: Option<&Param<T>>, spec: &ConvSpec) -> Result<Tensor<T>> {
        let y = conv2d_raw(x, &w.data, b.map(|b| b.data.as_slice()), spec)?;
        let s = y.shape();
        self.trace.macs += s.n as u64 * spec.macs(s.h, s.w);
        Ok(y)
    }

    fn batch_norm(&mut self, x: &Tensor<T>, bn: &BatchNorm<T>) -> Result<Tensor<T>> {
        bn.forward(x)
    }

    fn layer_norm(&mut self, x: &Tensor<T>, ln: &LayerNorm<T>) -> Result<Tensor<T>> {
        ln.forward(x)
    }

    fn activate(&mut self, x: &Tensor<T>, act: Activation) -> Result<Tensor<T>> {
        Ok(act.forward(x))
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.add(b)
    }

    fn attention(&mut self, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, spec: &AttnSpec) -> Result<Tensor<T>> {
        let out = window_attention(q, k, v, spec)?;
        let layout = spec.check(q.shape(), k.shape(), v.shape())?;
        let n = q.shape().n as u64;
        self.trace.macs += n * spec.macs(q.shape().c, v.shape().c, &layout);
        self.trace.softmax_flops += n * spec.softmax_flops(&layout);
        Ok(out)
    }

    fn avg_pool(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(global_avg_pool(x))
    }
}
