//! Reverse-mode differentiation over recorded [`Exec`] calls.

use std::collections::{BTreeMap, HashMap};

use crate::error::{shape_err, Error, Result};
use crate::exec::Exec;
use crate::irmb::attention::{window_attention, window_attention_vjp, AttnSpec};
use crate::ops::{
    conv2d_raw, conv2d_vjp, global_avg_pool, global_avg_pool_vjp, Activation, BatchNorm, ConvSpec, LayerNorm,
};
use crate::tensor::{Param, Scalar, Shape, Tensor};

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Conv { x: usize, w: usize, b: Option<usize>, spec: ConvSpec },
    BatchNorm { x: usize, bn: BatchNorm<T>, gamma: usize, beta: usize },
    LayerNorm { x: usize, ln: LayerNorm<T>, gamma: usize, beta: usize },
    Act { x: usize, act: Activation },
    Add { a: usize, b: usize },
    Attention { q: usize, k: usize, v: usize, spec: AttnSpec },
    Pool { x: usize },
}

/// Recording backend. Variables are node indices.
#[derive(Debug, Default)]
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    inputs: Vec<usize>,
    params: Vec<Param<T>>,
    param_index: HashMap<String, usize>,
}

/// Gradients of `<upstream, output>` with respect to every input and parameter.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// In the order inputs were registered with [`Tape::input`].
    pub inputs: Vec<Tensor<T>>,
    pub params: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { values: Vec::new(), ops: Vec::new(), inputs: Vec::new(), params: Vec::new(), param_index: HashMap::new() }
    }

    pub fn input(&mut self, x: Tensor<T>) -> usize {
        let id = self.push(x, Op::Input);
        self.inputs.push(id);
        id
    }

    pub fn value(&self, id: usize) -> &Tensor<T> {
        &self.values[id]
    }

    fn push(&mut self, v: Tensor<T>, op: Op<T>) -> usize {
        self.values.push(v);
        self.ops.push(op);
        self.values.len() - 1
    }

    fn register(&mut self, p: &Param<T>) -> usize {
        if let Some(&i) = self.param_index.get(&p.name) {
            return i;
        }
        self.params.push(p.clone());
        let i = self.params.len() - 1;
        self.param_index.insert(p.name.clone(), i);
        i
    }

    pub fn backward(&self, output: usize, upstream: &Tensor<T>) -> Result<Gradients<T>> {
        if upstream.shape() != self.values[output].shape() {
            return shape_err(format!("upstream {} for output {}", upstream.shape(), self.values[output].shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        let mut pgrads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        grads[output] = Some(upstream.clone());

        fn accum<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
            *slot = Some(match slot.take() {
                Some(cur) => cur.add(&g)?,
                None => g,
            });
            Ok(())
        }
        fn accum_param<T: Scalar>(dst: &mut [f64], g: &[T]) {
            dst.iter_mut().zip(g).for_each(|(d, v)| *d += v.to_f64());
        }

        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.ops[id] {
                Op::Input => grads[id] = Some(g),
                Op::Conv { x, w, b, spec } => {
                    let cg = conv2d_vjp(&self.values[*x], &self.params[*w].data, spec, &g)?;
                    accum_param(&mut pgrads[*w], &cg.weight);
                    if let (Some(bi), Some(gb)) = (b, &cg.bias) {
                        accum_param(&mut pgrads[*bi], gb);
                    }
                    accum(&mut grads[*x], cg.input)?;
                }
                Op::BatchNorm { x, bn, gamma, beta } => {
                    let (gx, gg, gb) = bn.vjp(&self.values[*x], &g)?;
                    accum_param(&mut pgrads[*gamma], &gg);
                    accum_param(&mut pgrads[*beta], &gb);
                    accum(&mut grads[*x], gx)?;
                }
                Op::LayerNorm { x, ln, gamma, beta } => {
                    let (gx, gg, gb) = ln.vjp(&self.values[*x], &g)?;
                    accum_param(&mut pgrads[*gamma], &gg);
                    accum_param(&mut pgrads[*beta], &gb);
                    accum(&mut grads[*x], gx)?;
                }
                Op::Act { x, act } => {
                    let gx = act.vjp(&self.values[*x], &g)?;
                    accum(&mut grads[*x], gx)?;
                }
                Op::Add { a, b } => {
                    accum(&mut grads[*a], g.clone())?;
                    accum(&mut grads[*b], g)?;
                }
                Op::Attention { q, k, v, spec } => {
                    let ag = window_attention_vjp(&self.values[*q], &self.values[*k], &self.values[*v], spec, &g)?;
                    accum(&mut grads[*q], ag.q)?;
                    accum(&mut grads[*k], ag.k)?;
                    accum(&mut grads[*v], ag.v)?;
                }
                Op::Pool { x } => {
                    let gx = global_avg_pool_vjp(self.values[*x].shape(), &g);
                    accum(&mut grads[*x], gx)?;
                }
            }
        }

        let inputs = self
            .inputs
            .iter()
            .map(|&i| grads[i].clone().unwrap_or_else(|| Tensor::zeros(self.values[i].shape())))
            .collect();
        let params = self
            .params
            .iter()
            .zip(pgrads)
            .map(|(p, g)| (p.name.clone(), g.into_iter().map(T::from_f64).collect()))
            .collect();
        Ok(Gradients { inputs, params })
    }
}

impl<T: Scalar> Exec<T> for Tape<T> {
    type Var = usize;

    fn shape(&self, x: &usize) -> Shape {
        self.values[*x].shape()
    }

    fn conv(&mut self, x: &usize, w: &Param<T>, b: Option<&Param<T>>, spec: &ConvSpec) -> Result<usize> {
        let y = conv2d_raw(&self.values[*x], &w.data, b.map(|b| b.data.as_slice()), spec)?;
        let w = self.register(w);
        let b = b.map(|b| self.register(b));
        Ok(self.push(y, Op::Conv { x: *x, w, b, spec: *spec }))
    }

    fn batch_norm(&mut self, x: &usize, bn: &BatchNorm<T>) -> Result<usize> {
        let y = bn.forward(&self.values[*x])?;
        let gamma = self.register(&bn.gamma);
        let beta = self.register(&bn.beta);
        Ok(self.push(y, Op::BatchNorm { x: *x, bn: bn.clone(), gamma, beta }))
    }

    fn layer_norm(&mut self, x: &usize, ln: &LayerNorm<T>) -> Result<usize> {
        let y = ln.forward(&self.values[*x])?;
        let gamma = self.register(&ln.gamma);
        let beta = self.register(&ln.beta);
        Ok(self.push(y, Op::LayerNorm { x: *x, ln: ln.clone(), gamma, beta }))
    }

    fn activate(&mut self, x: &usize, act: Activation) -> Result<usize> {
        let y = act.forward(&self.values[*x]);
        Ok(self.push(y, Op::Act { x: *x, act }))
    }

    fn add(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let y = self.values[*a].add(&self.values[*b])?;
        Ok(self.push(y, Op::Add { a: *a, b: *b }))
    }

    fn attention(&mut self, q: &usize, k: &usize, v: &usize, spec: &AttnSpec) -> Result<usize> {
        let y = window_attention(&self.values[*q], &self.values[*k], &self.values[*v], spec)?;
        Ok(self.push(y, Op::Attention { q: *q, k: *k, v: *v, spec: *spec }))
    }

    fn avg_pool(&mut self, x: &usize) -> Result<usize> {
        let y = global_avg_pool(&self.values[*x]);
        Ok(self.push(y, Op::Pool { x: *x }))
    }
}

impl<T> Gradients<T> {
    pub fn param(&self, name: &str) -> Result<&[T]> {
        self.params
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Config(format!("no gradient recorded for parameter `{name}`")))
    }
}
