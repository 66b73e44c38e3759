//! Deterministic parameter initialization.
//!
//! Every parameter draws from its own stream, derived from the model seed and
//! an FNV-1a hash of the parameter name, so values do not depend on the order
//! in which parameters are visited.

use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::{Param, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Uniform `+-1/sqrt(fan_in)` conv weights, zero biases, identity norms.
    Default,
    /// Like `Default`, but biases, norm affines and running statistics are
    /// random too. Used where generic weights are needed (gradient checks,
    /// non-commutation counterexamples, reachability by VJP).
    Generic,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn init_param<T: Scalar>(p: &mut Param<T>, seed: u64, init: Init) {
    let mut rng = Rng::new(seed).fork(fnv1a(&p.name));
    let generic = init == Init::Generic;
    let role = p.name.rsplit('.').next().unwrap_or("");
    let values: Vec<f64> = match role {
        "weight" => {
            let fan_in: usize = p.shape.iter().skip(1).product::<usize>().max(1);
            let bound = 1.0 / (fan_in as f64).sqrt();
            rng.uniform_vec(p.len(), -bound, bound)
        }
        "bias" | "beta" | "running_mean" if generic => rng.uniform_vec(p.len(), -0.1, 0.1),
        "gamma" | "running_var" if generic => rng.uniform_vec(p.len(), 0.5, 1.5),
        "bias" | "beta" | "running_mean" => vec![0.0; p.len()],
        "gamma" | "running_var" => vec![1.0; p.len()],
        _ => rng.uniform_vec(p.len(), -0.1, 0.1),
    };
    p.data = values.into_iter().map(T::from_f64).collect();
}

pub fn init_all<'a, T: Scalar>(params: impl IntoIterator<Item = &'a mut Param<T>>, seed: u64, init: Init) {
    for p in params {
        init_param(p, seed, init);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_independent() {
        let mut a = Param::<f64>::filled("x.weight", vec![4, 2, 3, 3], 0.0);
        let mut b = Param::<f64>::filled("y.weight", vec![4, 2, 3, 3], 0.0);
        init_param(&mut a, 5, Init::Default);
        init_param(&mut b, 5, Init::Default);
        let mut a2 = a.clone();
        init_param(&mut a2, 5, Init::Default);
        assert_eq!(a, a2);
        assert_ne!(a.data, b.data);
        let bound = 1.0 / 18f64.sqrt();
        assert!(a.data.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn default_biases_are_zero() {
        let mut b = Param::<f32>::filled("x.bias", vec![8], 3.0);
        init_param(&mut b, 1, Init::Default);
        assert!(b.data.iter().all(|&v| v == 0.0));
        init_param(&mut b, 1, Init::Generic);
        assert!(b.data.iter().any(|&v| v != 0.0));
    }
}
