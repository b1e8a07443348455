use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use super::dot;
use crate::{Error, Result};

/// Three-layer perceptron: rectifier on both hidden layers, linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp3 {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
    /// `[input, hidden1, hidden2, output]`.
    pub dims: [usize; 4],
}

impl Mlp3 {
    /// Register `{prefix}.w1 .. {prefix}.b3` with Glorot-uniform weights and
    /// zero biases.
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, dims: [usize; 4], rng: &mut R) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("{prefix}: zero-width layer in {dims:?}")));
        }
        let mut layer = |k: usize| -> Result<(ParamId, ParamId)> {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let w = glorot(fan_out, fan_in, rng);
            let w = store.add(format!("{prefix}.w{}", k + 1), w)?;
            let b = store.add(format!("{prefix}.b{}", k + 1), Tensor::zeros(vec![fan_out]))?;
            Ok((w, b))
        };
        let (w1, b1) = layer(0)?;
        let (w2, b2) = layer(1)?;
        let (w3, b3) = layer(2)?;
        Ok(Mlp3 {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            dims,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[3]
    }

    pub fn layers(&self) -> [(ParamId, ParamId); 3] {
        [(self.w1, self.b1), (self.w2, self.b2), (self.w3, self.b3)]
    }

    /// Plain evaluation without recording a tape.
    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dims[0] {
            return Err(Error::Shape(format!(
                "mlp input has length {}, expected {}",
                x.len(),
                self.dims[0]
            )));
        }
        let mut h = x.to_vec();
        for (k, (w, b)) in self.layers().into_iter().enumerate() {
            let wt = store.get(w);
            let cols = wt.shape()[1];
            let mut out = store.get(b).values().to_vec();
            for (r, o) in out.iter_mut().enumerate() {
                *o += dot(&wt.values()[r * cols..(r + 1) * cols], &h);
            }
            if k < 2 {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        Ok(h)
    }
}

/// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`, stored `[fan_out, fan_in]`.
pub fn glorot<R: Rng>(fan_out: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(vec![fan_out, fan_in], values).expect("shape matches by construction")
}

/// Record `relu(W2 relu(W1 x + b1) + b2)` followed by the linear output layer.
pub fn mlp3_forward(graph: &mut Graph<'_>, net: &Mlp3, x: Var) -> Result<Var> {
    if graph.dim(x) != net.dims[0] {
        return Err(Error::Shape(format!(
            "mlp input has length {}, expected {}",
            graph.dim(x),
            net.dims[0]
        )));
    }
    let h1 = graph.linear(net.w1, Some(net.b1), x)?;
    let h1 = graph.relu(h1);
    let h2 = graph.linear(net.w2, Some(net.b2), h1)?;
    let h2 = graph.relu(h2);
    graph.linear(net.w3, Some(net.b3), h2)
}
