//! Reverse-mode tape over dense vectors.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only and records one node per
//! operation. Parameters are read in place (never copied into the tape);
//! their gradients are scattered into a caller-owned [`GradBuffer`] by
//! [`Graph::backward`]. Nodes are stored in creation order, which is a
//! topological order, so backward is a single reverse sweep.

use super::tensor::{GradBuffer, ParamId, ParamStore, Tensor};
use super::{dot, interaction_features, masked_softmax, project, sigmoid, EPS_NORM};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Row(ParamId, usize),
    /// `W x + b`, `W` stored `[out, in]`.
    Linear { w: ParamId, b: Option<ParamId>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Vector times scalar node.
    Scale(Var, Var),
    Affine { x: Var, a: f64 },
    Dot(Var, Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    MaskedSoftmax { x: Var, mask: Vec<bool> },
    WeightedSum { weights: Var, items: Vec<Var> },
    Mean(Vec<Var>),
    Project { e: Var, c: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Gradients of every node with respect to the scalar passed to
/// [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct NodeGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl NodeGrads {
    /// Gradient of `v`, or `None` when `v` does not depend on anything that
    /// requires a gradient.
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// First entry of a node's value, for scalar nodes.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn push(&mut self, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input.
    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Leaf, false)
    }

    pub fn zeros(&mut self, dim: usize) -> Var {
        self.constant(vec![0.0; dim])
    }

    /// Leaf from a tensor; it takes part in backward iff the tensor carries
    /// a gradient slot.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(tensor.values().to_vec(), Op::Leaf, tensor.requires_grad())
    }

    /// A whole parameter, flattened.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).values().to_vec();
        self.push(value, Op::Param(id), true)
    }

    /// Row `row` of a rank-2 parameter (one-hot times table).
    pub fn row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let t = self.params.get(id);
        if t.shape().len() != 2 || row >= t.shape()[0] {
            return Err(Error::Shape(format!(
                "row {row} out of range for parameter {} with shape {:?}",
                self.params.name(id),
                t.shape()
            )));
        }
        let value = t.row(row).to_vec();
        Ok(self.push(value, Op::Row(id, row), true))
    }

    /// `W x + b` for a `[out, in]` weight and optional `[out]` bias.
    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Result<Var> {
        let wt = self.params.get(w);
        if wt.shape().len() != 2 {
            return Err(Error::Shape(format!("weight {} is not a matrix", self.params.name(w))));
        }
        let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
        let xv = &self.nodes[x.0].value;
        check_len("linear input", cols, xv.len())?;
        let mut out = match b {
            Some(b) => {
                let bv = self.params.get(b).values();
                check_len("linear bias", rows, bv.len())?;
                bv.to_vec()
            }
            None => vec![0.0; rows],
        };
        let wv = wt.values();
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(&wv[r * cols..(r + 1) * cols], xv);
        }
        Ok(self.push(out, Op::Linear { w, b, x }, true))
    }

    fn binary(&mut self, what: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_len(what, av.len(), bv.len())?;
        let value = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Vector `x` times the scalar node `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        check_len("scale factor", self.dim(s), 1)?;
        let k = self.scalar(s);
        let value = self.nodes[x.0].value.iter().map(|v| v * k).collect();
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(value, Op::Scale(x, s), rg))
    }

    /// `a * x + b` elementwise with constants `a`, `b`.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let value = self.nodes[x.0].value.iter().map(|v| a * v + b).collect();
        let rg = self.rg(x);
        self.push(value, Op::Affine { x, a }, rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_len("dot", av.len(), bv.len())?;
        let value = vec![dot(av, bv)];
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Dot(a, b), rg))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::with_capacity(parts.iter().map(|&p| self.dim(p)).sum());
        for &p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    /// Stack scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        let mut value = Vec::with_capacity(scalars.len());
        for &s in scalars {
            check_len("stack entry", self.dim(s), 1)?;
            value.push(self.scalar(s));
        }
        let rg = scalars.iter().any(|&s| self.rg(s));
        Ok(self.push(value, Op::Stack(scalars.to_vec()), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.iter().map(|&v| v.ln()).collect();
        let rg = self.rg(x);
        self.push(value, Op::Ln(x), rg)
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.nodes[x.0].value.iter().map(|&v| v.clamp(lo, hi)).collect();
        let rg = self.rg(x);
        self.push(value, Op::Clamp { x, lo, hi }, rg)
    }

    /// Softmax over the valid entries of `x`; an all-invalid mask yields the
    /// zero vector and a zero gradient.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        check_len("softmax mask", self.dim(x), mask.len())?;
        let (value, _empty) = masked_softmax(&self.nodes[x.0].value, mask);
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaskedSoftmax { x, mask: mask.to_vec() }, rg))
    }

    /// `sum_k weights[k] * items[k]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        check_len("weighted sum", self.dim(weights), items.len())?;
        let Some(&first) = items.first() else {
            return Err(Error::Shape("weighted sum over no items".into()));
        };
        let d = self.dim(first);
        let mut value = vec![0.0; d];
        for (k, &it) in items.iter().enumerate() {
            check_len("weighted sum item", self.dim(it), d)?;
            let w = self.nodes[weights.0].value[k];
            value
                .iter_mut()
                .zip(&self.nodes[it.0].value)
                .for_each(|(o, x)| *o += w * x);
        }
        let rg = self.rg(weights) || items.iter().any(|&i| self.rg(i));
        Ok(self.push(
            value,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            rg,
        ))
    }

    /// Arithmetic mean of equally sized vectors.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        let Some(&first) = items.first() else {
            return Err(Error::Shape("mean over no items".into()));
        };
        let d = self.dim(first);
        let mut value = vec![0.0; d];
        for &it in items {
            check_len("mean item", self.dim(it), d)?;
            value.iter_mut().zip(&self.nodes[it.0].value).for_each(|(o, x)| *o += x);
        }
        let inv = 1.0 / items.len() as f64;
        value.iter_mut().for_each(|o| *o *= inv);
        let rg = items.iter().any(|&i| self.rg(i));
        Ok(self.push(value, Op::Mean(items.to_vec()), rg))
    }

    /// Projection of `c` onto the direction of `e`.
    pub fn project(&mut self, e: Var, c: Var) -> Result<Var> {
        check_len("projection", self.dim(e), self.dim(c))?;
        let value = project(&self.nodes[e.0].value, &self.nodes[c.0].value);
        let rg = self.rg(e) || self.rg(c);
        Ok(self.push(value, Op::Project { e, c }, rg))
    }

    /// `[q, k, q - k, q * k]` as tape operations.
    pub fn interaction_features(&mut self, q: Var, k: Var) -> Result<Var> {
        let diff = self.sub(q, k)?;
        let prod = self.mul(q, k)?;
        let out = self.concat(&[q, k, diff, prod]);
        debug_assert_eq!(
            self.value(out),
            interaction_features(self.value(q), self.value(k))?.as_slice()
        );
        Ok(out)
    }

    /// Reverse sweep from the scalar node `loss`, seeded with `seed`.
    /// Parameter gradients are added into `param_grads`.
    pub fn backward_seeded(&self, loss: Var, seed: f64, param_grads: &mut GradBuffer) -> Result<NodeGrads> {
        check_len("backward root", self.dim(loss), 1)?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![seed]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            // Leave the node's own gradient in place for inspection, and work
            // on a clone only where an input needs it.
            let Some(g) = grads[idx].clone() else { continue };
            let mut acc = |v: Var, delta: &dyn Fn(usize) -> f64| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                let n = self.nodes[v.0].value.len();
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
                for (i, s) in slot.iter_mut().enumerate() {
                    *s += delta(i);
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    param_grads.slot(*id).iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Row(id, row) => {
                    let cols = g.len();
                    let slot = &mut param_grads.slot(*id)[row * cols..(row + 1) * cols];
                    slot.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Linear { w, b, x } => {
                    let wt = self.params.get(*w);
                    let cols = wt.shape()[1];
                    let xv = &self.nodes[x.0].value;
                    {
                        let gw = param_grads.slot(*w);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                gw[r * cols..(r + 1) * cols]
                                    .iter_mut()
                                    .zip(xv)
                                    .for_each(|(a, xi)| *a += gr * xi);
                            }
                        }
                    }
                    if let Some(b) = b {
                        param_grads.slot(*b).iter_mut().zip(&g).for_each(|(a, gr)| *a += gr);
                    }
                    if self.nodes[x.0].requires_grad {
                        let wv = wt.values();
                        let slot = grads[x.0].get_or_insert_with(|| vec![0.0; cols]);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                slot.iter_mut()
                                    .zip(&wv[r * cols..(r + 1) * cols])
                                    .for_each(|(s, wi)| *s += gr * wi);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, &|i| g[i]);
                    acc(*b, &|i| g[i]);
                }
                Op::Sub(a, b) => {
                    acc(*a, &|i| g[i]);
                    acc(*b, &|i| -g[i]);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &|i| g[i] * bv[i]);
                    acc(*b, &|i| g[i] * av[i]);
                }
                Op::Scale(x, s) => {
                    let xv = &self.nodes[x.0].value;
                    let k = self.nodes[s.0].value[0];
                    acc(*x, &|i| g[i] * k);
                    let gs = dot(&g, xv);
                    acc(*s, &|_| gs);
                }
                Op::Affine { x, a, .. } => acc(*x, &|i| a * g[i]),
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &|i| g[0] * bv[i]);
                    acc(*b, &|i| g[0] * av[i]);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.len();
                        acc(p, &|i| g[off + i]);
                        off += n;
                    }
                }
                Op::Stack(scalars) => {
                    for (k, &s) in scalars.iter().enumerate() {
                        acc(s, &|_| g[k]);
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    acc(*x, &|i| if xv[i] > 0.0 { g[i] } else { 0.0 });
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    acc(*x, &|i| g[i] * y[i] * (1.0 - y[i]));
                }
                Op::Ln(x) => {
                    let xv = &self.nodes[x.0].value;
                    acc(*x, &|i| g[i] / xv[i]);
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &self.nodes[x.0].value;
                    acc(*x, &|i| if xv[i] >= *lo && xv[i] <= *hi { g[i] } else { 0.0 });
                }
                Op::MaskedSoftmax { x, mask } => {
                    let y = &node.value;
                    let inner: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
                    acc(*x, &|i| if mask[i] { y[i] * (g[i] - inner) } else { 0.0 });
                }
                Op::WeightedSum { weights, items } => {
                    let wv = &self.nodes[weights.0].value;
                    let per_item: Vec<f64> = items.iter().map(|&it| dot(&g, &self.nodes[it.0].value)).collect();
                    acc(*weights, &|k| per_item[k]);
                    for (k, &it) in items.iter().enumerate() {
                        let w = wv[k];
                        acc(it, &|i| w * g[i]);
                    }
                }
                Op::Mean(items) => {
                    let inv = 1.0 / items.len() as f64;
                    for &it in items {
                        acc(it, &|i| inv * g[i]);
                    }
                }
                Op::Project { e, c } => {
                    let (ev, cv) = (&self.nodes[e.0].value, &self.nodes[c.0].value);
                    let norm_sq = dot(ev, ev);
                    if norm_sq.sqrt() >= EPS_NORM {
                        let s = dot(ev, cv) / norm_sq;
                        let ge = dot(&g, ev);
                        // d/dc: (g.e / |e|^2) e
                        acc(*c, &|i| ge / norm_sq * ev[i]);
                        // d/de: s g + (g.e) (c - 2 s e) / |e|^2
                        acc(*e, &|i| s * g[i] + ge * (cv[i] - 2.0 * s * ev[i]) / norm_sq);
                    }
                }
            }
        }
        Ok(NodeGrads { grads })
    }

    /// Backward with unit seed into a fresh buffer.
    pub fn backward(&self, loss: Var) -> Result<(NodeGrads, GradBuffer)> {
        let mut buf = GradBuffer::for_store(self.params);
        let grads = self.backward_seeded(loss, 1.0, &mut buf)?;
        Ok((grads, buf))
    }
}
