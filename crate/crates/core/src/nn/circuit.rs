//! Reverse-mode differentiation over a recorded computation.
//!
//! A [`Circuit`] is an append-only list of nodes. Every node's inputs have
//! smaller indices, so the list is already in topological order and the
//! backward pass is a single reverse sweep.

use crate::inference::ProbAlgebra;
use crate::nn::Linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Constant vector (features); receives no gradient.
    Input,
    /// Constant scalar.
    Const,
    /// `W x + b` with the parameters of layer `layer`.
    Affine {
        layer: usize,
        x: NodeId,
    },
    Relu(NodeId),
    Softmax(NodeId),
    /// Scalar component of a vector node.
    Pick(NodeId, usize),
    Concat(Vec<NodeId>),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `1 - a`
    OneMinus(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Circuit<'p> {
    layers: Vec<&'p Linear>,
    nodes: Vec<Node>,
}

impl<'p> Circuit<'p> {
    /// Starts an empty circuit over the given parameter layers. `Affine`
    /// nodes refer to layers by position in this list.
    pub fn new(layers: Vec<&'p Linear>) -> Self {
        Self { layers, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn layers(&self) -> &[&'p Linear] {
        &self.layers
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, x: &[f64]) -> NodeId {
        self.push(Op::Input, x.to_vec())
    }

    pub fn affine(&mut self, layer: usize, x: NodeId) -> NodeId {
        let value = self.layers[layer].apply(self.value(x));
        self.push(Op::Affine { layer, x }, value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).iter().map(|v| v.max(0.0)).collect();
        self.push(Op::Relu(a), value)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let value = softmax(self.value(a));
        self.push(Op::Softmax(a), value)
    }

    pub fn pick(&mut self, a: NodeId, i: usize) -> NodeId {
        let value = vec![self.value(a)[i]];
        self.push(Op::Pick(a, i), value)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let value = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        self.push(Op::Concat(parts.to_vec()), value)
    }

    /// Gradients of `seed * value(output)` with respect to every layer's
    /// weights and biases. `output` must be a scalar node.
    pub fn backward(&self, output: NodeId, seed: f64) -> Vec<Linear> {
        let mut grads: Vec<Linear> = self.layers.iter().map(|l| l.zeros_like()).collect();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(vec![seed]);

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Const => {}
                Op::Affine { layer, x } => {
                    let w = self.layers[*layer];
                    let xv = &self.nodes[x.0].value;
                    let gl = &mut grads[*layer];
                    for (r, gr) in g.iter().enumerate() {
                        gl.bias[r] += gr;
                        let row = &mut gl.weight[r * w.inputs..(r + 1) * w.inputs];
                        for (gw, xj) in row.iter_mut().zip(xv) {
                            *gw += gr * xj;
                        }
                    }
                    if !matches!(self.nodes[x.0].op, Op::Input) {
                        let gx = accum(&mut adj, *x, w.inputs);
                        for (r, gr) in g.iter().enumerate() {
                            for (gxj, wj) in gx.iter_mut().zip(w.row(r)) {
                                *gxj += gr * wj;
                            }
                        }
                    }
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga = accum(&mut adj, *a, av.len());
                    for ((gai, gi), ai) in ga.iter_mut().zip(&g).zip(av) {
                        if *ai > 0.0 {
                            *gai += gi;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    let ga = accum(&mut adj, *a, y.len());
                    for ((gai, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *gai += yi * (gi - dot);
                    }
                }
                Op::Pick(a, idx) => {
                    let n = self.nodes[a.0].value.len();
                    accum(&mut adj, *a, n)[*idx] += g[0];
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        let gp = accum(&mut adj, *p, n);
                        for (gpi, gi) in gp.iter_mut().zip(&g[offset..offset + n]) {
                            *gpi += gi;
                        }
                        offset += n;
                    }
                }
                Op::Add(a, b) => {
                    accum(&mut adj, *a, 1)[0] += g[0];
                    accum(&mut adj, *b, 1)[0] += g[0];
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.nodes[a.0].value[0], self.nodes[b.0].value[0]);
                    accum(&mut adj, *a, 1)[0] += g[0] * bv;
                    accum(&mut adj, *b, 1)[0] += g[0] * av;
                }
                Op::OneMinus(a) => {
                    accum(&mut adj, *a, 1)[0] -= g[0];
                }
            }
        }
        grads
    }
}

fn accum(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    adj[id.0].get_or_insert_with(|| vec![0.0; len])
}

impl ProbAlgebra for Circuit<'_> {
    type Value = NodeId;

    fn constant(&mut self, v: f64) -> NodeId {
        self.push(Op::Const, vec![v])
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = vec![self.scalar(*a) + self.scalar(*b)];
        self.push(Op::Add(*a, *b), value)
    }

    fn mul(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = vec![self.scalar(*a) * self.scalar(*b)];
        self.push(Op::Mul(*a, *b), value)
    }

    fn complement(&mut self, a: &NodeId) -> NodeId {
        let value = vec![1.0 - self.scalar(*a)];
        self.push(Op::OneMinus(*a), value)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(outputs: usize, inputs: usize, vals: &[f64]) -> Linear {
        let n = outputs * inputs;
        Linear { inputs, outputs, weight: vals[..n].to_vec(), bias: vals[n..n + outputs].to_vec() }
    }

    /// Central difference of `f` with respect to every parameter of `layers`.
    fn numeric_grad(layers: &[Linear], f: &dyn Fn(&[Linear]) -> f64) -> Vec<Linear> {
        let h = 1e-5;
        let mut out: Vec<Linear> = layers.iter().map(Linear::zeros_like).collect();
        for li in 0..layers.len() {
            for (is_bias, len) in [(false, layers[li].weight.len()), (true, layers[li].bias.len())] {
                for j in 0..len {
                    let eval = |delta: f64| {
                        let mut ls = layers.to_vec();
                        let slot = if is_bias { &mut ls[li].bias[j] } else { &mut ls[li].weight[j] };
                        *slot += delta;
                        f(&ls)
                    };
                    let d = (eval(h) - eval(-h)) / (2.0 * h);
                    if is_bias {
                        out[li].bias[j] = d;
                    } else {
                        out[li].weight[j] = d;
                    }
                }
            }
        }
        out
    }

    fn assert_close(a: &[Linear], b: &[Linear]) {
        for (la, lb) in a.iter().zip(b) {
            for (x, y) in la.weight.iter().chain(&la.bias).zip(lb.weight.iter().chain(&lb.bias)) {
                let tol = (1e-4 * x.abs().max(y.abs())).max(1e-6);
                assert!((x - y).abs() <= tol, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn softmax_normalizes_and_survives_large_logits() {
        let p = softmax(&[1000.0, 0.0, -1000.0]);
        assert_eq!(p[0], 1.0);
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn primitives_match_finite_differences() {
        let layers = vec![
            layer(3, 2, &[0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.05, -0.1, 0.2]),
            layer(
                3,
                6,
                &[
                    0.1, 0.2, -0.3, 0.4, -0.1, 0.05, -0.2, 0.3, 0.1, -0.25, 0.15, 0.2, 0.3, -0.1, 0.2, 0.1, 0.05, -0.3,
                    0.01, 0.02, -0.03,
                ],
            ),
        ];
        let x = [0.7, -1.3];
        let build = |ls: &[Linear]| -> f64 {
            let refs: Vec<&Linear> = ls.iter().collect();
            let mut c = Circuit::new(refs);
            let (out, _) = sample_graph(&mut c, &x);
            c.scalar(out)
        };
        let refs: Vec<&Linear> = layers.iter().collect();
        let mut c = Circuit::new(refs);
        let (out, _) = sample_graph(&mut c, &x);
        assert_close(&c.backward(out, 1.0), &numeric_grad(&layers, &build));
    }

    /// Touches every op: affine, relu, concat, softmax, pick, add, mul, one-minus.
    fn sample_graph(c: &mut Circuit<'_>, x: &[f64]) -> (NodeId, NodeId) {
        let xi = c.input(x);
        let h = c.affine(0, xi);
        let r = c.relu(h);
        let cat = c.concat(&[h, r]);
        let z = c.affine(1, cat);
        let s = c.softmax(z);
        let a = c.pick(s, 0);
        let b = c.pick(s, 2);
        let nb = c.complement(&b);
        let ab = c.mul(&a, &nb);
        let k = c.constant(0.3);
        let out = c.add(&ab, &k);
        let out = c.mul(&out, &a);
        (out, s)
    }

    #[test]
    fn seed_scales_gradients_linearly() {
        let layers = [layer(2, 2, &[0.5, -0.3, 0.2, 0.8, 0.1, -0.1])];
        let refs: Vec<&Linear> = layers.iter().collect();
        let mut c = Circuit::new(refs);
        let x = c.input(&[1.0, 2.0]);
        let z = c.affine(0, x);
        let s = c.softmax(z);
        let p = c.pick(s, 1);
        let g1 = c.backward(p, 1.0);
        let g2 = c.backward(p, 2.0);
        for (a, b) in g1[0].weight.iter().zip(&g2[0].weight) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn inputs_precede_their_consumers() {
        let layers = [layer(2, 2, &[0.5, -0.3, 0.2, 0.8, 0.1, -0.1])];
        let refs: Vec<&Linear> = layers.iter().collect();
        let mut c = Circuit::new(refs);
        let x = c.input(&[1.0, 2.0]);
        let z = c.affine(0, x);
        let s = c.softmax(z);
        let p = c.pick(s, 1);
        let q = c.complement(&p);
        let _ = c.mul(&p, &q);
        for i in 0..c.len() {
            let deps: Vec<NodeId> = match c.op(NodeId(i)) {
                Op::Input | Op::Const => vec![],
                Op::Affine { x, .. } => vec![*x],
                Op::Relu(a) | Op::Softmax(a) | Op::Pick(a, _) | Op::OneMinus(a) => vec![*a],
                Op::Concat(ps) => ps.clone(),
                Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            };
            assert!(deps.iter().all(|d| d.0 < i));
        }
    }
}
