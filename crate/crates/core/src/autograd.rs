//! Reverse-mode automatic differentiation over whole-matrix operations.
//!
//! A [`Tape`] records each operation as it is evaluated; [`Tape::backward`]
//! walks the record in reverse and accumulates adjoints. Nodes are matrix
//! level (matmul, bias add, rectifier, mask, batch norm, cross-entropy), which
//! is all an MLP needs and keeps the tape a few dozen entries long.

use std::rc::Rc;

use crate::tensor::{matmul_into, matmul_nt, matmul_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Relu(usize),
    Mask(usize, Rc<[f64]>),
    Norm(NormNode),
    CrossEntropy(CeNode),
}

#[derive(Debug)]
struct NormNode {
    input: usize,
    gamma: usize,
    beta: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Statistics were taken over the batch itself, so gradients flow through
    /// the mean and variance as well.
    batch_stats: bool,
}

#[derive(Debug)]
struct CeNode {
    logits: usize,
    labels: Vec<usize>,
    weights: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub const NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        debug_assert_eq!(k, bv.rows());
        let mut out = vec![0.0; n * m];
        matmul_into(av.values(), bv.values(), &mut out, n, k, m);
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a.0, b.0))
    }

    /// Adds a length-`m` vector to every row of an `n×m` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let bv = self.nodes[b.0].value.values();
        let m = xv.cols();
        let mut out = xv.values().to_vec();
        for row in out.chunks_mut(m) {
            for (o, bb) in row.iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::AddBias(x.0, b.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let out = xv.values().iter().map(|v| v.max(0.0)).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Relu(x.0))
    }

    /// Elementwise product with a constant of the same shape (dropout masks,
    /// already scaled by the keep probability).
    pub fn mask(&mut self, x: Var, mask: Rc<[f64]>) -> Var {
        let xv = &self.nodes[x.0].value;
        debug_assert_eq!(xv.len(), mask.len());
        let out = xv.values().iter().zip(mask.iter()).map(|(a, b)| a * b).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Mask(x.0, mask))
    }

    /// Batch normalization over the rows of `x`. With `stats = None` the
    /// per-column mean and biased variance of the batch are used and returned;
    /// otherwise the supplied `(mean, var)` are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&[f64], &[f64])>,
    ) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = &self.nodes[x.0].value;
        let (n, m) = (xv.rows(), xv.cols());
        let (mean, var) = match stats {
            Some((mu, var)) => (mu.to_vec(), var.to_vec()),
            None => column_moments(xv.values(), n, m),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let g = self.nodes[gamma.0].value.values();
        let b = self.nodes[beta.0].value.values();
        let mut xhat = vec![0.0; n * m];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let h = (xv.values()[i * m + j] - mean[j]) * inv_std[j];
                xhat[i * m + j] = h;
                out[i * m + j] = h * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        let node = NormNode {
            input: x.0,
            gamma: gamma.0,
            beta: beta.0,
            xhat,
            inv_std,
            batch_stats: stats.is_none(),
        };
        (self.push(Tensor::from_parts(shape, out), Op::Norm(node)), mean, var)
    }

    /// Scalar `Σ_i w_i · (−log softmax(logits_i)[label_i])`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Var {
        let lv = &self.nodes[logits.0].value;
        let m = lv.cols();
        let mut probs = Vec::with_capacity(lv.len());
        let mut total = 0.0;
        for ((row, &y), &w) in lv.iter_rows().zip(labels).zip(weights) {
            let lse = log_sum_exp(row);
            total += w * neg_log_softmax(row, y);
            probs.extend(row.iter().map(|z| (z - lse).exp()));
        }
        debug_assert_eq!(probs.len(), labels.len() * m);
        let node = CeNode {
            logits: logits.0,
            labels: labels.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        self.push(Tensor::vector(vec![total]), Op::CrossEntropy(node))
    }

    /// Adjoints of the scalar `root` with respect to every node on the tape.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    if !matches!(self.nodes[*a].op, Op::Constant) {
                        let ga = matmul_nt(&g, bv.values(), n, k, m);
                        accumulate(&mut grads[*a], ga);
                    }
                    let gb = matmul_tn(av.values(), &g, n, k, m);
                    accumulate(&mut grads[*b], gb);
                }
                Op::AddBias(x, b) => {
                    let m = self.nodes[*b].value.len();
                    let mut gb = vec![0.0; m];
                    for row in g.chunks(m) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[*b], gb);
                    accumulate(&mut grads[*x], g.clone());
                }
                Op::Relu(x) => {
                    let xv = self.nodes[*x].value.values();
                    let gx = g
                        .iter()
                        .zip(xv)
                        .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[*x], gx);
                }
                Op::Mask(x, mask) => {
                    let gx = g.iter().zip(mask.iter()).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads[*x], gx);
                }
                Op::Norm(nn) => {
                    let xv = &self.nodes[nn.input].value;
                    let (n, m) = (xv.rows(), xv.cols());
                    let gamma = self.nodes[nn.gamma].value.values();
                    let mut ggamma = vec![0.0; m];
                    let mut gbeta = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            ggamma[j] += g[i * m + j] * nn.xhat[i * m + j];
                            gbeta[j] += g[i * m + j];
                        }
                    }
                    let mut gx = vec![0.0; n * m];
                    if nn.batch_stats {
                        let nf = n as f64;
                        for j in 0..m {
                            // dxhat = g * gamma; sums over the batch
                            let s1 = gbeta[j] * gamma[j];
                            let s2 = ggamma[j] * gamma[j];
                            for i in 0..n {
                                let dxhat = g[i * m + j] * gamma[j];
                                gx[i * m + j] = nn.inv_std[j] / nf
                                    * (nf * dxhat - s1 - nn.xhat[i * m + j] * s2);
                            }
                        }
                    } else {
                        for i in 0..n {
                            for j in 0..m {
                                gx[i * m + j] = g[i * m + j] * gamma[j] * nn.inv_std[j];
                            }
                        }
                    }
                    accumulate(&mut grads[nn.gamma], ggamma);
                    accumulate(&mut grads[nn.beta], gbeta);
                    accumulate(&mut grads[nn.input], gx);
                }
                Op::CrossEntropy(ce) => {
                    let upstream = g[0];
                    let m = self.nodes[ce.logits].value.cols();
                    let mut gl = ce.probs.clone();
                    for (i, (&y, &w)) in ce.labels.iter().zip(&ce.weights).enumerate() {
                        gl[i * m + y] -= 1.0;
                        for v in &mut gl[i * m..(i + 1) * m] {
                            *v *= w * upstream;
                        }
                    }
                    accumulate(&mut grads[ce.logits], gl);
                }
            }
            grads[idx] = Some(g);
        }

        Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
                .collect(),
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

pub(crate) fn column_moments(values: &[f64], n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n.max(1) as f64;
    let mut mean = vec![0.0; m];
    for row in values.chunks(m) {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= nf);
    let mut var = vec![0.0; m];
    for row in values.chunks(m) {
        for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|v| *v /= nf);
    (mean, var)
}

/// `−log softmax(row)[y]`, accurate even when the loss is near zero.
pub fn neg_log_softmax(row: &[f64], y: usize) -> f64 {
    let top = crate::nn::argmax(row);
    let max = row[top];
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, z)| (z - max).exp())
        .sum();
    (max - row[y]) + rest.ln_1p()
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `v`, or zeros shaped like it when `v` did not influence the
    /// root.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_bias_relu_chain() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap());
        let w = t.leaf(Tensor::matrix(2, 1, vec![3.0, 1.0]).unwrap());
        let b = t.leaf(Tensor::vector(vec![0.5]));
        let z = t.matmul(x, w);
        let z = t.add_bias(z, b);
        let h = t.relu(z);
        assert_eq!(t.value(h).values(), &[1.5]);
        let logits = {
            let two = t.leaf(Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap());
            t.matmul(h, two)
        };
        let loss = t.cross_entropy(logits, &[0], &[1.0]);
        let g = t.backward(loss);
        // d loss / d logits = softmax - onehot
        let p0 = 1.0 / (1.0 + (-3.0f64).exp());
        let dl = [p0 - 1.0, 1.0 - p0];
        let dh = dl[0] - dl[1];
        let gw = g.of(w).unwrap().values();
        assert!((gw[0] - dh * 1.0).abs() < 1e-12);
        assert!((gw[1] - dh * -2.0).abs() < 1e-12);
        assert!((g.of(b).unwrap().values()[0] - dh).abs() < 1e-12);
    }

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
