// SPDX-License-Identifier: Apache-2.0

//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every backward rule is itself expressed with graph operations, so the
//! gradients returned by [`Graph::grad`] are ordinary [`Var`]s that can be
//! differentiated again. The gradient penalty relies on this: it needs the
//! parameter gradient of a function of the critic's input gradient.
//!
//! A graph lives for a single optimization step and is then dropped.

use ndarray::{concatenate, s, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    BroadcastScalar(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    PadCols(Var, usize),
    RowNorm(Var),
    InvSafe(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input or parameter.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "add");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "sub");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "mul");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "div");
        let value = self.value(a) / self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Div(a, b), rg)
    }

    /// `a + bias` with a `1 × n` bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        assert_eq!(self.shape(bias).0, 1, "bias must be a row vector");
        assert_eq!(self.shape(a).1, self.shape(bias).1, "bias width");
        let value = self.value(a) + self.value(bias);
        let rg = self.rg(&[a, bias]);
        self.push(value, Op::AddBias(a, bias), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// `a + c` element-wise.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let rg = self.rg(&[a]);
        self.push(value, Op::Shift(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let rg = self.rg(&[a]);
        self.push(value, Op::Log(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|v| v.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums: `b × n → 1 × n`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(&[a]);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Row sums: `b × n → b × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(&[a]);
        self.push(value, Op::SumCols(a), rg)
    }

    pub fn broadcast_scalar(&mut self, a: Var, shape: (usize, usize)) -> Var {
        let value = Array2::from_elem(shape, self.scalar(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::BroadcastScalar(a), rg)
    }

    /// `1 × n → rows × n`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let n = self.shape(a).1;
        let value = self.value(a).broadcast((rows, n)).unwrap().to_owned();
        let rg = self.rg(&[a]);
        self.push(value, Op::BroadcastRows(a), rg)
    }

    /// `b × 1 → b × cols`.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let b = self.shape(a).0;
        let value = self.value(a).broadcast((b, cols)).unwrap().to_owned();
        let rg = self.rg(&[a]);
        self.push(value, Op::BroadcastCols(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let rg = self.rg(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Embeds `a` at column offset `start` of a zero matrix `total` columns wide.
    fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Var {
        let (rows, len) = self.shape(a);
        let mut value = Array2::zeros((rows, total));
        value
            .slice_mut(s![.., start..start + len])
            .assign(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::PadCols(a, start), rg)
    }

    /// Euclidean norm of every row: `b × n → b × 1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        let rg = self.rg(&[a]);
        self.push(value, Op::RowNorm(a), rg)
    }

    /// `1 / a`, with `0` wherever `a == 0`.
    fn inv_safe(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| if v == 0.0 { 0.0 } else { 1.0 / v });
        let rg = self.rg(&[a]);
        self.push(value, Op::InvSafe(a), rg)
    }

    fn assert_same(&self, a: Var, b: Var, op: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{op}: operand shapes differ");
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Returned gradients are graph nodes and may be differentiated further.
    /// A `wrt` entry with no path to `output` gets a zero constant.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(output), (1, 1), "grad needs a scalar output");
        let seed = self.constant(Array2::ones((1, 1)));
        self.grad_with_seed(output, seed, wrt)
    }

    pub fn grad_with_seed(&mut self, output: Var, seed: Var, wrt: &[Var]) -> Vec<Var> {
        let end = output.0 + 1;
        // nodes on a path from some `wrt` entry to `output`
        let mut relevant = vec![false; end];
        for w in wrt {
            if w.0 < end {
                relevant[w.0] = true;
            }
        }
        for i in 0..end {
            if relevant[i] || !self.nodes[i].requires_grad {
                continue;
            }
            relevant[i] = parents(&self.nodes[i].op).iter().any(|p| relevant[p.0]);
        }

        let mut grads: Vec<Option<Var>> = vec![None; end];
        grads[output.0] = Some(seed);
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (parent, pg) in self.backward(Var(i), &op, g, &relevant) {
                if !relevant[parent.0] {
                    continue;
                }
                grads[parent.0] = Some(match grads[parent.0] {
                    Some(prev) => self.add(prev, pg),
                    None => pg,
                });
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(*w);
                    self.constant(Array2::zeros(shape))
                }
            })
            .collect()
    }

    /// Parent gradients of one node; parents outside `relevant` are skipped.
    fn backward(&mut self, out: Var, op: &Op, g: Var, relevant: &[bool]) -> Vec<(Var, Var)> {
        let need = |v: Var| relevant[v.0];
        match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out_grads = Vec::with_capacity(2);
                if need(a) {
                    let bt = self.transpose(b);
                    out_grads.push((a, self.matmul(g, bt)));
                }
                if need(b) {
                    let at = self.transpose(a);
                    out_grads.push((b, self.matmul(at, g)));
                }
                out_grads
            }
            Op::Transpose(a) => vec![(a, self.transpose(g))],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => {
                let mut out_grads = vec![(a, g)];
                if need(b) {
                    out_grads.push((b, self.scale(g, -1.0)));
                }
                out_grads
            }
            Op::Mul(a, b) => {
                let mut out_grads = Vec::with_capacity(2);
                if need(a) {
                    out_grads.push((a, self.mul(g, b)));
                }
                if need(b) {
                    out_grads.push((b, self.mul(g, a)));
                }
                out_grads
            }
            Op::Div(a, b) => {
                let mut out_grads = Vec::with_capacity(2);
                if need(a) {
                    out_grads.push((a, self.div(g, b)));
                }
                if need(b) {
                    let go = self.mul(g, out);
                    let q = self.div(go, b);
                    out_grads.push((b, self.scale(q, -1.0)));
                }
                out_grads
            }
            Op::AddBias(a, bias) => {
                let mut out_grads = vec![(a, g)];
                if need(bias) {
                    out_grads.push((bias, self.sum_rows(g)));
                }
                out_grads
            }
            Op::Scale(a, c) => vec![(a, self.scale(g, c))],
            Op::Shift(a) => vec![(a, g)],
            Op::Relu(a) => {
                let step = self.value(a).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let step = self.constant(step);
                vec![(a, self.mul(g, step))]
            }
            Op::Sigmoid(a) => {
                let neg = self.scale(out, -1.0);
                let one_minus = self.shift(neg, 1.0);
                let slope = self.mul(out, one_minus);
                vec![(a, self.mul(g, slope))]
            }
            Op::Log(a) => vec![(a, self.div(g, a))],
            Op::Clamp(a, lo, hi) => {
                let inside = self
                    .value(a)
                    .mapv(|v| if v >= lo && v <= hi { 1.0 } else { 0.0 });
                let inside = self.constant(inside);
                vec![(a, self.mul(g, inside))]
            }
            Op::SumAll(a) => {
                let shape = self.shape(a);
                vec![(a, self.broadcast_scalar(g, shape))]
            }
            Op::SumRows(a) => {
                let rows = self.shape(a).0;
                vec![(a, self.broadcast_rows(g, rows))]
            }
            Op::SumCols(a) => {
                let cols = self.shape(a).1;
                vec![(a, self.broadcast_cols(g, cols))]
            }
            Op::BroadcastScalar(a) => vec![(a, self.sum_all(g))],
            Op::BroadcastRows(a) => vec![(a, self.sum_rows(g))],
            Op::BroadcastCols(a) => vec![(a, self.sum_cols(g))],
            Op::ConcatCols(ref parts) => {
                let mut offset = 0;
                let mut out_grads = Vec::with_capacity(parts.len());
                for &p in parts {
                    let len = self.shape(p).1;
                    out_grads.push((p, self.slice_cols(g, offset, len)));
                    offset += len;
                }
                out_grads
            }
            Op::SliceCols(a, start) => {
                let total = self.shape(a).1;
                vec![(a, self.pad_cols(g, start, total))]
            }
            Op::PadCols(a, start) => {
                let len = self.shape(a).1;
                vec![(a, self.slice_cols(g, start, len))]
            }
            Op::RowNorm(a) => {
                let inv = self.inv_safe(out);
                let gi = self.mul(g, inv);
                let cols = self.shape(a).1;
                let gb = self.broadcast_cols(gi, cols);
                vec![(a, self.mul(gb, a))]
            }
            Op::InvSafe(a) => {
                let sq = self.mul(out, out);
                let neg = self.scale(sq, -1.0);
                vec![(a, self.mul(g, neg))]
            }
        }
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match *op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::AddBias(a, b) => vec![a, b],
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::Shift(a)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Log(a)
        | Op::Clamp(a, _, _)
        | Op::SumAll(a)
        | Op::SumRows(a)
        | Op::SumCols(a)
        | Op::BroadcastScalar(a)
        | Op::BroadcastRows(a)
        | Op::BroadcastCols(a)
        | Op::SliceCols(a, _)
        | Op::PadCols(a, _)
        | Op::RowNorm(a)
        | Op::InvSafe(a) => vec![a],
        Op::ConcatCols(ref parts) => parts.clone(),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// In-place `acc += other`, used when summing gradient values outside a graph.
pub fn accumulate(acc: &mut Array2<f64>, other: &Array2<f64>) {
    Zip::from(acc).and(other).for_each(|a, &b| *a += b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (i, j) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            g[[i, j]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            let scale = x.abs().max(y.abs()).max(1.0);
            assert!((x - y).abs() / scale < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matmul_bias_sigmoid_gradient() {
        let w0 = array![[0.3, -0.2], [0.1, 0.4], [-0.5, 0.2]];
        let x = array![[1.0, 2.0, -1.0], [0.5, -0.3, 0.8]];
        let f = |w: &Array2<f64>| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.leaf(w.clone());
            let b = g.constant(array![[0.1, -0.1]]);
            let h = g.matmul(xv, wv);
            let h = g.add_bias(h, b);
            let s = g.sigmoid(h);
            let l = g.log(s);
            let sum = g.sum_all(l);
            g.scalar(sum)
        };
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.leaf(w0.clone());
        let b = g.constant(array![[0.1, -0.1]]);
        let h = g.matmul(xv, wv);
        let h = g.add_bias(h, b);
        let s = g.sigmoid(h);
        let l = g.log(s);
        let sum = g.sum_all(l);
        let gw = g.grad(sum, &[wv])[0];
        assert_close(g.value(gw), &numeric_grad(f, &w0), 1e-7);
    }

    #[test]
    fn second_order_through_input_gradient() {
        // f(w) = || d/dx sum(tanh-free relu mlp) ||^2, checked against finite differences
        let x = array![[0.7, -0.4, 1.1]];
        let w2 = array![[0.5], [-1.2]];
        let build = |g: &mut Graph, w: &Array2<f64>| {
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let w2v = g.constant(w2.clone());
            let h = g.matmul(xv, wv);
            let h = g.sigmoid(h);
            let o = g.matmul(h, w2v);
            let o = g.sum_all(o);
            let gx = g.grad(o, &[xv])[0];
            let n = g.row_norm(gx);
            let n = g.shift(n, -1.0);
            let sq = g.mul(n, n);
            let out = g.sum_all(sq);
            (wv, out)
        };
        let w = array![[0.3, -0.2], [0.1, 0.4], [-0.5, 0.2]];
        let mut g = Graph::new();
        let (wv, out) = build(&mut g, &w);
        let gw = g.grad(out, &[wv])[0];
        let numeric = numeric_grad(
            |w| {
                let mut g = Graph::new();
                let (_, out) = build(&mut g, w);
                g.scalar(out)
            },
            &w,
        );
        assert_close(g.value(gw), &numeric, 1e-6);
    }

    #[test]
    fn concat_slice_and_norm_handle_zero() {
        let mut g = Graph::new();
        let a = g.leaf(array![[1.0, 2.0]]);
        let b = g.leaf(array![[0.0]]);
        let c = g.concat_cols(&[a, b]);
        let s = g.slice_cols(c, 1, 2);
        let z = g.scale(s, 0.0);
        let n = g.row_norm(z);
        let total = g.sum_all(n);
        let grads = g.grad(total, &[a, b]);
        assert_eq!(g.value(grads[0]), &array![[0.0, 0.0]]);
        assert_eq!(g.value(grads[1]), &array![[0.0]]);
    }

    #[test]
    fn unrelated_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(array![[2.0]]);
        let b = g.leaf(array![[3.0]]);
        let sq = g.mul(a, a);
        let s = g.sum_all(sq);
        let grads = g.grad(s, &[a, b]);
        assert_eq!(g.value(grads[0])[[0, 0]], 4.0);
        assert_eq!(g.value(grads[1])[[0, 0]], 0.0);
    }
}
