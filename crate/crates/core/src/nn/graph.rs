//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its value; nodes are stored in
//! creation order, so reverse index order is a valid topological order and
//! `backward` visits each node exactly once.

use super::kernels::{col2im, gemm, im2col, Mat};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddChannel(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        stride: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    GatherRows {
        src: Var,
        index: Vec<usize>,
    },
    SegmentMax {
        src: Var,
        argmax: Vec<usize>,
    },
    Transpose(Var),
    Reshape(Var),
    SumRows(Var),
    ReduceSum(Var),
    ReduceMean(Var),
    Square(Var),
    Sqrt(Var),
    ClampMin(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Marks an empty segment in [`Op::SegmentMax`].
const NO_ROW: usize = usize::MAX;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not reach
    /// the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let ng = self.needs(&[a]);
        self.push(value, op, ng)
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.elementwise(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// `[N, C] + [C]`, broadcasting the vector over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(row));
        if ta.shape().len() != 2 || tb.shape() != [ta.shape()[1]] {
            return Err(shape_err("add_row", ta.shape(), tb.shape()));
        }
        let c = ta.shape()[1];
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(&[a, row]);
        Ok(self.push(v, Op::AddRow(a, row), ng))
    }

    /// `[C, H, W] + [C]`, one bias per channel.
    pub fn add_channel(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.shape().len() != 3 || tb.shape() != [ta.shape()[0]] {
            return Err(shape_err("add_channel", ta.shape(), tb.shape()));
        }
        let hw = ta.shape()[1] * ta.shape()[2];
        let mut data = ta.data().to_vec();
        if hw > 0 {
            for (chunk, &b) in data.chunks_mut(hw).zip(tb.data()) {
                for x in chunk {
                    *x += b;
                }
            }
        }
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(&[a, bias]);
        Ok(self.push(v, Op::AddChannel(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let v = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * s).collect(),
        )
        .expect("same shape");
        self.unary(a, v, Op::Scale(a, s))
    }

    /// `[N, K] × [K, M]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        gemm(
            Mat::row_major(ta.data(), n, k),
            Mat::row_major(tb.data(), k, m),
            &mut out,
            0.0,
        );
        let v = Tensor::new(vec![n, m], out)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// 2-D convolution of a `[Cin, H, W]` image with `[Cout, Cin, K, K]`
    /// weights, zero padding `pad` on every side.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.value(input), self.value(weight));
        let (xs, ws) = (tx.shape(), tw.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || stride == 0 {
            return Err(shape_err("conv2d", xs, ws));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(shape_err("conv2d", xs, ws));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let col = im2col(tx.data(), cin, h, w, k, stride, pad, ho, wo);
        let mut out = vec![0.0; cout * ho * wo];
        gemm(
            Mat::row_major(tw.data(), cout, cin * k * k),
            Mat::row_major(&col, cin * k * k, ho * wo),
            &mut out,
            0.0,
        );
        let v = Tensor::new(vec![cout, ho, wo], out)?;
        let ng = self.needs(&[input, weight]);
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                weight,
                stride,
                pad,
            },
            ng,
        ))
    }

    /// Transposed convolution with kernel size equal to `stride` (no
    /// overlap): `[Cin, H, W]` with `[Cin, Cout, s, s]` weights gives
    /// `[Cout, s·H, s·W]`.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, stride: usize) -> Result<Var> {
        let (tx, tw) = (self.value(input), self.value(weight));
        let (xs, ws) = (tx.shape(), tw.shape());
        if xs.len() != 3
            || ws.len() != 4
            || ws[0] != xs[0]
            || ws[2] != stride
            || ws[3] != stride
            || stride == 0
        {
            return Err(shape_err("conv_transpose2d", xs, ws));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let cout = ws[1];
        let s = stride;
        let rows = cout * s * s;
        // tmp[(co, a, b), (y, x)] = Σ_ci W[ci, (co, a, b)] · X[ci, (y, x)]
        let mut tmp = vec![0.0; rows * h * w];
        gemm(
            Mat::row_major(tw.data(), cin, rows).t(),
            Mat::row_major(tx.data(), cin, h * w),
            &mut tmp,
            0.0,
        );
        let (oh, ow) = (h * s, w * s);
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for a in 0..s {
                for b in 0..s {
                    let r = (co * s + a) * s + b;
                    for y in 0..h {
                        let src = &tmp[r * h * w + y * w..r * h * w + (y + 1) * w];
                        let base = co * oh * ow + (y * s + a) * ow + b;
                        for (x, &val) in src.iter().enumerate() {
                            out[base + x * s] = val;
                        }
                    }
                }
            }
        }
        let v = Tensor::new(vec![cout, oh, ow], out)?;
        let ng = self.needs(&[input, weight]);
        Ok(self.push(
            v,
            Op::ConvTranspose2d {
                input,
                weight,
                stride,
            },
            ng,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let v = Tensor::new(
            ta.shape().to_vec(),
            ta.data()
                .iter()
                .map(|&x| if x > 0.0 { x } else { 0.0 })
                .collect(),
        )
        .expect("same shape");
        self.unary(a, v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let v = Tensor::new(
            ta.shape().to_vec(),
            ta.data()
                .iter()
                .map(|&x| 1.0 / (1.0 + (-x).exp()))
                .collect(),
        )
        .expect("same shape");
        self.unary(a, v, Op::Sigmoid(a))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", &base, &[axis]));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, data)?;
        let ng = self.needs(parts);
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Rows `index[i]` of a `[N, C]` tensor, giving `[index.len(), C]`.
    pub fn gather_rows(&mut self, src: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(src);
        if t.shape().len() != 2 {
            return Err(shape_err("gather_rows", t.shape(), &[index.len()]));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= n {
                return Err(shape_err("gather_rows", t.shape(), &[i]));
            }
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let v = Tensor::new(vec![index.len(), c], data)?;
        Ok(self.unary(
            src,
            v,
            Op::GatherRows {
                src,
                index: index.to_vec(),
            },
        ))
    }

    /// Per-segment, per-channel maximum of a `[N, C]` tensor, giving
    /// `[n_segments, C]`. Segments without rows are zero. Ties resolve to the
    /// lowest row index.
    pub fn segment_max(&mut self, src: Var, segment: &[usize], n_segments: usize) -> Result<Var> {
        let t = self.value(src);
        if t.shape().len() != 2 || t.shape()[0] != segment.len() {
            return Err(shape_err("segment_max", t.shape(), &[segment.len()]));
        }
        let c = t.shape()[1];
        let mut argmax = vec![NO_ROW; n_segments * c];
        let mut out = vec![0.0; n_segments * c];
        for (row, &s) in segment.iter().enumerate() {
            if s >= n_segments {
                return Err(shape_err("segment_max", &[s], &[n_segments]));
            }
            let vals = &t.data()[row * c..(row + 1) * c];
            for (ch, &x) in vals.iter().enumerate() {
                let slot = s * c + ch;
                if argmax[slot] == NO_ROW || x > out[slot] {
                    argmax[slot] = row;
                    out[slot] = x;
                }
            }
        }
        let v = Tensor::new(vec![n_segments, c], out)?;
        Ok(self.unary(src, v, Op::SegmentMax { src, argmax }))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(shape_err("transpose", t.shape(), &[2]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let v = Tensor::new(vec![c, r], transpose(t.data(), r, c))?;
        Ok(self.unary(a, v, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(shape_err("reshape", t.shape(), shape));
        }
        let v = t.clone().reshaped(shape.to_vec());
        Ok(self.unary(a, v, Op::Reshape(a)))
    }

    /// Row sums of a `[N, C]` tensor, giving `[N]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(shape_err("sum_rows", t.shape(), &[2]));
        }
        let c = t.shape()[1];
        let data: Vec<f64> = if c == 0 {
            vec![0.0; t.shape()[0]]
        } else {
            t.data().chunks(c).map(|r| r.iter().sum()).collect()
        };
        let v = Tensor::vector(data);
        Ok(self.unary(a, v, Op::SumRows(a)))
    }

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.unary(a, v, Op::ReduceSum(a))
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Empty("reduce_mean input"));
        }
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        Ok(self.unary(a, v, Op::ReduceMean(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let v = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * x).collect(),
        )
        .expect("same shape");
        self.unary(a, v, Op::Square(a))
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let v = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x.sqrt()).collect(),
        )
        .expect("same shape");
        self.unary(a, v, Op::Sqrt(a))
    }

    pub fn clamp_min(&mut self, a: Var, min: f64) -> Var {
        let ta = self.value(a);
        let v = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| x.max(min)).collect(),
        )
        .expect("same shape");
        self.unary(a, v, Op::ClampMin(a, min))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(shape_err(
                "backward (loss must be scalar)",
                lt.shape(),
                &[1],
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn map_like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let neg = gd.iter().map(|x| -x).collect();
                self.accumulate(grads, *b, self.map_like(*b, neg));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.nodes[a.0].needs_grad {
                    let d = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, self.map_like(*a, d));
                }
                if self.nodes[b.0].needs_grad {
                    let d = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, self.map_like(*b, d));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[row.0].needs_grad {
                    let c = self.shape(*row)[0];
                    let mut d = vec![0.0; c];
                    for chunk in gd.chunks(c) {
                        for (acc, x) in d.iter_mut().zip(chunk) {
                            *acc += x;
                        }
                    }
                    self.accumulate(grads, *row, self.map_like(*row, d));
                }
            }
            Op::AddChannel(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[bias.0].needs_grad {
                    let s = self.shape(*a);
                    let hw = s[1] * s[2];
                    let d = (0..s[0])
                        .map(|c| gd[c * hw..(c + 1) * hw].iter().sum())
                        .collect();
                    self.accumulate(grads, *bias, self.map_like(*bias, d));
                }
            }
            Op::Scale(a, s) => {
                let d = gd.iter().map(|x| x * s).collect();
                self.accumulate(grads, *a, self.map_like(*a, d));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.nodes[a.0].needs_grad {
                    let mut d = vec![0.0; n * k];
                    gemm(
                        Mat::row_major(gd, n, m),
                        Mat::row_major(tb.data(), k, m).t(),
                        &mut d,
                        0.0,
                    );
                    self.accumulate(grads, *a, self.map_like(*a, d));
                }
                if self.nodes[b.0].needs_grad {
                    let mut d = vec![0.0; k * m];
                    gemm(
                        Mat::row_major(ta.data(), n, k).t(),
                        Mat::row_major(gd, n, m),
                        &mut d,
                        0.0,
                    );
                    self.accumulate(grads, *b, self.map_like(*b, d));
                }
            }
            Op::Conv2d {
                input,
                weight,
                stride,
                pad,
            } => {
                let (tx, tw) = (self.value(*input), self.value(*weight));
                let (cin, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (cout, k) = (tw.shape()[0], tw.shape()[2]);
                let (ho, wo) = (g.shape()[1], g.shape()[2]);
                let ckk = cin * k * k;
                if self.nodes[weight.0].needs_grad {
                    let col = im2col(tx.data(), cin, h, w, k, *stride, *pad, ho, wo);
                    let mut d = vec![0.0; cout * ckk];
                    gemm(
                        Mat::row_major(gd, cout, ho * wo),
                        Mat::row_major(&col, ckk, ho * wo).t(),
                        &mut d,
                        0.0,
                    );
                    self.accumulate(grads, *weight, self.map_like(*weight, d));
                }
                if self.nodes[input.0].needs_grad {
                    let mut dcol = vec![0.0; ckk * ho * wo];
                    gemm(
                        Mat::row_major(tw.data(), cout, ckk).t(),
                        Mat::row_major(gd, cout, ho * wo),
                        &mut dcol,
                        0.0,
                    );
                    let d = col2im(&dcol, cin, h, w, k, *stride, *pad, ho, wo);
                    self.accumulate(grads, *input, self.map_like(*input, d));
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                stride,
            } => {
                let (tx, tw) = (self.value(*input), self.value(*weight));
                let (cin, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let cout = tw.shape()[1];
                let s = *stride;
                let rows = cout * s * s;
                let (oh, ow) = (h * s, w * s);
                let mut gtmp = vec![0.0; rows * h * w];
                for co in 0..cout {
                    for a in 0..s {
                        for b in 0..s {
                            let r = (co * s + a) * s + b;
                            for y in 0..h {
                                let base = co * oh * ow + (y * s + a) * ow + b;
                                let dst = &mut gtmp[r * h * w + y * w..r * h * w + (y + 1) * w];
                                for (x, slot) in dst.iter_mut().enumerate() {
                                    *slot = gd[base + x * s];
                                }
                            }
                        }
                    }
                }
                if self.nodes[input.0].needs_grad {
                    let mut d = vec![0.0; cin * h * w];
                    gemm(
                        Mat::row_major(tw.data(), cin, rows),
                        Mat::row_major(&gtmp, rows, h * w),
                        &mut d,
                        0.0,
                    );
                    self.accumulate(grads, *input, self.map_like(*input, d));
                }
                if self.nodes[weight.0].needs_grad {
                    let mut d = vec![0.0; cin * rows];
                    gemm(
                        Mat::row_major(tx.data(), cin, h * w),
                        Mat::row_major(&gtmp, rows, h * w).t(),
                        &mut d,
                        0.0,
                    );
                    self.accumulate(grads, *weight, self.map_like(*weight, d));
                }
            }
            Op::Relu(a) => {
                let y = node.value.data();
                let d = gd
                    .iter()
                    .zip(y)
                    .map(|(g, &y)| if y > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, self.map_like(*a, d));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, self.map_like(*a, d));
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let block = self.shape(*p)[*axis] * inner;
                    if self.nodes[p.0].needs_grad {
                        let mut d = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let start = o * total + offset;
                            d.extend_from_slice(&gd[start..start + block]);
                        }
                        self.accumulate(grads, *p, self.map_like(*p, d));
                    }
                    offset += block;
                }
            }
            Op::GatherRows { src, index } => {
                let c = self.shape(*src)[1];
                let mut d = vec![0.0; self.value(*src).len()];
                for (row, &i) in index.iter().enumerate() {
                    for ch in 0..c {
                        d[i * c + ch] += gd[row * c + ch];
                    }
                }
                self.accumulate(grads, *src, self.map_like(*src, d));
            }
            Op::SegmentMax { src, argmax } => {
                let c = self.shape(*src)[1];
                let mut d = vec![0.0; self.value(*src).len()];
                for (slot, &row) in argmax.iter().enumerate() {
                    if row != NO_ROW {
                        d[row * c + slot % c] += gd[slot];
                    }
                }
                self.accumulate(grads, *src, self.map_like(*src, d));
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                let d = transpose(gd, s[0], s[1]);
                self.accumulate(grads, *a, self.map_like(*a, d));
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, self.map_like(*a, gd.to_vec()));
            }
            Op::SumRows(a) => {
                let c = self.shape(*a)[1];
                let d = gd.iter().flat_map(|&g| std::iter::repeat_n(g, c)).collect();
                self.accumulate(grads, *a, self.map_like(*a, d));
            }
            Op::ReduceSum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, self.map_like(*a, vec![gd[0]; n]));
            }
            Op::ReduceMean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, self.map_like(*a, vec![gd[0] / n as f64; n]));
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, x)| 2.0 * x * g).collect();
                self.accumulate(grads, *a, self.map_like(*a, d));
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                let d = gd
                    .iter()
                    .zip(y)
                    .map(|(g, &y)| if y > 0.0 { g / (2.0 * y) } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, self.map_like(*a, d));
            }
            Op::ClampMin(a, min) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > *min { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, self.map_like(*a, d));
            }
        }
    }
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
