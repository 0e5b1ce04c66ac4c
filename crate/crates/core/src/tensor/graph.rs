use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{axis_split, ParamGrads, ParamId, ParamStore, Real, Tensor, TensorError};

type Result<T> = core::result::Result<T, TensorError>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Input,
    Param,
    Add(Var, Var),
    /// Right operand repeats over the leading axes of the left one.
    AddBroadcast(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    GlobalAvgPool(Var),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Dropout(Var, Vec<T>),
    MaxAxis {
        x: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// One forward pass. Parameters are copied in on first use.
pub struct Graph<'p, T> {
    nodes: Vec<Node<T>>,
    params: Option<&'p ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
    rng: Option<ChaCha8Rng>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const LN_EPS: f64 = 1e-5;

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<'p, T: Real> Graph<'p, T> {
    /// A graph with no parameters and dropout disabled.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            param_vars: Vec::new(),
            rng: None,
        }
    }

    /// Inference graph over `params`; dropout is the identity.
    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Self {
            nodes: Vec::new(),
            params: Some(params),
            param_vars: vec![None; params.len()],
            rng: None,
        }
    }

    /// Training graph; dropout masks come from `rng`.
    pub fn training(params: &'p ParamStore<T>, rng: ChaCha8Rng) -> Self {
        let mut g = Self::with_params(params);
        g.rng = Some(rng);
        g
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value.data
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let v = self.push(store.get(id).clone(), Op::Param);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data: self.data(x).iter().map(|&v| f(v)).collect(),
        };
        self.push(value, op)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(name, self.shape(a), self.shape(b)));
        }
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self
                .data(a)
                .iter()
                .zip(self.data(b))
                .map(|(&x, &y)| f(x, y))
                .collect(),
        };
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add_broadcast", sa, sb));
        }
        let n = self.data(b).len().max(1);
        let bd = self.data(b);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % n])
            .collect();
        let value = Tensor {
            shape: sa.to_vec(),
            data,
        };
        Ok(self.push(value, Op::AddBroadcast(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (c, a, half) = (T::of(GELU_C), T::of(0.044715), T::of(0.5));
        self.unary(
            x,
            |v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()),
            Op::Gelu(x),
        )
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), false, T::zero(), &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b)))
    }

    /// `a x b^T` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let bt = self.transpose(b)?;
        self.matmul(a, bt)
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err("transpose", s, &[0, 0]));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        Ok(self.push(Tensor { shape: vec![c, r], data: out }, Op::Transpose(x)))
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(TensorError::Invalid {
                op,
                msg: "axis out of range",
            });
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let out = softmax_along(self.value(x), axis, false);
        Ok(self.push(out, Op::Softmax(x, axis)))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let out = softmax_along(self.value(x), axis, true);
        Ok(self.push(out, Op::LogSoftmax(x, axis)))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let s = self.shape(x);
        let d = *s.last().unwrap_or(&0);
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err("layer_norm", s, self.shape(gain)));
        }
        let shape = s.to_vec();
        let rows = self.data(x).len() / d;
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        let (xd, gd, bd) = (self.data(x), self.data(gain), self.data(bias));
        let inv_d = T::of(1.0 / d as f64);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gd[j] + bd[j];
            }
        }
        let value = Tensor { shape, data: out };
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Square-kernel convolution of `x: [C, H, W]` with `w: [O, C, k, k]`
    /// and `b: [O]`, giving `[O, Ho, Wo]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] {
            return Err(shape_err("conv2d", sx, sw));
        }
        if self.shape(b) != [sw[0]] {
            return Err(shape_err("conv2d", sw, self.shape(b)));
        }
        let (c, h, wd, o, k) = (sx[0], sx[1], sx[2], sw[0], sw[2]);
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err("conv2d", sx, sw));
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (wd + 2 * pad - k) / stride + 1,
        };
        let cols = im2col(self.data(x), &geom);
        let hw = geom.ho * geom.wo;
        let mut out = vec![T::zero(); o * hw];
        let bd = self.data(b);
        for (oc, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bd[oc]);
        }
        T::gemm(o, c * k * k, hw, self.data(w), false, &cols, false, T::one(), &mut out);
        let value = Tensor {
            shape: vec![o, geom.ho, geom.wo],
            data: out,
        };
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }))
    }

    /// Mean over the trailing axes: `[C, ...] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(shape_err("global_avg_pool", s, &[0, 0]));
        }
        let c = s[0];
        let n = self.data(x).len() / c.max(1);
        let inv = T::of(1.0 / n as f64);
        let data = self
            .data(x)
            .chunks(n.max(1))
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(self.push(Tensor { shape: vec![c], data }, Op::GlobalAvgPool(x)))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs",
        })?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let same = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.data(v)[o * len..(o + 1) * len]);
            }
        }
        Ok(self.push(Tensor { shape, data }, Op::Concat(xs.to_vec(), axis)))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let s = self.shape(x);
        if start + len > s[axis] {
            return Err(shape_err("slice", s, &[start, len]));
        }
        let (outer, n, inner) = axis_split(s, axis);
        let mut shape = s.to_vec();
        shape[axis] = len;
        let d = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&d[base..base + len * inner]);
        }
        Ok(self.push(Tensor { shape, data }, Op::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.data(x).len() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: self.data(x).to_vec(),
        };
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Inverted dropout; the identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(rng) = self.rng.as_mut().filter(|_| p > 0.0) else {
            return x;
        };
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data: self.data(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        };
        self.push(value, Op::Dropout(x, mask))
    }

    /// Maximum along `axis` (removed from the shape); the first maximal
    /// index receives the gradient.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max_axis", x, axis)?;
        let s = self.shape(x);
        let (outer, n, inner) = axis_split(s, axis);
        if n == 0 {
            return Err(shape_err("max_axis", s, &[axis]));
        }
        let d = self.data(x);
        let mut data = vec![T::zero(); outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                for j in 1..n {
                    if d[(o * n + j) * inner + i] > d[(o * n + best) * inner + i] {
                        best = j;
                    }
                }
                data[o * inner + i] = d[(o * n + best) * inner + i];
                argmax[o * inner + i] = best;
            }
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor { shape, data }, Op::MaxAxis { x, axis, argmax }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(v), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.data(x).len().max(1);
        let v = self.data(x).iter().copied().sum::<T>() / T::of(n as f64);
        self.push(Tensor::scalar(v), Op::Mean(x))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Grads<T>> {
        if self.value(root).len() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut g: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Input | Op::Param => {
                    g[i] = Some(dy);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut g, self, *a, |s| add_into(s, &dy));
                    acc(&mut g, self, *b, |s| add_into(s, &dy));
                }
                Op::AddBroadcast(a, b) => {
                    acc(&mut g, self, *a, |s| add_into(s, &dy));
                    acc(&mut g, self, *b, |s| {
                        let n = s.len().max(1);
                        for (j, &v) in dy.iter().enumerate() {
                            s[j % n] += v;
                        }
                    });
                }
                Op::Sub(a, b) => {
                    acc(&mut g, self, *a, |s| add_into(s, &dy));
                    acc(&mut g, self, *b, |s| {
                        s.iter_mut().zip(&dy).for_each(|(x, &v)| *x -= v)
                    });
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    acc(&mut g, self, *a, |s| {
                        for j in 0..s.len() {
                            s[j] += dy[j] * bd[j];
                        }
                    });
                    acc(&mut g, self, *b, |s| {
                        for j in 0..s.len() {
                            s[j] += dy[j] * ad[j];
                        }
                    });
                }
                Op::Scale(x, k) => acc(&mut g, self, *x, |s| {
                    s.iter_mut().zip(&dy).for_each(|(x, &v)| *x += v * *k)
                }),
                Op::AddScalar(x) | Op::Reshape(x) => acc(&mut g, self, *x, |s| add_into(s, &dy)),
                Op::Relu(x) => {
                    let xd = self.data(*x);
                    acc(&mut g, self, *x, |s| {
                        for j in 0..s.len() {
                            if xd[j] > T::zero() {
                                s[j] += dy[j];
                            }
                        }
                    })
                }
                Op::Gelu(x) => {
                    let xd = self.data(*x);
                    let (c, a, half) = (T::of(GELU_C), T::of(0.044715), T::of(0.5));
                    let three = T::of(3.0);
                    acc(&mut g, self, *x, |s| {
                        for j in 0..s.len() {
                            let v = xd[j];
                            let t = (c * (v + a * v * v * v)).tanh();
                            let dt = (T::one() - t * t) * c * (T::one() + three * a * v * v);
                            s[j] += dy[j] * half * (T::one() + t + v * dt);
                        }
                    })
                }
                Op::Abs(x) => {
                    let xd = self.data(*x);
                    acc(&mut g, self, *x, |s| {
                        for j in 0..s.len() {
                            if xd[j] > T::zero() {
                                s[j] += dy[j];
                            } else if xd[j] < T::zero() {
                                s[j] -= dy[j];
                            }
                        }
                    })
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    acc(&mut g, self, *a, |s| T::gemm(m, n, k, &dy, false, bd, true, T::one(), s));
                    acc(&mut g, self, *b, |s| T::gemm(k, m, n, ad, true, &dy, false, T::one(), s));
                }
                Op::Transpose(x) => {
                    let s0 = self.shape(*x);
                    let (r, c) = (s0[0], s0[1]);
                    acc(&mut g, self, *x, |s| {
                        for i in 0..r {
                            for j in 0..c {
                                s[i * c + j] += dy[j * r + i];
                            }
                        }
                    })
                }
                Op::Softmax(x, axis) => {
                    let y = &node.value.data;
                    let (outer, n, inner) = axis_split(&node.value.shape, *axis);
                    acc(&mut g, self, *x, |s| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |j: usize| (o * n + j) * inner + i;
                                let dot: T = (0..n).map(|j| dy[at(j)] * y[at(j)]).sum();
                                for j in 0..n {
                                    s[at(j)] += y[at(j)] * (dy[at(j)] - dot);
                                }
                            }
                        }
                    })
                }
                Op::LogSoftmax(x, axis) => {
                    let y = &node.value.data;
                    let (outer, n, inner) = axis_split(&node.value.shape, *axis);
                    acc(&mut g, self, *x, |s| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |j: usize| (o * n + j) * inner + i;
                                let total: T = (0..n).map(|j| dy[at(j)]).sum();
                                for j in 0..n {
                                    s[at(j)] += dy[at(j)] - y[at(j)].exp() * total;
                                }
                            }
                        }
                    })
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gd = self.data(*gain);
                    let d = gd.len();
                    let rows = rstd.len();
                    acc(&mut g, self, *gain, |s| {
                        for r in 0..rows {
                            for j in 0..d {
                                s[j] += dy[r * d + j] * xhat[r * d + j];
                            }
                        }
                    });
                    acc(&mut g, self, *bias, |s| {
                        for r in 0..rows {
                            for j in 0..d {
                                s[j] += dy[r * d + j];
                            }
                        }
                    });
                    let inv_d = T::of(1.0 / d as f64);
                    acc(&mut g, self, *x, |s| {
                        for r in 0..rows {
                            let o = r * d;
                            let mut sum_g = T::zero();
                            let mut sum_gx = T::zero();
                            for j in 0..d {
                                let gh = dy[o + j] * gd[j];
                                sum_g += gh;
                                sum_gx += gh * xhat[o + j];
                            }
                            for j in 0..d {
                                let gh = dy[o + j] * gd[j];
                                s[o + j] += rstd[r] * (gh - inv_d * (sum_g + xhat[o + j] * sum_gx));
                            }
                        }
                    });
                }
                Op::Conv2d { x, w, b, geom, cols } => {
                    let o = self.shape(*w)[0];
                    let hw = geom.ho * geom.wo;
                    let ckk = geom.c * geom.k * geom.k;
                    acc(&mut g, self, *b, |s| {
                        for (oc, ch) in dy.chunks(hw).enumerate() {
                            s[oc] += ch.iter().copied().sum::<T>();
                        }
                    });
                    acc(&mut g, self, *w, |s| T::gemm(o, hw, ckk, &dy, false, cols, true, T::one(), s));
                    if needs_grad(self, *x) {
                        let wd = self.data(*w);
                        let mut dcols = vec![T::zero(); ckk * hw];
                        T::gemm(ckk, o, hw, wd, true, &dy, false, T::zero(), &mut dcols);
                        acc(&mut g, self, *x, |s| col2im(&dcols, geom, s));
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let n = self.data(*x).len() / dy.len().max(1);
                    let inv = T::of(1.0 / n as f64);
                    acc(&mut g, self, *x, |s| {
                        for (c, ch) in s.chunks_mut(n.max(1)).enumerate() {
                            ch.iter_mut().for_each(|v| *v += dy[c] * inv);
                        }
                    })
                }
                Op::Concat(xs, axis) => {
                    let (outer, total, inner) = axis_split(&node.value.shape, *axis);
                    let mut offset = 0;
                    for &v in xs {
                        let len = self.shape(v)[*axis];
                        acc(&mut g, self, v, |s| {
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                add_into(&mut s[o * len * inner..(o + 1) * len * inner], &dy[src..src + len * inner]);
                            }
                        });
                        offset += len;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                    let len = node.value.shape[*axis];
                    acc(&mut g, self, *x, |s| {
                        for o in 0..outer {
                            let base = (o * n + start) * inner;
                            add_into(&mut s[base..base + len * inner], &dy[o * len * inner..(o + 1) * len * inner]);
                        }
                    })
                }
                Op::Dropout(x, mask) => acc(&mut g, self, *x, |s| {
                    for j in 0..s.len() {
                        s[j] += dy[j] * mask[j];
                    }
                }),
                Op::MaxAxis { x, axis, argmax } => {
                    let (_, n, inner) = axis_split(self.shape(*x), *axis);
                    acc(&mut g, self, *x, |s| {
                        for (idx, &best) in argmax.iter().enumerate() {
                            let (o, i) = (idx / inner, idx % inner);
                            s[(o * n + best) * inner + i] += dy[idx];
                        }
                    })
                }
                Op::Sum(x) => acc(&mut g, self, *x, |s| s.iter_mut().for_each(|v| *v += dy[0])),
                Op::Mean(x) => {
                    let k = dy[0] / T::of(self.data(*x).len().max(1) as f64);
                    acc(&mut g, self, *x, |s| s.iter_mut().for_each(|v| *v += k))
                }
            }
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(p, v)| v.map(|v| (p, v)))
            .collect();
        Ok(Grads { grads: g, params })
    }
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn needs_grad<T: Real>(graph: &Graph<'_, T>, v: Var) -> bool {
    !matches!(graph.nodes[v.0].op, Op::Constant)
}

/// Adds a contribution to `v`'s gradient buffer, allocating it on first use.
fn acc<T: Real>(g: &mut [Option<Vec<T>>], graph: &Graph<'_, T>, v: Var, f: impl FnOnce(&mut [T])) {
    if !needs_grad(graph, v) {
        return;
    }
    let buf = g[v.0].get_or_insert_with(|| vec![T::zero(); graph.nodes[v.0].value.len()]);
    f(buf);
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn softmax_along<T: Real>(x: &Tensor<T>, axis: usize, log: bool) -> Tensor<T> {
    let (outer, n, inner) = axis_split(&x.shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let m = (0..n).map(|j| x.data[at(j)]).fold(T::neg_infinity(), T::max);
            let z: T = (0..n).map(|j| (x.data[at(j)] - m).exp()).sum();
            let lz = z.ln();
            for j in 0..n {
                let s = x.data[at(j)] - m;
                out[at(j)] = if log { s - lz } else { s.exp() / z };
            }
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let hw = g.ho * g.wo;
    let mut cols = vec![T::zero(); g.c * g.k * g.k * hw];
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let hw = g.ho * g.wo;
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of one reverse pass.
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, Var)>,
}

impl<T: Real> Grads<T> {
    /// Gradient with respect to a leaf, if the root depends on it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into `into`, rejecting non-finite values.
    pub fn accumulate(&self, store: &ParamStore<T>, into: &mut ParamGrads<T>) -> Result<()> {
        for &(p, v) in &self.params {
            let Some(src) = self.wrt(v) else { continue };
            if src.iter().any(|x| !x.is_finite()) {
                return Err(TensorError::NonFiniteGrad(String::from(store.name(ParamId(p)))));
            }
            add_into(&mut into.grads[p], src);
        }
        Ok(())
    }
}
