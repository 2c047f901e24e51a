//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the handles of
//! its inputs. Nodes are created in topological order, so the backward pass is
//! a single reverse sweep that visits each node at most once.

use super::conv::{self, ConvGeom};
use super::{Result, Shape, Tensor, TensorError};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Relu,
    Sqrt,
    Abs,
    Square,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Unary {
        input: Var,
        kind: Unary,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale {
        input: Var,
        factor: f64,
    },
    Offset {
        input: Var,
    },
    ScaleBy {
        input: Var,
        scale: Var,
    },
    TileBatch {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Slice {
        input: Var,
        start: usize,
    },
    SpatialMean {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Softmax {
        input: Var,
    },
    ReplicatePad {
        input: Var,
        pad: usize,
    },
    Clamp {
        input: Var,
        lo: f64,
        hi: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Recorded computation. Confined to one thread; values are owned copies.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every tracked leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the leaf is untracked or unreached.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a leaf as a tensor; zeros when no path reaches the loss.
    pub fn tensor(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0];
        match self.get(var) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    for (i, dim) in ["batch", "channels", "height", "width"].into_iter().enumerate() {
        if a.dims()[i] != b.dims()[i] {
            return Err(TensorError::Mismatch {
                op,
                dim,
                left: a.dims()[i],
                right: b.dims()[i],
            });
        }
    }
    Ok(())
}

fn sequential_sum(values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in values {
        acc += v;
    }
    acc
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        debug_assert!(
            !value.values().iter().any(|v| v.is_nan()),
            "NaN produced by {op:?}"
        );
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        let mut value = value;
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, false)
    }

    /// Learnable input; receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        let mut value = value;
        value.set_requires_grad(true);
        self.push(value, Op::Leaf, true)
    }

    /// Copy of `v` cut off from the gradient tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn make(&mut self, shape: Shape, values: Vec<f64>, op: Op, tracked: bool) -> Var {
        let value = Tensor::from_vec(shape, values).expect("op output length");
        self.push(value, op, tracked)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(
            self.shape(input),
            self.shape(kernel),
            bias.map(|b| self.shape(b)),
            stride,
            padding,
        )?;
        let out = conv::forward(
            &geom,
            self.value(input).values(),
            self.value(kernel).values(),
            bias.map(|b| self.value(b).values()),
        );
        let tracked = self.tracked(input) || self.tracked(kernel) || bias.is_some_and(|b| self.tracked(b));
        Ok(self.make(
            geom.output_shape(),
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            tracked,
        ))
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(TensorError::Invalid {
                op: "upsample",
                reason: "factor must be >= 1".into(),
            });
        }
        let s = self.shape(input);
        let [b, c, h, w] = s.dims();
        let out_shape = Shape::new(b, c, h * factor, w * factor)?;
        let src = self.value(input).values();
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![0.0; out_shape.numel()];
        for p in 0..b * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                let row = &plane[(y / factor) * w..(y / factor + 1) * w];
                for x in 0..ow {
                    dst[y * ow + x] = row[x / factor];
                }
            }
        }
        let tracked = self.tracked(input);
        Ok(self.make(out_shape, out, Op::Upsample { input, factor }, tracked))
    }

    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        self.upsample(input, 2)
    }

    fn unary(&mut self, input: Var, kind: Unary) -> Result<Var> {
        let x = self.value(input);
        if kind == Unary::Log {
            if let Some((index, &value)) = x.values().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(TensorError::LogDomain { index, value });
            }
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => |v| 1.0 / (1.0 + (-v).exp()),
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Relu => |v| if v > 0.0 { v } else { 0.0 },
            Unary::Sqrt => f64::sqrt,
            Unary::Abs => f64::abs,
            Unary::Square => |v| v * v,
        };
        let out = x.map(f);
        let tracked = self.tracked(input);
        Ok(self.push(out, Op::Unary { input, kind }, tracked))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    /// Natural log; rejects non-positive inputs.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    /// Square root; the backward rule treats a zero output as having zero slope.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sqrt)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Square)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        same_shape(op, sa, sb)?;
        let out: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.make(sa, out, node, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("hadamard", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Sum of one or more equally shaped values, folded left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms.split_first().ok_or_else(|| TensorError::Invalid {
            op: "add_all",
            reason: "no terms".into(),
        })?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        let tracked = self.tracked(x);
        Ok(self.push(out, Op::Scale { input: x, factor }, tracked))
    }

    /// Addition of a constant scalar.
    pub fn offset(&mut self, x: Var, value: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + value);
        let tracked = self.tracked(x);
        Ok(self.push(out, Op::Offset { input: x }, tracked))
    }

    /// Multiplies each batch item of `x` by the matching entry of a
    /// `[B, 1, 1, 1]` per-sample scalar.
    pub fn scale_by(&mut self, x: Var, scale: Var) -> Result<Var> {
        let sx = self.shape(x);
        let ss = self.shape(scale);
        if ss.item_len() != 1 || ss.batch() != sx.batch() {
            return Err(TensorError::Invalid {
                op: "scale_by",
                reason: format!("scale of shape {ss} does not act on {sx}"),
            });
        }
        let len = sx.item_len();
        let s = self.value(scale).values();
        let out: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * s[i / len])
            .collect();
        let tracked = self.tracked(x) || self.tracked(scale);
        Ok(self.make(sx, out, Op::ScaleBy { input: x, scale }, tracked))
    }

    /// Repeats a batch-1 value `batch` times along the batch axis.
    pub fn tile_batch(&mut self, x: Var, batch: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.batch() != 1 {
            return Err(TensorError::Mismatch {
                op: "tile_batch",
                dim: "batch",
                left: s.batch(),
                right: 1,
            });
        }
        if batch == 1 {
            return Ok(x);
        }
        let out_shape = Shape::new(batch, s.channels(), s.height(), s.width())?;
        let src = self.value(x).values();
        let mut out = Vec::with_capacity(out_shape.numel());
        for _ in 0..batch {
            out.extend_from_slice(src);
        }
        let tracked = self.tracked(x);
        Ok(self.make(out_shape, out, Op::TileBatch { input: x }, tracked))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| TensorError::Invalid {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            for (dim, i) in [("batch", 0), ("height", 2), ("width", 3)] {
                if s.dims()[i] != s0.dims()[i] {
                    return Err(TensorError::Mismatch {
                        op: "concat",
                        dim,
                        left: s0.dims()[i],
                        right: s.dims()[i],
                    });
                }
            }
            channels += s.channels();
        }
        let out_shape = Shape::new(s0.batch(), channels, s0.height(), s0.width())?;
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.batch() {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape().item_len();
                out.extend_from_slice(&t.values()[n * len..(n + 1) * len]);
            }
        }
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        Ok(self.make(
            out_shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            tracked,
        ))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if len == 0 || start + len > s.channels() {
            return Err(TensorError::Invalid {
                op: "slice_channels",
                reason: format!("range {start}..{} outside {} channels", start + len, s.channels()),
            });
        }
        let out_shape = Shape::new(s.batch(), len, s.height(), s.width())?;
        let plane = s.plane();
        let src = self.value(x).values();
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s.batch() {
            let base = n * s.item_len() + start * plane;
            out.extend_from_slice(&src[base..base + len * plane]);
        }
        let tracked = self.tracked(x);
        Ok(self.make(out_shape, out, Op::Slice { input: x, start }, tracked))
    }

    /// Mean over height and width: `[B, C, H, W] -> [B, C, 1, 1]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let plane = s.plane();
        let out: Vec<f64> = self
            .value(x)
            .values()
            .chunks(plane)
            .map(|c| sequential_sum(c) / plane as f64)
            .collect();
        let tracked = self.tracked(x);
        Ok(self.make(
            Shape::new(s.batch(), s.channels(), 1, 1)?,
            out,
            Op::SpatialMean { input: x },
            tracked,
        ))
    }

    /// Mean of all elements as a scalar, summed in storage order.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).values();
        let m = sequential_sum(v) / v.len() as f64;
        let tracked = self.tracked(x);
        Ok(self.make(Shape::scalar(), vec![m], Op::Mean { input: x }, tracked))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = sequential_sum(self.value(x).values());
        let tracked = self.tracked(x);
        Ok(self.make(Shape::scalar(), vec![s], Op::Sum { input: x }, tracked))
    }

    /// Softmax across the channel axis at every (batch, y, x) position.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let [b, c, _, _] = s.dims();
        let plane = s.plane();
        let src = self.value(x).values();
        let mut out = vec![0.0; s.numel()];
        let mut scores = vec![0.0; c];
        for n in 0..b {
            for p in 0..plane {
                for (ch, sc) in scores.iter_mut().enumerate() {
                    *sc = src[(n * c + ch) * plane + p];
                }
                for (ch, a) in super::softmax_over_slots(&scores).into_iter().enumerate() {
                    out[(n * c + ch) * plane + p] = a;
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.make(s, out, Op::Softmax { input: x }, tracked))
    }

    /// Pads every plane by repeating its border values.
    pub fn replicate_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let s = self.shape(x);
        let [b, c, h, w] = s.dims();
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let out_shape = Shape::new(b, c, oh, ow)?;
        let src = self.value(x).values();
        let mut out = vec![0.0; out_shape.numel()];
        for p in 0..b * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                let sy = y.saturating_sub(pad).min(h - 1);
                for xx in 0..ow {
                    let sx = xx.saturating_sub(pad).min(w - 1);
                    out[p * oh * ow + y * ow + xx] = plane[sy * w + sx];
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.make(out_shape, out, Op::ReplicatePad { input: x, pad }, tracked))
    }

    /// Clamps into `[lo, hi]`; the gradient passes only where no clamping occurred.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let tracked = self.tracked(x);
        Ok(self.push(out, Op::Clamp { input: x, lo, hi }, tracked))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.tracked(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.propagate(node, &gout, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.tracked(v) {
            return;
        }
        match grads[v.0].as_mut() {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            None => grads[v.0] = Some(delta),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.tracked(v) {
            return;
        }
        let len = self.value(v).numel();
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    fn propagate(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.values();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let g = conv::backward(
                    geom,
                    self.value(*input).values(),
                    self.value(*kernel).values(),
                    gout,
                    [
                        self.tracked(*input),
                        self.tracked(*kernel),
                        bias.is_some_and(|b| self.tracked(b)),
                    ],
                );
                if let Some(d) = g.input {
                    self.accumulate(grads, *input, d);
                }
                if let Some(d) = g.kernel {
                    self.accumulate(grads, *kernel, d);
                }
                if let (Some(b), Some(d)) = (bias, g.bias) {
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Upsample { input, factor } => {
                let [b, c, h, w] = self.shape(*input).dims();
                let (oh, ow) = (h * factor, w * factor);
                self.accumulate_with(grads, *input, |g| {
                    for p in 0..b * c {
                        for yy in 0..oh {
                            for xx in 0..ow {
                                g[p * h * w + (yy / factor) * w + xx / factor] += gout[p * oh * ow + yy * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::Unary { input, kind } => {
                let x = self.value(*input).values();
                let d: Vec<f64> = (0..gout.len())
                    .map(|i| {
                        let slope = match kind {
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Tanh => 1.0 - y[i] * y[i],
                            Unary::Exp => y[i],
                            Unary::Log => 1.0 / x[i],
                            Unary::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Sqrt => {
                                if y[i] > 0.0 {
                                    0.5 / y[i]
                                } else {
                                    0.0
                                }
                            }
                            Unary::Abs => {
                                if x[i] > 0.0 {
                                    1.0
                                } else if x[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Square => 2.0 * x[i],
                        };
                        gout[i] * slope
                    })
                    .collect();
                self.accumulate(grads, *input, d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.to_vec());
                self.accumulate(grads, *b, gout.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.to_vec());
                self.accumulate(grads, *b, gout.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                if self.tracked(*a) {
                    self.accumulate(grads, *a, gout.iter().zip(vb).map(|(g, v)| g * v).collect());
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, gout.iter().zip(va).map(|(g, v)| g * v).collect());
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).values();
                if self.tracked(*a) {
                    self.accumulate(grads, *a, gout.iter().zip(vb).map(|(g, v)| g / v).collect());
                }
                if self.tracked(*b) {
                    let d = (0..gout.len()).map(|i| -gout[i] * y[i] / vb[i]).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale { input, factor } => {
                self.accumulate(grads, *input, gout.iter().map(|g| g * factor).collect());
            }
            Op::Offset { input } => self.accumulate(grads, *input, gout.to_vec()),
            Op::ScaleBy { input, scale } => {
                let len = self.shape(*input).item_len();
                let s = self.value(*scale).values();
                let x = self.value(*input).values();
                if self.tracked(*input) {
                    let d = gout.iter().enumerate().map(|(i, g)| g * s[i / len]).collect();
                    self.accumulate(grads, *input, d);
                }
                if self.tracked(*scale) {
                    let d = gout
                        .chunks(len)
                        .zip(x.chunks(len))
                        .map(|(g, xv)| g.iter().zip(xv).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *scale, d);
                }
            }
            Op::TileBatch { input } => {
                let len = self.shape(*input).numel();
                self.accumulate_with(grads, *input, |g| {
                    for chunk in gout.chunks(len) {
                        g.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Concat { inputs } => {
                let batch = node.value.shape().batch();
                let out_len = node.value.shape().item_len();
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v).item_len();
                    self.accumulate_with(grads, v, |g| {
                        for n in 0..batch {
                            let src = &gout[n * out_len + offset..n * out_len + offset + len];
                            g[n * len..(n + 1) * len].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { input, start } => {
                let s = self.shape(*input);
                let plane = s.plane();
                let out_len = node.value.shape().item_len();
                self.accumulate_with(grads, *input, |g| {
                    for n in 0..s.batch() {
                        let base = n * s.item_len() + start * plane;
                        g[base..base + out_len]
                            .iter_mut()
                            .zip(&gout[n * out_len..(n + 1) * out_len])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::SpatialMean { input } => {
                let plane = self.shape(*input).plane();
                let d = (0..self.value(*input).numel())
                    .map(|i| gout[i / plane] / plane as f64)
                    .collect();
                self.accumulate(grads, *input, d);
            }
            Op::Mean { input } => {
                let n = self.value(*input).numel();
                self.accumulate(grads, *input, vec![gout[0] / n as f64; n]);
            }
            Op::Sum { input } => {
                let n = self.value(*input).numel();
                self.accumulate(grads, *input, vec![gout[0]; n]);
            }
            Op::Softmax { input } => {
                let s = node.value.shape();
                let [b, c, _, _] = s.dims();
                let plane = s.plane();
                let mut d = vec![0.0; s.numel()];
                for n in 0..b {
                    for p in 0..plane {
                        let idx = |ch: usize| (n * c + ch) * plane + p;
                        let dot: f64 = (0..c).map(|ch| y[idx(ch)] * gout[idx(ch)]).sum();
                        for ch in 0..c {
                            d[idx(ch)] = y[idx(ch)] * (gout[idx(ch)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::ReplicatePad { input, pad } => {
                let [b, c, h, w] = self.shape(*input).dims();
                let (oh, ow) = (h + 2 * pad, w + 2 * pad);
                self.accumulate_with(grads, *input, |g| {
                    for p in 0..b * c {
                        for yy in 0..oh {
                            let sy = yy.saturating_sub(*pad).min(h - 1);
                            for xx in 0..ow {
                                let sx = xx.saturating_sub(*pad).min(w - 1);
                                g[p * h * w + sy * w + sx] += gout[p * oh * ow + yy * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).values();
                let d = gout
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| if v >= *lo && v <= *hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *input, d);
            }
        }
    }
}
