//! Dense rank-4 tensors, a tape-based reverse-mode graph, and the finite
//! difference oracle used to check it.
//!
//! Layout is row-major NCHW everywhere. Values are `f64` so that central
//! differences at `eps = 1e-6` resolve gradients to roughly ten digits.

mod conv;
mod gradcheck;
mod graph;

pub use conv::{conv2d_forward, conv_output_dim};
pub use gradcheck::{finite_difference_grad, relative_error};
pub use graph::{Gradients, Graph, Var};

use std::fmt;

use thiserror::Error;

/// Default cap on the element count of a single tensor (2^26).
pub const DEFAULT_ELEMENT_CAP: usize = 1 << 26;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape dimension {index} ({name}) must be >= 1, got {value}")]
    ZeroDim {
        index: usize,
        name: &'static str,
        value: usize,
    },
    #[error("tensor of shape {shape} has {count} elements, above the cap of {cap}")]
    TooLarge { shape: Shape, count: usize, cap: usize },
    #[error("value buffer has {got} elements but shape {shape} needs {expected}")]
    BufferLength {
        shape: Shape,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {dim} mismatch ({left} vs {right})")]
    Mismatch {
        op: &'static str,
        dim: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("log of non-positive value {value} at element {index}")]
    LogDomain { index: usize, value: f64 },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("function evaluation is not finite ({value}) at element {index}")]
    NonFinite { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

const DIM_NAMES: [&str; 4] = ["batch", "channels", "height", "width"];

/// (batch, channels, height, width)
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape([usize; 4]);

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::with_cap([batch, channels, height, width], DEFAULT_ELEMENT_CAP)
    }

    pub fn with_cap(dims: [usize; 4], cap: usize) -> Result<Self> {
        for (index, &value) in dims.iter().enumerate() {
            if value == 0 {
                return Err(TensorError::ZeroDim {
                    index,
                    name: DIM_NAMES[index],
                    value,
                });
            }
        }
        let shape = Shape(dims);
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        if count > cap {
            return Err(TensorError::TooLarge { shape, count, cap });
        }
        Ok(shape)
    }

    /// Shape of a single scalar.
    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    /// Internal constructor for dims already known to be valid.
    pub(crate) const fn raw(dims: [usize; 4]) -> Self {
        Shape(dims)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn channels(&self) -> usize {
        self.0[1]
    }

    pub fn height(&self) -> usize {
        self.0[2]
    }

    pub fn width(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.0[1] * self.0[2] * self.0[3]
    }

    pub fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.0[1] + c) * self.0[2] + y) * self.0[3] + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "[{n}, {c}, {h}, {w}]")
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A dense NCHW array of `f64` values with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.numel() {
            return Err(TensorError::BufferLength {
                shape,
                expected: shape.numel(),
                got: values.len(),
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            values: vec![value; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.values[self.shape.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.shape.index(n, c, y, x);
        self.values[i] = value;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.values.len());
        match self.grad.as_mut() {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Copy of batch item `n` as a `[1, C, H, W]` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let len = self.shape.item_len();
        let [_, c, h, w] = self.shape.dims();
        Tensor {
            shape: Shape::raw([1, c, h, w]),
            values: self.values[n * len..(n + 1) * len].to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| TensorError::Invalid {
            op: "stack",
            reason: "no tensors given".into(),
        })?;
        let [_, c, h, w] = first.shape.dims();
        let mut values = Vec::with_capacity(first.numel() * items.len());
        let mut batch = 0;
        for t in items {
            let [b, tc, th, tw] = t.shape.dims();
            for (dim, l, r) in [("channels", c, tc), ("height", h, th), ("width", w, tw)] {
                if l != r {
                    return Err(TensorError::Mismatch {
                        op: "stack",
                        dim,
                        left: l,
                        right: r,
                    });
                }
            }
            batch += b;
            values.extend_from_slice(&t.values);
        }
        Tensor::from_vec(Shape::new(batch, c, h, w)?, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }
}

/// Numerically stable softmax over a list of slot scores.
///
/// The maximum is subtracted before exponentiation, so adding a constant to
/// every score leaves the result unchanged.
pub fn softmax_over_slots(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rejects_zero_dim() {
        let err = Shape::new(1, 0, 4, 4).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn shape_respects_cap() {
        assert!(Shape::with_cap([1, 1, 8, 8], 63).is_err());
        assert!(Shape::with_cap([1, 1, 8, 8], 64).is_ok());
        assert!(Shape::new(1 << 10, 1 << 10, 1 << 10, 1).is_err());
    }

    #[test]
    fn buffer_length_checked() {
        let s = Shape::new(1, 1, 2, 2).unwrap();
        assert!(Tensor::from_vec(s, vec![0.0; 3]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_over_slots(&[0.3; 4]), vec![0.25; 4]);
        assert_eq!(softmax_over_slots(&[-7.0]), vec![1.0]);
        let p = softmax_over_slots(&[1.0, 2.0]);
        let e = std::f64::consts::E;
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((p[0] - 0.26894).abs() < 1e-5 && (p[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn stack_and_split() {
        let s = Shape::new(1, 2, 1, 1).unwrap();
        let a = Tensor::from_vec(s, vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(s, vec![3.0, 4.0]).unwrap();
        let st = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(st.shape().dims(), [2, 2, 1, 1]);
        assert_eq!(st.batch_item(1), b);
        assert_eq!(st.batch_item(0), a);
    }
}
