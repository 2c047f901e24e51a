//! Named parameter storage and the layers built on it.

use rand::Rng;

use crate::tensor::{Graph, Gradients, Result, Shape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name: models are built by code.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad());
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` for a `[out, in, kh, kw]` kernel.
    pub fn glorot(&mut self, name: impl Into<String>, shape: Shape, rng: &mut impl Rng) -> ParamId {
        let [out_c, in_c, kh, kw] = shape.dims();
        let field = kh * kw;
        let bound = (6.0 / ((in_c * field + out_c * field) as f64)).sqrt();
        let values = (0..shape.numel()).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(shape, values).expect("glorot length"))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Shape) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a learnable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    /// Records every parameter as a constant (frozen) leaf.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Accumulates graph gradients into each tensor's gradient buffer.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &Gradients) {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.0) {
            match grads.get(v) {
                Some(g) => t.accumulate_grad(g),
                None => t.accumulate_grad(&vec![0.0; t.numel()]),
            }
        }
    }

    /// Copies values of same-named tensors from `other`; returns how many matched.
    pub fn load_from(&mut self, other: &ParamStore) -> std::result::Result<usize, String> {
        let mut matched = 0;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if let Some(id) = other.find(name) {
                let src = other.get(id);
                if src.shape() != t.shape() {
                    return Err(format!("parameter {name}: shape {} vs {}", src.shape(), t.shape()));
                }
                t.values_mut().copy_from_slice(src.values());
                matched += 1;
            }
        }
        Ok(matched)
    }
}

/// 2-D convolution layer with optional bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = Shape::new(out_c, in_c, kernel, kernel).expect("conv kernel shape");
        let weight = store.glorot(format!("{name}.w"), shape, rng);
        let bias = bias.then(|| store.zeros(format!("{name}.b"), Shape::new(out_c, 1, 1, 1).expect("bias shape")));
        Conv {
            weight,
            bias,
            stride,
            padding,
        }
    }

    /// 3x3, stride 1, padding 1.
    pub fn same3(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, rng: &mut impl Rng) -> Self {
        Self::new(store, name, in_c, out_c, 3, 1, 1, true, rng)
    }

    pub fn pointwise(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self::new(store, name, in_c, out_c, 1, 1, 0, bias, rng)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p[self.weight], self.bias.map(|b| p[b]), self.stride, self.padding)
    }
}
