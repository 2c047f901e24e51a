//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use samnet_core::params::{Bound, ParamStore};
use samnet_core::som::ConvLstmCell;
use samnet_core::tensor::{relative_error, Graph, Result, Shape, Tensor, Var};

/// `(name, relative error)` per parameter tensor.
pub fn parameter_gradient_errors(
    store: &ParamStore,
    loss: impl Fn(&mut Graph, &Bound) -> Result<Var>,
) -> Vec<(String, f64)> {
    parameter_gradient_checks(store, loss).into_iter().map(|c| (c.name, c.relative)).collect()
}

pub fn random(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let v = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, v).unwrap()
}

/// Adds uniform noise to every parameter so no pre-activation sits exactly
/// on a ReLU kink (zero-initialised biases over dead inputs otherwise do).
pub fn jitter(store: &mut ParamStore, scale: f64, rng: &mut impl Rng) {
    for (_, t) in store.iter_mut() {
        t.values_mut().iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    }
}

/// Redraws every bias in `[lo, hi)` so ReLU units stay active and the
/// gradients stay well above finite-difference rounding noise.
pub fn lift_biases(store: &mut ParamStore, lo: f64, hi: f64, rng: &mut impl Rng) {
    for (name, t) in store.iter_mut() {
        if name.ends_with(".b") {
            t.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(lo..hi));
        }
    }
}

pub struct GradientCheck {
    pub name: String,
    pub relative: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reverse-mode gradient of every parameter against central differences
/// (step 1e-6), one entry per parameter tensor.
pub fn parameter_gradient_checks(
    store: &ParamStore,
    loss: impl Fn(&mut Graph, &Bound) -> Result<Var>,
) -> Vec<GradientCheck> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let l = loss(&mut g, &p).unwrap();
    let grads = g.backward(l).unwrap();
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let l = loss(&mut g, &p).unwrap();
        g.value(l).item()
    };
    let eps = 1e-6;
    let mut probe = store.clone();
    store
        .ids()
        .map(|id| {
            let analytic = grads.tensor(p.var(id)).values().to_vec();
            let mut numeric = vec![0.0; analytic.len()];
            for (k, slot) in numeric.iter_mut().enumerate() {
                let orig = probe.get(id).values()[k];
                probe.get_mut(id).values_mut()[k] = orig + eps;
                let up = eval(&probe);
                probe.get_mut(id).values_mut()[k] = orig - eps;
                let down = eval(&probe);
                probe.get_mut(id).values_mut()[k] = orig;
                *slot = (up - down) / (2.0 * eps);
            }
            GradientCheck {
                name: store.name(id).to_string(),
                relative: relative_error(&analytic, &numeric),
                analytic_norm: norm(&analytic),
                numeric_norm: norm(&numeric),
            }
        })
        .collect()
}

use samnet_core::data::{make_dataset, SceneSample};
use samnet_core::harness::TrainConfig;

/// A few-second configuration: 32x32 inputs, two channels per level.
pub fn tiny_config() -> TrainConfig {
    TrainConfig::from_text(
        "height = 32\nwidth = 32\nstage_channels = 2,2,2,2\nconvs_per_stage = 1\nslots = 3\n\
         batch_size = 2\nstage1_steps = 6\nsteps = 8\nn_train = 8\nn_val = 4\n",
    )
    .unwrap()
}

pub fn tiny_data(config: &TrainConfig) -> (Vec<SceneSample>, Vec<SceneSample>) {
    let (train, val) = make_dataset(config.n_train, config.n_val, config.data_seed);
    let render = |specs: Vec<samnet_core::data::SampleSpec>| {
        specs
            .iter()
            .map(|s| s.generate(config.model.height, config.model.width).unwrap())
            .collect()
    };
    (render(train), render(val))
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One output element of a 3x3, pad-1 convolution.
pub fn conv3_at(w: &Tensor, b: Option<&Tensor>, x: &Tensor, n: usize, o: usize, y: usize, xx: usize) -> f64 {
    let [_, c, h, wd] = x.shape().dims();
    let mut acc = b.map_or(0.0, |b| b.values()[o]);
    for ic in 0..c {
        for dy in 0..3 {
            for dx in 0..3 {
                let iy = y as isize + dy as isize - 1;
                let ix = xx as isize + dx as isize - 1;
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                    continue;
                }
                acc += x.at(n, ic, iy as usize, ix as usize) * w.at(o, ic, dy, dx);
            }
        }
    }
    acc
}

/// Gate-by-gate scalar evaluation of one ConvLSTM step.
pub fn lstm_reference(store: &ParamStore, cell: &ConvLstmCell, x: &Tensor, prev: Option<(&Tensor, &Tensor)>) -> (Tensor, Tensor) {
    let [b, _, h, w] = x.shape().dims();
    let d = cell.hidden;
    let shape = Shape::new(b, d, h, w).unwrap();
    let zero = Tensor::zeros(shape);
    let (h_prev, c_prev) = prev.unwrap_or((&zero, &zero));
    let wx: Vec<(&Tensor, &Tensor)> = cell
        .input_convs
        .iter()
        .map(|c| (store.get(c.weight), store.get(c.bias.unwrap())))
        .collect();
    let wh: Vec<&Tensor> = cell.hidden_convs.iter().map(|c| store.get(c.weight)).collect();
    let [wci, wcf, wco] = cell.peepholes.map(|id| store.get(id));
    let mut h_out = Tensor::zeros(shape);
    let mut c_out = Tensor::zeros(shape);
    for n in 0..b {
        for o in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let pre = |g: usize| conv3_at(wx[g].0, Some(wx[g].1), x, n, o, y, xx) + conv3_at(wh[g], None, h_prev, n, o, y, xx);
                    let cp = c_prev.at(n, o, y, xx);
                    let i = sigmoid(pre(0) + wci.at(0, o, y, xx) * cp);
                    let f = sigmoid(pre(1) + wcf.at(0, o, y, xx) * cp);
                    let c = f * cp + i * pre(2).tanh();
                    let og = sigmoid(pre(3) + wco.at(0, o, y, xx) * c);
                    c_out.set(n, o, y, xx, c);
                    h_out.set(n, o, y, xx, og * c.tanh());
                }
            }
        }
    }
    (h_out, c_out)
}

