//! Structure-oriented memory.
//!
//! A bank of learnable filter slots is applied to a query feature map. A
//! bidirectional ConvLSTM scans the per-slot responses and a projection turns
//! its hidden states into one score per slot; the softmax of the scores weights
//! the responses into the memory read `Z_m`. The read is concatenated with the
//! query and fused back to the query width.
//!
//! Writing is ordinary backpropagation with each slot's optimizer step scaled
//! by the attention it received in the most recent read (see
//! [`SomStack::write_scales`]).

use rand::Rng;
use thiserror::Error;

use crate::params::{Bound, Conv, ParamId, ParamStore};
use crate::tensor::{Graph, Result, Shape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SomError {
    #[error("attention for level {level} has {got} weights but the bank has {expected} slots")]
    StaleAttention {
        level: usize,
        expected: usize,
        got: usize,
    },
    #[error("expected attention for {expected} levels, got {got}")]
    LevelCount { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SomConfig {
    /// Memory size n.
    pub slots: usize,
}

impl Default for SomConfig {
    fn default() -> Self {
        SomConfig { slots: 8 }
    }
}

/// One memory slot `(W_t, b_t)`: a 3x3 C→C convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemorySlot {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct MemoryBank {
    pub channels: usize,
    pub slots: Vec<MemorySlot>,
}

impl MemoryBank {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, n: usize, rng: &mut impl Rng) -> Self {
        assert!(n >= 1, "memory bank needs at least one slot");
        let slots = (0..n)
            .map(|t| {
                let conv = Conv::same3(store, &format!("{prefix}.slot{t}"), channels, channels, rng);
                MemorySlot {
                    weight: conv.weight,
                    bias: conv.bias.expect("slot bias"),
                }
            })
            .collect();
        MemoryBank { channels, slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// `x_t = W_t * Z_i + b_t` for every slot, spatial size preserved.
    pub fn query(&self, g: &mut Graph, p: &Bound, query: Var) -> Result<Vec<Var>> {
        self.slots
            .iter()
            .map(|s| g.conv2d(query, p[s.weight], Some(p[s.bias]), 1, 1))
            .collect()
    }
}

/// Gate order used for the x/h kernel arrays.
const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// Convolutional LSTM cell with elementwise peephole weights.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    /// `W_xi, W_xf, W_xc, W_xo` with biases `b_i, b_f, b_c, b_o`.
    pub input_convs: [Conv; 4],
    /// `W_hi, W_hf, W_hc, W_ho` (no bias).
    pub hidden_convs: [Conv; 4],
    /// `W_ci, W_cf, W_co`, each shaped `[1, D, H, W]`.
    pub peepholes: [ParamId; 3],
    pub hidden: usize,
}

/// `(h, c)` after one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl ConvLstmCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_c: usize,
        hidden: usize,
        spatial: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let input_convs = GATES.map(|gate| Conv::same3(store, &format!("{prefix}.wx{gate}"), in_c, hidden, rng));
        let hidden_convs =
            GATES.map(|gate| Conv::new(store, &format!("{prefix}.wh{gate}"), hidden, hidden, 3, 1, 1, false, rng));
        let shape = Shape::new(1, hidden, spatial.0, spatial.1).expect("peephole shape");
        let peepholes = ["i", "f", "o"].map(|gate| store.zeros(format!("{prefix}.wc{gate}"), shape));
        ConvLstmCell {
            input_convs,
            hidden_convs,
            peepholes,
            hidden,
        }
    }

    fn pre_activation(&self, g: &mut Graph, p: &Bound, gate: usize, x: Var, h_prev: Option<Var>) -> Result<Var> {
        let a = self.input_convs[gate].forward(g, p, x)?;
        match h_prev {
            Some(h) => {
                let b = self.hidden_convs[gate].forward(g, p, h)?;
                g.add(a, b)
            }
            None => Ok(a),
        }
    }

    fn peephole(&self, g: &mut Graph, p: &Bound, which: usize, c: Var) -> Result<Var> {
        let batch = g.shape(c).batch();
        let w = g.tile_batch(p[self.peepholes[which]], batch)?;
        g.mul(w, c)
    }

    /// One step from an explicit previous state.
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h_prev: Var, c_prev: Var) -> Result<LstmState> {
        self.step_from(g, p, x, Some(LstmState { h: h_prev, c: c_prev }))
    }

    /// One step; `None` is the all-zero initial state.
    ///
    /// ```text
    /// i = σ(W_xi*x + W_hi*h + W_ci∘c_prev + b_i)
    /// f = σ(W_xf*x + W_hf*h + W_cf∘c_prev + b_f)
    /// c = f∘c_prev + i∘tanh(W_xc*x + W_hc*h + b_c)
    /// o = σ(W_xo*x + W_ho*h + W_co∘c + b_o)      (peephole on the new c)
    /// h = o∘tanh(c)
    /// ```
    pub fn step_from(&self, g: &mut Graph, p: &Bound, x: Var, prev: Option<LstmState>) -> Result<LstmState> {
        let h_prev = prev.map(|s| s.h);
        let mut i = self.pre_activation(g, p, 0, x, h_prev)?;
        let mut f = self.pre_activation(g, p, 1, x, h_prev)?;
        if let Some(state) = prev {
            let pi = self.peephole(g, p, 0, state.c)?;
            i = g.add(i, pi)?;
            let pf = self.peephole(g, p, 1, state.c)?;
            f = g.add(f, pf)?;
        }
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let cand = self.pre_activation(g, p, 2, x, h_prev)?;
        let cand = g.tanh(cand)?;
        let write = g.mul(i, cand)?;
        let c = match prev {
            Some(state) => {
                let keep = g.mul(f, state.c)?;
                g.add(keep, write)?
            }
            None => write,
        };
        let o = self.pre_activation(g, p, 3, x, h_prev)?;
        let po = self.peephole(g, p, 2, c)?;
        let o = g.add(o, po)?;
        let o = g.sigmoid(o)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// How the attention weights enter the memory read.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionMode {
    /// Gradients flow through the controller.
    Attached,
    /// Weights are computed but cut from the gradient tape.
    Detached,
    /// Weights replaced by the given per-slot values (for every batch item).
    Forced(Vec<f64>),
}

/// Per-slot attention of one read; lies on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub alpha: Vec<f64>,
}

impl AttentionWeights {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Element-wise mean over several reads.
    pub fn mean(reads: &[AttentionWeights]) -> AttentionWeights {
        let n = reads.first().map_or(0, AttentionWeights::len);
        let mut alpha = vec![0.0; n];
        for r in reads {
            alpha.iter_mut().zip(&r.alpha).for_each(|(a, b)| *a += b);
        }
        alpha.iter_mut().for_each(|a| *a /= reads.len() as f64);
        AttentionWeights { alpha }
    }

    /// `step,level,alpha_1,...,alpha_n`
    pub fn trace_line(&self, step: usize, level: usize) -> String {
        let mut line = format!("{step},{level}");
        for a in &self.alpha {
            line.push_str(&format!(",{a:.17e}"));
        }
        line
    }
}

/// Result of a memory read.
#[derive(Clone, Debug)]
pub struct ReadOutput {
    pub z_m: Var,
    /// `[B, n, 1, 1]`
    pub alpha: Var,
    /// One entry per batch item.
    pub weights: Vec<AttentionWeights>,
}

/// Bidirectional ConvLSTM read controller with a one-channel projection.
#[derive(Clone, Debug)]
pub struct ReadController {
    pub forward_cell: ConvLstmCell,
    pub backward_cell: ConvLstmCell,
    /// `W_{h_f y}`, `[1, D, 1, 1]`
    pub proj_forward: ParamId,
    /// `W_{h_b y}`, `[1, D, 1, 1]`
    pub proj_backward: ParamId,
    /// `b_y`, scalar
    pub proj_bias: ParamId,
}

impl ReadController {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, spatial: (usize, usize), rng: &mut impl Rng) -> Self {
        let hidden = channels;
        let forward_cell = ConvLstmCell::new(store, &format!("{prefix}.fwd"), channels, hidden, spatial, rng);
        let backward_cell = ConvLstmCell::new(store, &format!("{prefix}.bwd"), channels, hidden, spatial, rng);
        let proj_shape = Shape::new(1, hidden, 1, 1).expect("projection shape");
        let proj_forward = store.glorot(format!("{prefix}.proj_f"), proj_shape, rng);
        let proj_backward = store.glorot(format!("{prefix}.proj_b"), proj_shape, rng);
        let proj_bias = store.zeros(format!("{prefix}.proj_bias"), Shape::scalar());
        ReadController {
            forward_cell,
            backward_cell,
            proj_forward,
            proj_backward,
            proj_bias,
        }
    }

    fn scan(&self, g: &mut Graph, p: &Bound, cell: &ConvLstmCell, xs: &[Var], reverse: bool) -> Result<Vec<Var>> {
        let n = xs.len();
        let mut hs = vec![xs[0]; n];
        let mut state = None;
        for k in 0..n {
            let t = if reverse { n - 1 - k } else { k };
            let next = cell.step_from(g, p, xs[t], state)?;
            hs[t] = next.h;
            state = Some(next);
        }
        Ok(hs)
    }

    /// Per-slot scores `[B, n, 1, 1]`: spatial mean of
    /// `W_hfy * h_f(t) + W_hby * h_b(t) + b_y`.
    pub fn scores(&self, g: &mut Graph, p: &Bound, xs: &[Var]) -> Result<Var> {
        let hf = self.scan(g, p, &self.forward_cell, xs, false)?;
        let hb = self.scan(g, p, &self.backward_cell, xs, true)?;
        let mut scores = Vec::with_capacity(xs.len());
        for t in 0..xs.len() {
            // Spatial averaging commutes with the 1x1 projection.
            let mf = g.spatial_mean(hf[t])?;
            let mb = g.spatial_mean(hb[t])?;
            let sf = g.conv2d(mf, p[self.proj_forward], Some(p[self.proj_bias]), 1, 0)?;
            let sb = g.conv2d(mb, p[self.proj_backward], None, 1, 0)?;
            scores.push(g.add(sf, sb)?);
        }
        g.concat(&scores)
    }

    pub fn read(&self, g: &mut Graph, p: &Bound, xs: &[Var], mode: &AttentionMode) -> Result<ReadOutput> {
        if xs.is_empty() {
            return Err(TensorError::Invalid {
                op: "read",
                reason: "no slot responses".into(),
            });
        }
        let batch = g.shape(xs[0]).batch();
        let alpha = match mode {
            AttentionMode::Forced(values) => {
                if values.len() != xs.len() {
                    return Err(TensorError::Mismatch {
                        op: "read",
                        dim: "forced attention length",
                        left: xs.len(),
                        right: values.len(),
                    });
                }
                let mut v = Vec::with_capacity(batch * values.len());
                for _ in 0..batch {
                    v.extend_from_slice(values);
                }
                g.constant(Tensor::from_vec(Shape::new(batch, xs.len(), 1, 1)?, v)?)
            }
            AttentionMode::Attached | AttentionMode::Detached => {
                let scores = self.scores(g, p, xs)?;
                let alpha = g.softmax_channels(scores)?;
                if *mode == AttentionMode::Detached {
                    g.detach(alpha)
                } else {
                    alpha
                }
            }
        };
        let mut terms = Vec::with_capacity(xs.len());
        for (t, &x) in xs.iter().enumerate() {
            let a = g.slice_channels(alpha, t, 1)?;
            terms.push(g.scale_by(x, a)?);
        }
        let z_m = g.add_all(&terms)?;
        let n = xs.len();
        let weights = g
            .value(alpha)
            .values()
            .chunks(n)
            .map(|c| AttentionWeights { alpha: c.to_vec() })
            .collect();
        Ok(ReadOutput { z_m, alpha, weights })
    }
}

/// One memory module: bank, controller and the 2C→C fusion convolution.
#[derive(Clone, Debug)]
pub struct Som {
    pub bank: MemoryBank,
    pub controller: ReadController,
    pub fusion: Conv,
    pub spatial: (usize, usize),
}

impl Som {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        spatial: (usize, usize),
        config: SomConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let bank = MemoryBank::new(store, &format!("{prefix}.bank"), channels, config.slots, rng);
        let controller = ReadController::new(store, &format!("{prefix}.agc"), channels, spatial, rng);
        let fusion = Conv::pointwise(store, &format!("{prefix}.fuse"), 2 * channels, channels, true, rng);
        // Start as a pass-through of the query; the memory half is learned.
        let w = store.get_mut(fusion.weight).values_mut();
        w.fill(0.0);
        for c in 0..channels {
            w[c * 2 * channels + c] = 1.0;
        }
        Som {
            bank,
            controller,
            fusion,
            spatial,
        }
    }

    /// `Z_id = fuse(concat(Z_i, Z_m))`.
    pub fn transfer(&self, g: &mut Graph, p: &Bound, query: Var, mode: &AttentionMode) -> Result<(Var, ReadOutput)> {
        let xs = self.bank.query(g, p, query)?;
        let read = self.controller.read(g, p, &xs, mode)?;
        let joined = g.concat(&[query, read.z_m])?;
        let z_id = self.fusion.forward(g, p, joined)?;
        Ok((z_id, read))
    }
}

/// One memory module per pyramid level.
#[derive(Clone, Debug)]
pub struct SomStack {
    pub levels: Vec<Som>,
}

impl SomStack {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: [usize; 4],
        spatial: [(usize, usize); 4],
        config: SomConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let levels = (0..4)
            .map(|l| Som::new(store, &format!("{prefix}.l{}", l + 1), channels[l], spatial[l], config, rng))
            .collect();
        SomStack { levels }
    }

    /// Per-parameter step multipliers for the attention-scaled write: every
    /// slot parameter gets the batch-mean attention of its slot, everything
    /// else 1.
    pub fn write_scales(&self, param_count: usize, attention: &[AttentionWeights]) -> std::result::Result<Vec<f64>, SomError> {
        if attention.len() != self.levels.len() {
            return Err(SomError::LevelCount {
                expected: self.levels.len(),
                got: attention.len(),
            });
        }
        let mut scales = vec![1.0; param_count];
        for (level, (som, alpha)) in self.levels.iter().zip(attention).enumerate() {
            attention_scaled_update(&som.bank, alpha, level, &mut scales)?;
        }
        Ok(scales)
    }
}

/// Writes `α_t` into the step multiplier of slot `t`'s kernel and bias, so an
/// optimizer step realizes `W_t ← W_t + α_t·η·Δ_{W_t}`.
pub fn attention_scaled_update(
    bank: &MemoryBank,
    alpha: &AttentionWeights,
    level: usize,
    scales: &mut [f64],
) -> std::result::Result<(), SomError> {
    if alpha.len() != bank.len() {
        return Err(SomError::StaleAttention {
            level,
            expected: bank.len(),
            got: alpha.len(),
        });
    }
    for (slot, &a) in bank.slots.iter().zip(&alpha.alpha) {
        scales[slot.weight.index()] = a;
        scales[slot.bias.index()] = a;
    }
    Ok(())
}
