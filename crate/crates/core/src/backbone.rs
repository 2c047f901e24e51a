//! Encoder/decoder skeleton: a small densely connected four-scale encoder,
//! the pyramid (FPN) decoder, the plain symmetric decoder, and the depth head.

use rand::Rng;
use thiserror::Error;

use crate::params::{Bound, Conv, ParamStore};
use crate::tensor::{Graph, Result, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackboneError {
    #[error("input {height}x{width} is not divisible by 32")]
    Indivisible { height: usize, width: usize },
    #[error("stage channels must be positive and non-decreasing, got {0:?}")]
    Channels([usize; 4]),
    #[error("convs_per_stage must be >= 1")]
    NoConvs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub stage_channels: [usize; 4],
    pub convs_per_stage: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            stage_channels: [16, 32, 64, 128],
            convs_per_stage: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> std::result::Result<(), BackboneError> {
        let c = self.stage_channels;
        if c[0] == 0 || c.windows(2).any(|w| w[1] < w[0]) {
            return Err(BackboneError::Channels(c));
        }
        if self.convs_per_stage == 0 {
            return Err(BackboneError::NoConvs);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecoderVariant {
    Fpn,
    Pure,
}

/// Features at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PyramidFeatures {
    pub levels: [Var; 4],
}

pub fn check_input_size(height: usize, width: usize) -> std::result::Result<(), BackboneError> {
    if height == 0 || width == 0 || !height.is_multiple_of(32) || !width.is_multiple_of(32) {
        return Err(BackboneError::Indivisible { height, width });
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct DenseStage {
    entry: Vec<Conv>,
    layers: Vec<Conv>,
    transition: Conv,
}

/// Four-stage encoder with dense connectivity inside each stage.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub in_channels: usize,
    pub input_hw: (usize, usize),
    stages: Vec<DenseStage>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        input_hw: (usize, usize),
        config: EncoderConfig,
        rng: &mut impl Rng,
    ) -> std::result::Result<Self, BackboneError> {
        config.validate()?;
        check_input_size(input_hw.0, input_hw.1)?;
        let ch = config.stage_channels;
        let mut stages = Vec::with_capacity(4);
        for (s, &c) in ch.iter().enumerate() {
            let name = format!("{prefix}.s{}", s + 1);
            // Stage 1 reaches 1/4 with two stride-2 convolutions, later stages with one.
            let entry = if s == 0 {
                vec![
                    Conv::new(store, &format!("{name}.down0"), in_channels, c, 3, 2, 1, true, rng),
                    Conv::new(store, &format!("{name}.down1"), c, c, 3, 2, 1, true, rng),
                ]
            } else {
                vec![Conv::new(store, &format!("{name}.down0"), ch[s - 1], c, 3, 2, 1, true, rng)]
            };
            let layers = (0..config.convs_per_stage)
                .map(|j| Conv::same3(store, &format!("{name}.dense{j}"), c * (j + 1), c, rng))
                .collect();
            let transition = Conv::pointwise(
                store,
                &format!("{name}.trans"),
                c * (config.convs_per_stage + 1),
                c,
                true,
                rng,
            );
            stages.push(DenseStage {
                entry,
                layers,
                transition,
            });
        }
        Ok(Encoder {
            config,
            in_channels,
            input_hw,
            stages,
        })
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, image: Var) -> Result<PyramidFeatures> {
        let [_, c, h, w] = g.shape(image).dims();
        if c != self.in_channels {
            return Err(TensorError::Mismatch {
                op: "encode",
                dim: "channels",
                left: self.in_channels,
                right: c,
            });
        }
        if (h, w) != self.input_hw {
            return Err(TensorError::Invalid {
                op: "encode",
                reason: format!("encoder built for {:?}, got {h}x{w}", self.input_hw),
            });
        }
        let mut x = image;
        let mut levels = [image; 4];
        for (s, stage) in self.stages.iter().enumerate() {
            for conv in &stage.entry {
                let y = conv.forward(g, p, x)?;
                x = g.relu(y)?;
            }
            let mut feats = vec![x];
            for conv in &stage.layers {
                let input = if feats.len() == 1 { feats[0] } else { g.concat(&feats)? };
                let y = conv.forward(g, p, input)?;
                feats.push(g.relu(y)?);
            }
            let all = g.concat(&feats)?;
            let y = stage.transition.forward(g, p, all)?;
            x = g.relu(y)?;
            levels[s] = x;
        }
        Ok(PyramidFeatures { levels })
    }
}

/// Two 3x3 convolutions emitting one log-depth channel.
#[derive(Clone, Debug)]
pub struct DepthHead {
    hidden: Conv,
    out: Conv,
}

impl DepthHead {
    pub fn new(store: &mut ParamStore, prefix: &str, in_c: usize, width: usize, rng: &mut impl Rng) -> Self {
        DepthHead {
            hidden: Conv::same3(store, &format!("{prefix}.head0"), in_c, width, rng),
            out: Conv::same3(store, &format!("{prefix}.head1"), width, 1, rng),
        }
    }

    pub fn output_bias(&self) -> crate::params::ParamId {
        self.out.bias.expect("head has bias")
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, p, x)?;
        let h = g.relu(h)?;
        self.out.forward(g, p, h)
    }
}

/// Top-down pyramid fusion followed by concatenation at 1/4 scale.
#[derive(Clone, Debug)]
pub struct FpnDecoder {
    laterals: [Conv; 3],
    pub head: DepthHead,
}

impl FpnDecoder {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: [usize; 4], rng: &mut impl Rng) -> Self {
        let laterals = [
            Conv::pointwise(store, &format!("{prefix}.lat1"), channels[1], channels[0], true, rng),
            Conv::pointwise(store, &format!("{prefix}.lat2"), channels[2], channels[1], true, rng),
            Conv::pointwise(store, &format!("{prefix}.lat3"), channels[3], channels[2], true, rng),
        ];
        let head = DepthHead::new(store, prefix, channels.iter().sum(), channels[0], rng);
        FpnDecoder { laterals, head }
    }

    /// Log-depth at 1/4 of the input resolution.
    pub fn decode(&self, g: &mut Graph, p: &Bound, features: &PyramidFeatures) -> Result<Var> {
        let f = features.levels;
        let mut fused = [f[3]; 4];
        for level in (0..3).rev() {
            // 1x1 convolution commutes with nearest upsampling; run it at the coarse scale.
            let matched = self.laterals[level].forward(g, p, fused[level + 1])?;
            let up = g.upsample2x(matched)?;
            fused[level] = g.add(f[level], up)?;
        }
        let mut volume = vec![fused[0]];
        for (level, &map) in fused.iter().enumerate().skip(1) {
            volume.push(g.upsample(map, 1 << level)?);
        }
        let volume = g.concat(&volume)?;
        self.head.forward(g, p, volume)
    }
}

/// Symmetric decoder that only sees the deepest feature.
#[derive(Clone, Debug)]
pub struct PureDecoder {
    ups: [Conv; 3],
    pub head: DepthHead,
}

impl PureDecoder {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: [usize; 4], rng: &mut impl Rng) -> Self {
        let ups = [
            Conv::same3(store, &format!("{prefix}.up3"), channels[3], channels[2], rng),
            Conv::same3(store, &format!("{prefix}.up2"), channels[2], channels[1], rng),
            Conv::same3(store, &format!("{prefix}.up1"), channels[1], channels[0], rng),
        ];
        let head = DepthHead::new(store, prefix, channels[0], channels[0], rng);
        PureDecoder { ups, head }
    }

    pub fn decode(&self, g: &mut Graph, p: &Bound, deepest: Var) -> Result<Var> {
        let mut x = deepest;
        for conv in &self.ups {
            let up = g.upsample2x(x)?;
            let y = conv.forward(g, p, up)?;
            x = g.relu(y)?;
        }
        self.head.forward(g, p, x)
    }
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Fpn(FpnDecoder),
    Pure(PureDecoder),
}

impl Decoder {
    pub fn new(
        variant: DecoderVariant,
        store: &mut ParamStore,
        prefix: &str,
        channels: [usize; 4],
        rng: &mut impl Rng,
    ) -> Self {
        match variant {
            DecoderVariant::Fpn => Decoder::Fpn(FpnDecoder::new(store, prefix, channels, rng)),
            DecoderVariant::Pure => Decoder::Pure(PureDecoder::new(store, prefix, channels, rng)),
        }
    }

    pub fn variant(&self) -> DecoderVariant {
        match self {
            Decoder::Fpn(_) => DecoderVariant::Fpn,
            Decoder::Pure(_) => DecoderVariant::Pure,
        }
    }

    pub fn head(&self) -> &DepthHead {
        match self {
            Decoder::Fpn(d) => &d.head,
            Decoder::Pure(d) => &d.head,
        }
    }

    pub fn decode(&self, g: &mut Graph, p: &Bound, features: &PyramidFeatures) -> Result<Var> {
        match self {
            Decoder::Fpn(d) => d.decode(g, p, features),
            Decoder::Pure(d) => d.decode(g, p, features.levels[3]),
        }
    }
}

/// `exp(log_depth)`: strictly positive depth.
pub fn predict_depth(g: &mut Graph, log_depth: Var) -> Result<Var> {
    g.exp(log_depth)
}
