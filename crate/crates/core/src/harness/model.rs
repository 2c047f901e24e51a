//! Stage-1 auto-encoder and stage-2 depth network.

use rand::Rng;

use super::config::{ModelConfig, Variant};
use crate::backbone::{predict_depth, BackboneError, Decoder, DecoderVariant, Encoder, PyramidFeatures};
use crate::params::{Bound, ParamStore};
use crate::som::{AttentionMode, ReadOutput, SomStack};
use crate::tensor::{Graph, Result, Shape, Tensor, TensorError, Var};

/// Depth maps enter the networks as log-depth.
pub fn log_depth_input(depth: &Tensor) -> Tensor {
    depth.map(f64::ln)
}

/// Images enter the networks centred on zero.
pub fn image_input(rgb: &Tensor) -> Tensor {
    rgb.map(|v| v - 0.5)
}

/// Block mean over `factor x factor` windows.
pub fn downsample_mean(t: &Tensor, factor: usize) -> Result<Tensor> {
    let [b, c, h, w] = t.shape().dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(TensorError::Invalid {
            op: "downsample_mean",
            reason: format!("{h}x{w} not divisible by {factor}"),
        });
    }
    let (oh, ow) = (h / factor, w / factor);
    let shape = Shape::new(b, c, oh, ow)?;
    let src = t.values();
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0; shape.numel()];
    for p in 0..b * c {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for dy in 0..factor {
                    let row = p * h * w + (y * factor + dy) * w + x * factor;
                    acc += src[row..row + factor].iter().sum::<f64>();
                }
                out[p * oh * ow + y * ow + x] = acc / norm;
            }
        }
    }
    Tensor::from_vec(shape, out)
}

/// `(E_d, D_d)`: log-depth in, depth at 1/4 resolution out.
#[derive(Clone, Debug)]
pub struct DepthAutoEncoder {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

pub const AE_ENCODER: &str = "ae.enc";
pub const AE_DECODER: &str = "ae.dec";

impl DepthAutoEncoder {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> std::result::Result<Self, BackboneError> {
        let mut store = ParamStore::new();
        let hw = (config.height, config.width);
        let encoder = Encoder::new(&mut store, AE_ENCODER, 1, hw, config.encoder, rng)?;
        let decoder = Decoder::new(DecoderVariant::Fpn, &mut store, AE_DECODER, config.encoder.stage_channels, rng);
        Ok(DepthAutoEncoder {
            config,
            store,
            encoder,
            decoder,
        })
    }

    /// `Z_d` for a log-depth batch.
    pub fn encode(&self, g: &mut Graph, p: &Bound, log_depth: Var) -> Result<PyramidFeatures> {
        self.encoder.encode(g, p, log_depth)
    }

    /// Reconstructed depth `[B, 1, H/4, W/4]`.
    pub fn reconstruct(&self, g: &mut Graph, p: &Bound, log_depth: Var) -> Result<Var> {
        let z = self.encode(g, p, log_depth)?;
        let out = self.decoder.decode(g, p, &z)?;
        predict_depth(g, out)
    }
}

/// `(E_i, M_id, P_d)`.
#[derive(Clone, Debug)]
pub struct DepthNet {
    pub config: ModelConfig,
    pub variant: Variant,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub memory: Option<SomStack>,
    pub decoder: Decoder,
}

pub const NET_ENCODER: &str = "net.enc";
pub const NET_MEMORY: &str = "net.som";
pub const NET_DECODER: &str = "net.dec";

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct NetForward {
    /// `Z_i`
    pub source: PyramidFeatures,
    /// `Z_id` (memory variant only).
    pub transferred: Option<PyramidFeatures>,
    pub reads: Vec<ReadOutput>,
    /// Depth `[B, 1, H/4, W/4]`.
    pub depth: Var,
}

impl NetForward {
    /// Features that the alignment loss compares against `Z_d`.
    pub fn aligned(&self) -> &PyramidFeatures {
        self.transferred.as_ref().unwrap_or(&self.source)
    }
}

impl DepthNet {
    pub fn new(config: ModelConfig, variant: Variant, rng: &mut impl Rng) -> std::result::Result<Self, BackboneError> {
        let mut store = ParamStore::new();
        let hw = (config.height, config.width);
        let channels = config.encoder.stage_channels;
        let encoder = Encoder::new(&mut store, NET_ENCODER, 3, hw, config.encoder, rng)?;
        let memory = (variant == Variant::Som).then(|| {
            let spatial = [4, 8, 16, 32].map(|f| (config.height / f, config.width / f));
            SomStack::new(&mut store, NET_MEMORY, channels, spatial, config.som, rng)
        });
        let decoder = Decoder::new(variant.decoder(), &mut store, NET_DECODER, channels, rng);
        Ok(DepthNet {
            config,
            variant,
            store,
            encoder,
            memory,
            decoder,
        })
    }

    /// Copies the stage-1 decoder into `P_d`; returns how many tensors were copied.
    /// Only the pyramid decoder matches the auto-encoder's layout.
    pub fn init_decoder_from(&mut self, ae: &DepthAutoEncoder) -> std::result::Result<usize, String> {
        if self.decoder.variant() != ae.decoder.variant() {
            return Err(format!("{:?} decoder cannot start from a {:?} decoder", self.decoder.variant(), ae.decoder.variant()));
        }
        let mut copied = 0;
        for id in self.store.ids().collect::<Vec<_>>() {
            let Some(suffix) = self.store.name(id).strip_prefix(NET_DECODER).map(str::to_owned) else {
                continue;
            };
            let src_id = ae
                .store
                .find(&format!("{AE_DECODER}{suffix}"))
                .ok_or_else(|| format!("auto-encoder has no {AE_DECODER}{suffix}"))?;
            let src = ae.store.get(src_id);
            let dst = self.store.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(format!("{AE_DECODER}{suffix}: shape {} vs {}", src.shape(), dst.shape()));
            }
            dst.values_mut().copy_from_slice(src.values());
            copied += 1;
        }
        Ok(copied)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, image: Var, mode: &AttentionMode) -> Result<NetForward> {
        let source = self.encoder.encode(g, p, image)?;
        let mut reads = Vec::new();
        let transferred = match &self.memory {
            Some(stack) => {
                let mut levels = source.levels;
                for (level, som) in levels.iter_mut().zip(&stack.levels) {
                    let (z_id, read) = som.transfer(g, p, *level, mode)?;
                    *level = z_id;
                    reads.push(read);
                }
                Some(PyramidFeatures { levels })
            }
            None => None,
        };
        let decoded = self.decoder.decode(g, p, transferred.as_ref().unwrap_or(&source))?;
        let depth = predict_depth(g, decoded)?;
        Ok(NetForward {
            source,
            transferred,
            reads,
            depth,
        })
    }
}

/// Either trained network, as restored from a checkpoint.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    AutoEncoder(DepthAutoEncoder),
    Net(DepthNet),
}

impl TrainedModel {
    pub fn store(&self) -> &ParamStore {
        match self {
            TrainedModel::AutoEncoder(m) => &m.store,
            TrainedModel::Net(m) => &m.store,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            TrainedModel::AutoEncoder(m) => &m.config,
            TrainedModel::Net(m) => &m.config,
        }
    }

    /// Depth at 1/4 resolution for one `[1, 3, H, W]` image (network) or
    /// one `[1, 1, H, W]` depth map (auto-encoder).
    pub fn predict_quarter(&self, rgb: &Tensor, depth: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store().bind_frozen(&mut g);
        let out = match self {
            TrainedModel::AutoEncoder(m) => {
                let d = depth.ok_or_else(|| TensorError::Invalid {
                    op: "predict",
                    reason: "the auto-encoder needs a depth map".into(),
                })?;
                let x = g.constant(log_depth_input(d));
                m.reconstruct(&mut g, &p, x)?
            }
            TrainedModel::Net(m) => {
                let x = g.constant(image_input(rgb));
                m.forward(&mut g, &p, x, &AttentionMode::Attached)?.depth
            }
        };
        Ok(g.value(out).clone())
    }

    /// Full-resolution prediction (nearest upsampling of the 1/4 output).
    pub fn predict(&self, rgb: &Tensor, depth: Option<&Tensor>) -> Result<Tensor> {
        let q = self.predict_quarter(rgb, depth)?;
        let c = self.config();
        crate::metrics::upsample_prediction(&q, c.height, c.width)
    }
}
