//! Two-stage training loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::model::{downsample_mean, image_input, log_depth_input, DepthAutoEncoder, DepthNet};
use super::HarnessError;
use crate::backbone::DecoderVariant;
use crate::data::{augment, AugmentConfig, SceneSample};
use crate::losses::{l_ae, l_cmrc, l_depth, l_gradient, l_normal, total_stage2, LossTerms};
use crate::optim::{decayed_lr, Adam};
use crate::params::ParamStore;
use crate::som::{AttentionMode, AttentionWeights};
use crate::tensor::{Graph, Tensor};

/// Output stride of both decoders.
pub const OUTPUT_STRIDE: usize = 4;

pub const LOG_HEADER: &str = "step,L_depth,L_CMRC,L_grad,L_normal,total";

/// One training-log line. Terms that were not evaluated are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub depth: f64,
    pub cmrc: f64,
    pub gradient: f64,
    pub normal: f64,
    pub total: f64,
}

impl LogRow {
    /// Shortest round-trip formatting, so the CSV preserves every bit.
    pub fn csv(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?}",
            self.step, self.depth, self.cmrc, self.gradient, self.normal, self.total
        )
    }
}

pub fn format_log(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

// Independent random streams derived from the run seed.
const STREAM_INIT_STAGE1: u64 = 1;
const STREAM_INIT_STAGE2: u64 = 2;
const STREAM_BATCHES: u64 = 3;
const STREAM_AUGMENT: u64 = 4;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shuffled passes over the training set.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        BatchSampler {
            order: (0..len).collect(),
            pos: len,
            rng,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

struct Batch {
    rgb: Tensor,
    depth: Tensor,
    /// Ground truth at the output resolution.
    target: Tensor,
}

struct BatchSource<'a> {
    samples: &'a [SceneSample],
    sampler: BatchSampler,
    augment: Option<(AugmentConfig, ChaCha8Rng)>,
    batch_size: usize,
}

impl<'a> BatchSource<'a> {
    fn new(config: &TrainConfig, samples: &'a [SceneSample], seed: u64) -> Self {
        BatchSource {
            samples,
            sampler: BatchSampler::new(samples.len(), rng_for(seed, STREAM_BATCHES)),
            augment: config
                .augment
                .then(|| (AugmentConfig::default(), rng_for(seed, STREAM_AUGMENT))),
            batch_size: config.batch_size,
        }
    }

    fn next(&mut self) -> Result<Batch, HarnessError> {
        let picked: Vec<SceneSample> = self
            .sampler
            .next_batch(self.batch_size)
            .into_iter()
            .map(|i| match &mut self.augment {
                Some((cfg, rng)) => augment(&self.samples[i], cfg, rng),
                None => self.samples[i].clone(),
            })
            .collect();
        let rgb = Tensor::stack(&picked.iter().map(|s| s.rgb.clone()).collect::<Vec<_>>())?;
        let depth = Tensor::stack(&picked.iter().map(|s| s.depth.clone()).collect::<Vec<_>>())?;
        let target = downsample_mean(&depth, OUTPUT_STRIDE)?;
        Ok(Batch { rgb, depth, target })
    }
}

/// Median over every depth pixel of the set.
pub fn median_depth(samples: &[SceneSample]) -> f64 {
    let mut all: Vec<f64> = samples.iter().flat_map(|s| s.depth.values().iter().copied()).collect();
    if all.is_empty() {
        return 1.0;
    }
    let mid = all.len() / 2;
    let (_, m, _) = all.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

fn check_finite(step: usize, value: f64) -> Result<(), HarnessError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::NonFinite { step, value })
    }
}

fn check_training_set(train: &[SceneSample], config: &TrainConfig) -> Result<(), HarnessError> {
    if train.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let (h, w) = (config.model.height, config.model.width);
    if let Some(s) = train.iter().find(|s| (s.height(), s.width()) != (h, w)) {
        return Err(HarnessError::Mismatch(format!(
            "sample {} seed {} is {}x{}, the model expects {h}x{w}",
            s.family,
            s.seed,
            s.height(),
            s.width()
        )));
    }
    Ok(())
}

fn set_output_bias(store: &mut ParamStore, id: crate::params::ParamId, value: f64) {
    store.get_mut(id).values_mut().fill(value);
}

pub struct Stage1Outcome {
    pub model: DepthAutoEncoder,
    pub optimizer: Adam,
    pub log: Vec<LogRow>,
}

/// Trains `(E_d, D_d)` from scratch on the reconstruction loss.
pub fn train_stage1(config: &TrainConfig, train: &[SceneSample]) -> Result<Stage1Outcome, HarnessError> {
    config.validate()?;
    check_training_set(train, config)?;
    let mut model = DepthAutoEncoder::new(config.model, &mut rng_for(config.seed, STREAM_INIT_STAGE1))?;
    let bias = model.decoder.head().output_bias();
    set_output_bias(&mut model.store, bias, median_depth(train).ln());

    let mut adam = Adam::new(config.adam(), &model.store);
    let mut source = BatchSource::new(config, train, config.seed);
    let interval = config.decay_interval_steps(train.len());
    let mut log = Vec::with_capacity(config.stage1_steps);
    for step in 0..config.stage1_steps {
        let batch = source.next()?;
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let x = g.constant(log_depth_input(&batch.depth));
        let d_hat = model.reconstruct(&mut g, &p, x)?;
        let target = g.constant(batch.target);
        let loss = l_ae(&mut g, d_hat, target)?;
        let value = g.value(loss).item();
        check_finite(step, value)?;
        let grads = g.backward(loss)?;
        model.store.zero_grad();
        model.store.accumulate_grads(&p, &grads);
        adam.step(
            &mut model.store,
            decayed_lr(config.learning_rate, config.lr_decay, interval, step),
            |_| 1.0,
        );
        log.push(LogRow {
            step,
            depth: value,
            total: value,
            ..LogRow::default()
        });
    }
    Ok(Stage1Outcome {
        model,
        optimizer: adam,
        log,
    })
}

pub struct Stage2Outcome {
    pub model: DepthNet,
    pub optimizer: Adam,
    /// Frozen stage-1 network; its gradient buffers record anything that reached it.
    pub autoencoder: DepthAutoEncoder,
    pub log: Vec<LogRow>,
    /// `step,level,alpha...` per memory read (batch mean).
    pub attention_trace: Vec<String>,
    /// How many times the alignment loss was evaluated.
    pub cmrc_evaluations: usize,
}

/// Trains `(E_i, M_id, P_d)` against the frozen stage-1 encoder.
pub fn train_stage2(config: &TrainConfig, train: &[SceneSample], stage1: &Checkpoint) -> Result<Stage2Outcome, HarnessError> {
    config.validate()?;
    check_training_set(train, config)?;
    let (stage1_config, mut autoencoder) = super::load_autoencoder(stage1)?;
    if stage1_config.model.encoder != config.model.encoder
        || (stage1_config.model.height, stage1_config.model.width) != (config.model.height, config.model.width)
    {
        return Err(HarnessError::Mismatch(format!(
            "stage-1 checkpoint was trained with {:?} at {}x{}, this run uses {:?} at {}x{}",
            stage1_config.model.encoder.stage_channels,
            stage1_config.model.height,
            stage1_config.model.width,
            config.model.encoder.stage_channels,
            config.model.height,
            config.model.width
        )));
    }
    autoencoder.store.zero_grad();

    let mut model = DepthNet::new(config.model, config.variant, &mut rng_for(config.seed, STREAM_INIT_STAGE2))?;
    if config.init_predictor && model.decoder.variant() == DecoderVariant::Fpn {
        model.init_decoder_from(&autoencoder).map_err(HarnessError::Mismatch)?;
    } else {
        let bias = model.decoder.head().output_bias();
        set_output_bias(&mut model.store, bias, median_depth(train).ln());
    }

    let mut adam = Adam::new(config.adam(), &model.store);
    let mut source = BatchSource::new(config, train, config.seed);
    let interval = config.decay_interval_steps(train.len());
    let mut log = Vec::with_capacity(config.steps);
    let mut trace = Vec::new();
    let mut cmrc_evaluations = 0;
    for step in 0..config.steps {
        let batch = source.next()?;
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let frozen = autoencoder.store.bind_frozen(&mut g);
        let image = g.constant(image_input(&batch.rgb));
        let fwd = model.forward(&mut g, &p, image, &AttentionMode::Attached)?;
        let target = g.constant(batch.target);

        let mut terms = LossTerms {
            depth: Some(l_depth(&mut g, fwd.depth, target)?),
            ..LossTerms::default()
        };
        if config.variant.uses_cmrc() {
            let log_depth = g.constant(log_depth_input(&batch.depth));
            let z_d = autoencoder.encode(&mut g, &frozen, log_depth)?;
            terms.cmrc = Some(l_cmrc(&mut g, &fwd.aligned().levels, &z_d.levels)?);
            cmrc_evaluations += 1;
        }
        if config.schedule.gradient_active(step) {
            terms.gradient = Some(l_gradient(&mut g, fwd.depth, target)?);
        }
        if config.schedule.normal_active(step) {
            terms.normal = Some(l_normal(&mut g, fwd.depth, target)?);
        }
        let total = total_stage2(&mut g, &terms, &config.weights, &config.schedule, step)?;
        let value = |v: Option<crate::tensor::Var>| v.map_or(0.0, |v| g.value(v).item());
        let row = LogRow {
            step,
            depth: value(terms.depth),
            cmrc: value(terms.cmrc),
            gradient: value(terms.gradient),
            normal: value(terms.normal),
            total: g.value(total).item(),
        };
        check_finite(step, row.total)?;

        let grads = g.backward(total)?;
        model.store.zero_grad();
        model.store.accumulate_grads(&p, &grads);
        autoencoder.store.accumulate_grads(&frozen, &grads);

        let scales = match &model.memory {
            Some(stack) => {
                let means: Vec<AttentionWeights> = fwd.reads.iter().map(|r| AttentionWeights::mean(&r.weights)).collect();
                for (level, alpha) in means.iter().enumerate() {
                    trace.push(alpha.trace_line(step, level + 1));
                }
                stack.write_scales(model.store.len(), &means)?
            }
            None => vec![1.0; model.store.len()],
        };
        adam.step(
            &mut model.store,
            decayed_lr(config.learning_rate, config.lr_decay, interval, step),
            |id| scales[id.index()],
        );
        log.push(row);
    }
    Ok(Stage2Outcome {
        model,
        optimizer: adam,
        autoencoder,
        log,
        attention_trace: trace,
        cmrc_evaluations,
    })
}
