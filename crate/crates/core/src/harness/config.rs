//! Run configuration and the `key = value` file format.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::backbone::{DecoderVariant, EncoderConfig};
use crate::losses::{LossSchedule, LossWeights};
use crate::optim::AdamConfig;
use crate::som::SomConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Ablation ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Encoder and a plain upsampling decoder.
    Pure,
    /// Encoder and the pyramid decoder.
    Fpn,
    /// `Fpn` plus an L1 pull of `Z_i` toward `Z_d`.
    Align,
    /// `Fpn` plus per-level memory modules aligned to `Z_d`.
    Som,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Pure, Variant::Fpn, Variant::Align, Variant::Som];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pure => "pure",
            Variant::Fpn => "fpn",
            Variant::Align => "align",
            Variant::Som => "som",
        }
    }

    pub fn index(self) -> usize {
        Variant::ALL.iter().position(|&v| v == self).expect("listed")
    }

    pub fn decoder(self) -> DecoderVariant {
        match self {
            Variant::Pure => DecoderVariant::Pure,
            _ => DecoderVariant::Fpn,
        }
    }

    pub fn uses_cmrc(self) -> bool {
        matches!(self, Variant::Align | Variant::Som)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected pure, fpn, align or som)"))
    }
}

/// Network sizes shared by both stages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub encoder: EncoderConfig,
    pub som: SomConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            encoder: EncoderConfig::default(),
            som: SomConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied once per decay interval.
    pub lr_decay: f64,
    /// Decay interval in epochs; converted to steps from the training set size.
    pub decay_interval: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Stage-2 steps.
    pub steps: usize,
    pub stage1_steps: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub augment: bool,
    /// Start the stage-2 pyramid decoder from the stage-1 decoder weights.
    pub init_predictor: bool,
    pub schedule: LossSchedule,
    pub weights: LossWeights,
    pub variant: Variant,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let steps = 4000;
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 0.5,
            decay_interval: 10,
            weight_decay: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 2,
            steps,
            stage1_steps: 2000,
            seed: 0,
            data_seed: 7,
            n_train: 800,
            n_val: 200,
            augment: true,
            init_predictor: true,
            schedule: LossSchedule::scaled(steps),
            weights: LossWeights::default(),
            variant: Variant::Som,
            model: ModelConfig::default(),
        }
    }
}

fn parse<T: FromStr>(value: &str, what: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{what}: cannot parse {value:?}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, found {value:?}")),
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Decay interval in optimizer steps.
    pub fn decay_interval_steps(&self, train_len: usize) -> usize {
        self.decay_interval * train_len.div_ceil(self.batch_size.max(1))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be finite and positive", self.learning_rate));
        }
        if self.steps == 0 || self.stage1_steps == 0 {
            return fail("steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.schedule.gradient_on_step > self.schedule.normal_on_step {
            return fail("gradient_on_step must not exceed normal_on_step".into());
        }
        let w = &self.weights;
        if [w.depth, w.cmrc, w.gradient, w.normal].iter().any(|&x| !(x >= 0.0)) {
            return fail("loss weights must be non-negative".into());
        }
        if self.model.som.slots == 0 {
            return fail("slots must be at least 1".into());
        }
        if self.n_train == 0 || self.n_val == 0 {
            return fail("n_train and n_val must be at least 1".into());
        }
        self.model.encoder.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        crate::backbone::check_input_size(self.model.height, self.model.width)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "learning_rate" => self.learning_rate = parse(value, key)?,
            "lr_decay" => self.lr_decay = parse(value, key)?,
            "decay_interval" => self.decay_interval = parse(value, key)?,
            "weight_decay" => self.weight_decay = parse(value, key)?,
            "adam_beta1" => self.adam_beta1 = parse(value, key)?,
            "adam_beta2" => self.adam_beta2 = parse(value, key)?,
            "adam_eps" => self.adam_eps = parse(value, key)?,
            "batch_size" => self.batch_size = parse(value, key)?,
            "steps" => self.steps = parse(value, key)?,
            "stage1_steps" => self.stage1_steps = parse(value, key)?,
            "seed" => self.seed = parse(value, key)?,
            "data_seed" => self.data_seed = parse(value, key)?,
            "n_train" => self.n_train = parse(value, key)?,
            "n_val" => self.n_val = parse(value, key)?,
            "augment" => self.augment = parse_bool(value)?,
            "init_predictor" => self.init_predictor = parse_bool(value)?,
            "gradient_on_step" => self.schedule.gradient_on_step = parse(value, key)?,
            "normal_on_step" => self.schedule.normal_on_step = parse(value, key)?,
            "lambda_depth" => self.weights.depth = parse(value, key)?,
            "lambda_cmrc" => self.weights.cmrc = parse(value, key)?,
            "lambda_gradient" => self.weights.gradient = parse(value, key)?,
            "lambda_normal" => self.weights.normal = parse(value, key)?,
            "variant" => self.variant = value.parse()?,
            "height" => self.model.height = parse(value, key)?,
            "width" => self.model.width = parse(value, key)?,
            "convs_per_stage" => self.model.encoder.convs_per_stage = parse(value, key)?,
            "slots" => self.model.som.slots = parse(value, key)?,
            "stage_channels" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(format!("stage_channels needs 4 values, found {}", parts.len()));
                }
                for (c, p) in self.model.encoder.stage_channels.iter_mut().zip(parts) {
                    *c = parse(p, key)?;
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Overrides fields from `key = value` lines. Blank lines and `#`
    /// comments are skipped. Unless the schedule is given explicitly, it is
    /// rescaled to the (possibly overridden) step count.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut explicit_schedule = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Line { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            let key = key.trim();
            explicit_schedule |= key == "gradient_on_step" || key == "normal_on_step";
            self.set(key, value.trim()).map_err(err)?;
        }
        if !explicit_schedule {
            self.schedule = LossSchedule::scaled(self.steps);
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<TrainConfig, ConfigError> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Every setting as `key = value` lines accepted by [`TrainConfig::from_text`].
    pub fn to_text(&self) -> String {
        self.to_numeric()
            .into_iter()
            .filter(|(k, _)| !k.starts_with("seed_"))
            .map(|(k, v)| match k {
                "variant" => format!("variant = {}\n", self.variant),
                "augment" => format!("augment = {}\n", self.augment),
                "init_predictor" => format!("init_predictor = {}\n", self.init_predictor),
                "stage_channels" => {
                    let c = self.model.encoder.stage_channels;
                    format!("stage_channels = {},{},{},{}\n", c[0], c[1], c[2], c[3])
                }
                _ => format!("{k} = {}\n", v[0]),
            })
            .chain([format!("seed = {}\n", self.seed)])
            .collect()
    }

    /// Numeric echo stored alongside checkpoints. The seed is split into
    /// two 32-bit halves so it survives the f64 encoding.
    pub fn to_numeric(&self) -> Vec<(&'static str, Vec<f64>)> {
        let c = self.model.encoder.stage_channels;
        vec![
            ("learning_rate", vec![self.learning_rate]),
            ("lr_decay", vec![self.lr_decay]),
            ("decay_interval", vec![self.decay_interval as f64]),
            ("weight_decay", vec![self.weight_decay]),
            ("adam_beta1", vec![self.adam_beta1]),
            ("adam_beta2", vec![self.adam_beta2]),
            ("adam_eps", vec![self.adam_eps]),
            ("batch_size", vec![self.batch_size as f64]),
            ("steps", vec![self.steps as f64]),
            ("stage1_steps", vec![self.stage1_steps as f64]),
            ("seed_lo", vec![(self.seed & 0xffff_ffff) as f64]),
            ("seed_hi", vec![(self.seed >> 32) as f64]),
            ("data_seed", vec![self.data_seed as f64]),
            ("n_train", vec![self.n_train as f64]),
            ("n_val", vec![self.n_val as f64]),
            ("augment", vec![self.augment as u8 as f64]),
            ("init_predictor", vec![self.init_predictor as u8 as f64]),
            ("gradient_on_step", vec![self.schedule.gradient_on_step as f64]),
            ("normal_on_step", vec![self.schedule.normal_on_step as f64]),
            ("lambda_depth", vec![self.weights.depth]),
            ("lambda_cmrc", vec![self.weights.cmrc]),
            ("lambda_gradient", vec![self.weights.gradient]),
            ("lambda_normal", vec![self.weights.normal]),
            ("variant", vec![self.variant.index() as f64]),
            ("height", vec![self.model.height as f64]),
            ("width", vec![self.model.width as f64]),
            ("convs_per_stage", vec![self.model.encoder.convs_per_stage as f64]),
            ("slots", vec![self.model.som.slots as f64]),
            ("stage_channels", c.iter().map(|&v| v as f64).collect()),
        ]
    }

    /// Inverse of [`TrainConfig::to_numeric`]; missing keys keep defaults.
    pub fn from_numeric(get: impl Fn(&str) -> Option<Vec<f64>>) -> Result<TrainConfig, ConfigError> {
        let mut c = TrainConfig::default();
        let mut seed = [0u64; 2];
        for (key, _) in TrainConfig::default().to_numeric() {
            let Some(v) = get(key) else { continue };
            let bad = || ConfigError::Invalid(format!("config echo {key} has {} values", v.len()));
            let first = *v.first().ok_or_else(bad)?;
            match key {
                "seed_lo" => seed[0] = first as u64,
                "seed_hi" => seed[1] = first as u64,
                "variant" => {
                    c.variant = *Variant::ALL
                        .get(first as usize)
                        .ok_or_else(|| ConfigError::Invalid(format!("variant index {first}")))?
                }
                "augment" => c.augment = first != 0.0,
                "init_predictor" => c.init_predictor = first != 0.0,
                "stage_channels" => {
                    if v.len() != 4 {
                        return Err(bad());
                    }
                    for (dst, src) in c.model.encoder.stage_channels.iter_mut().zip(&v) {
                        *dst = *src as usize;
                    }
                }
                _ => c.set(key, &first.to_string()).map_err(ConfigError::Invalid)?,
            }
        }
        c.seed = seed[0] | (seed[1] << 32);
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults_and_rescales_schedule() {
        let c = TrainConfig::from_text("# desk run\nsteps = 1000\nvariant = align\n\nstage_channels = 8, 8, 16, 16\n").unwrap();
        assert_eq!(c.steps, 1000);
        assert_eq!(c.variant, Variant::Align);
        assert_eq!(c.schedule, LossSchedule::scaled(1000));
        assert_eq!(c.model.encoder.stage_channels, [8, 8, 16, 16]);
        let c = TrainConfig::from_text("steps = 1000\ngradient_on_step = 10\nnormal_on_step = 20").unwrap();
        assert_eq!((c.schedule.gradient_on_step, c.schedule.normal_on_step), (10, 20));
    }

    #[test]
    fn bad_line_reports_its_number() {
        let e = TrainConfig::from_text("steps = 10\n\nbatch_size: 4\n").unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 3, .. }), "{e}");
        let e = TrainConfig::from_text("seed = 1\nfrobnicate = 2\n").unwrap_err();
        assert!(e.to_string().starts_with("line 2:"), "{e}");
        let e = TrainConfig::from_text("steps = many").unwrap_err();
        assert!(matches!(e, ConfigError::Line { line: 1, .. }));
    }

    #[test]
    fn text_and_numeric_round_trip() {
        let mut c = TrainConfig::default();
        c.seed = u64::MAX - 12345;
        c.variant = Variant::Pure;
        c.augment = false;
        c.init_predictor = false;
        c.model.encoder.stage_channels = [4, 8, 8, 16];
        let pairs = c.to_numeric();
        let back = TrainConfig::from_numeric(|k| pairs.iter().find(|(n, _)| *n == k).map(|(_, v)| v.clone())).unwrap();
        assert_eq!(back, c);
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(TrainConfig::from_text("learning_rate = -1").is_err());
        assert!(TrainConfig::from_text("height = 48").is_err());
        assert!(TrainConfig::from_text("variant = dense").is_err());
    }
}
