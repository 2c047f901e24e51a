//! Training, evaluation and checkpoints.

mod checkpoint;
mod config;
mod eval;
mod model;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, MAGIC, VERSION};
pub use config::{ConfigError, ModelConfig, TrainConfig, Variant};
pub use eval::{constant_predictor_error, evaluate, evaluate_manifest, evaluate_predictions, EvalReport};
pub use model::{
    downsample_mean, image_input, log_depth_input, DepthAutoEncoder, DepthNet, NetForward, TrainedModel,
};
pub use train::{
    format_log, median_depth, train_stage1, train_stage2, LogRow, Stage1Outcome, Stage2Outcome, LOG_HEADER,
    OUTPUT_STRIDE,
};

use crate::backbone::BackboneError;
use crate::data::DataError;
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::som::SomError;
use crate::tensor::{Shape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("loss became non-finite ({value}) at step {step}")]
    NonFinite { step: usize, value: f64 },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("incompatible inputs: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Som(#[from] SomError),
    #[error(transparent)]
    Data(#[from] DataError),
}

const STAGE_KEY: &str = "meta.stage";
const STEP_KEY: &str = "meta.step";

fn row(values: Vec<f64>) -> Tensor {
    let n = values.len();
    Tensor::from_vec(Shape::new(1, 1, 1, n).expect("non-empty echo"), values).expect("length matches")
}

/// Parameters, optimizer moments, step counter and config echo.
pub fn model_checkpoint(stage: u8, config: &TrainConfig, store: &ParamStore, adam: &Adam) -> Checkpoint {
    let mut ck = Checkpoint::new();
    let mut put = |name: String, t: Tensor| ck.insert(name, t).expect("names are unique");
    put(STAGE_KEY.into(), Tensor::scalar(stage as f64));
    put(STEP_KEY.into(), Tensor::scalar(adam.steps_taken() as f64));
    for (key, values) in config.to_numeric() {
        put(format!("config.{key}"), row(values));
    }
    for id in store.ids() {
        let t = store.get(id);
        let name = store.name(id);
        put(name.to_string(), Tensor::from_vec(t.shape(), t.values().to_vec()).expect("same shape"));
        let (m, v) = adam.moments(id);
        put(format!("adam.m.{name}"), Tensor::from_vec(t.shape(), m.to_vec()).expect("same shape"));
        put(format!("adam.v.{name}"), Tensor::from_vec(t.shape(), v.to_vec()).expect("same shape"));
    }
    ck
}

pub fn stage1_checkpoint(config: &TrainConfig, outcome: &Stage1Outcome) -> Checkpoint {
    model_checkpoint(1, config, &outcome.model.store, &outcome.optimizer)
}

pub fn stage2_checkpoint(config: &TrainConfig, outcome: &Stage2Outcome) -> Checkpoint {
    model_checkpoint(2, config, &outcome.model.store, &outcome.optimizer)
}

/// Stage number and the echoed configuration.
pub fn checkpoint_config(ck: &Checkpoint) -> Result<(u8, TrainConfig), HarnessError> {
    let stage = ck.scalar(STAGE_KEY)? as u8;
    let config = TrainConfig::from_numeric(|k| ck.get(&format!("config.{k}")).map(|t| t.values().to_vec()))?;
    Ok((stage, config))
}

fn fill_store(ck: &Checkpoint, store: &mut ParamStore) -> Result<(), HarnessError> {
    for (name, t) in store.iter_mut() {
        let src = ck.require(name)?;
        if src.shape() != t.shape() {
            return Err(HarnessError::Mismatch(format!(
                "parameter {name}: checkpoint {} vs model {}",
                src.shape(),
                t.shape()
            )));
        }
        t.values_mut().copy_from_slice(src.values());
    }
    Ok(())
}

fn expect_stage(found: u8, wanted: u8) -> Result<(), HarnessError> {
    if found != wanted {
        return Err(HarnessError::Mismatch(format!("expected a stage-{wanted} checkpoint, found stage {found}")));
    }
    Ok(())
}

// Architecture construction consumes random numbers; the values are overwritten.
fn scratch_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

pub fn load_autoencoder(ck: &Checkpoint) -> Result<(TrainConfig, DepthAutoEncoder), HarnessError> {
    let (stage, config) = checkpoint_config(ck)?;
    expect_stage(stage, 1)?;
    let mut model = DepthAutoEncoder::new(config.model, &mut scratch_rng())?;
    fill_store(ck, &mut model.store)?;
    Ok((config, model))
}

pub fn load_net(ck: &Checkpoint) -> Result<(TrainConfig, DepthNet), HarnessError> {
    let (stage, config) = checkpoint_config(ck)?;
    expect_stage(stage, 2)?;
    let mut model = DepthNet::new(config.model, config.variant, &mut scratch_rng())?;
    fill_store(ck, &mut model.store)?;
    Ok((config, model))
}

/// Whichever network the checkpoint holds.
pub fn load_model(ck: &Checkpoint) -> Result<(TrainConfig, TrainedModel), HarnessError> {
    match checkpoint_config(ck)?.0 {
        1 => load_autoencoder(ck).map(|(c, m)| (c, TrainedModel::AutoEncoder(m))),
        _ => load_net(ck).map(|(c, m)| (c, TrainedModel::Net(m))),
    }
}

/// Optimizer state for resuming from `ck` with the parameters in `store`.
pub fn restore_optimizer(ck: &Checkpoint, config: &TrainConfig, store: &ParamStore) -> Result<Adam, HarnessError> {
    let step = ck.scalar(STEP_KEY)? as u64;
    let mut first = Vec::with_capacity(store.len());
    let mut second = Vec::with_capacity(store.len());
    for (name, _) in store.iter() {
        first.push(ck.require(&format!("adam.m.{name}"))?.values().to_vec());
        second.push(ck.require(&format!("adam.v.{name}"))?.values().to_vec());
    }
    Ok(Adam::from_state(config.adam(), step, first, second))
}
