use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{adaptive_mse_loss, focal_loss_grad, AdaptiveMseConfig, FocalConfig};
use super::model::{Architecture, Autoencoder, AutoencoderParams, Gradients};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::voxel::Repr;
use crate::voxel_metrics::Clip;

/// Reconstruction loss used for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainLoss {
    Focal(FocalConfig),
    AdaptiveMse(AdaptiveMseConfig),
}

impl TrainLoss {
    /// Focal loss for binary grids, adaptive MSE for distance fields.
    pub fn default_for(repr: Repr) -> Self {
        match repr {
            Repr::Binary => TrainLoss::Focal(FocalConfig::default()),
            Repr::Tdf | Repr::Tsdf => TrainLoss::AdaptiveMse(AdaptiveMseConfig::default()),
        }
    }

    pub fn evaluate(
        &self,
        target: &Tensor4,
        output: &Tensor4,
        clip: &Clip,
    ) -> Result<(f64, Tensor4)> {
        match self {
            TrainLoss::Focal(cfg) => focal_loss_grad(target, output, cfg, clip),
            TrainLoss::AdaptiveMse(cfg) => adaptive_mse_loss(target, output, cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub loss: TrainLoss,
    pub clip: Clip,
    pub architecture: Architecture,
}

impl TrainConfig {
    pub fn for_repr(repr: Repr) -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 1,
            steps: 500,
            seed: 0,
            loss: TrainLoss::default_for(repr),
            clip: Clip::default(),
            architecture: Architecture::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size > 0
            && self.steps > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid training configuration {self:?}"
            )));
        }
        if let TrainLoss::AdaptiveMse(c) = self.loss {
            AdaptiveMseConfig::new(c.beta)?;
        }
        Ok(())
    }
}

/// Trained parameters with the per-step batch losses.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: AutoencoderParams,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
    /// Mean loss over the whole dataset with the final parameters.
    pub final_loss: f64,
}

/// Trains a fresh autoencoder on single-channel blocks of one size.
pub fn train(blocks: &[Tensor4], repr: Repr, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(blocks, repr, cfg, |_, _| {})
}

/// [`train`] with a callback receiving `(step, batch_loss)`.
pub fn train_with(
    blocks: &[Tensor4],
    repr: Repr,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = blocks
        .first()
        .ok_or_else(|| Error::EmptyInput("training set has no blocks".into()))?;
    for b in blocks {
        b.same_shape(first)?;
        if b.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "training targets must lie in [0, 1]".into(),
            ));
        }
    }

    let params = AutoencoderParams::init(cfg.architecture, repr, cfg.seed)?;
    let mut adam = Adam::new(
        &params,
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );
    let mut net = Autoencoder::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut grads = Gradients::zeros_like(net.params());
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let x = &blocks[order[cursor]];
            cursor += 1;
            let out = net.forward(x)?;
            let (l, g) = cfg.loss.evaluate(x, &out, &cfg.clip)?;
            loss += l;
            grads.add_assign(&net.backward(&g)?);
        }
        let scale = 1.0 / cfg.batch_size as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        grads.scale(scale);
        losses.push(loss);
        on_step(step, loss);
        adam.step(net.params_mut(), &grads);
    }

    let mut params = net.into_params();
    params.round_to_f32();
    params.train_config = Some(*cfg);
    let final_loss = dataset_loss(blocks, &params, &cfg.loss, &cfg.clip)?;
    if !final_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            step: cfg.steps,
            loss: final_loss,
        });
    }
    Ok(TrainOutcome {
        params,
        losses,
        final_loss,
    })
}

/// Mean reconstruction loss over `blocks`.
pub fn dataset_loss(
    blocks: &[Tensor4],
    params: &AutoencoderParams,
    loss: &TrainLoss,
    clip: &Clip,
) -> Result<f64> {
    let mut net = Autoencoder::new(params.clone());
    let mut total = 0.0;
    for b in blocks {
        let out = net.forward(b)?;
        total += loss.evaluate(b, &out, clip)?.0;
    }
    Ok(total / blocks.len() as f64)
}
