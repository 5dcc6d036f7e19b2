use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, OptimizerState, TrainState};
use super::model::{CaeModel, Gradients};
use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub optimizer: OptimizerKind,
    /// Momentum coefficient for SGD.
    pub momentum: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub shuffle_seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            epochs: 50,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::SgdMomentum,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle_seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config("momentum and betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl OptimizerState {
    pub(crate) fn new(kind: OptimizerKind, model: &CaeModel) -> Self {
        let zeros: Vec<Vec<f32>> = model.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
        let second = match kind {
            OptimizerKind::SgdMomentum => Vec::new(),
            OptimizerKind::Adam => zeros.clone(),
        };
        Self {
            kind,
            step: 0,
            first: zeros,
            second,
        }
    }

    fn apply(&mut self, model: &mut CaeModel, grads: &Gradients, tc: &TrainConfig) {
        self.step += 1;
        let lr = tc.learning_rate as f64;
        let params = model.parameters_mut();
        match self.kind {
            OptimizerKind::SgdMomentum => {
                let mu = tc.momentum as f64;
                for ((p, g), v) in params.into_iter().zip(&grads.slots).zip(&mut self.first) {
                    for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        let vel = mu * *v as f64 + g as f64;
                        *v = vel as f32;
                        *p = (*p as f64 - lr * vel) as f32;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (tc.beta1 as f64, tc.beta2 as f64, tc.epsilon as f64);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(&grads.slots)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g as f64;
                        let m1 = b1 * *m as f64 + (1.0 - b1) * g;
                        let v1 = b2 * *v as f64 + (1.0 - b2) * g * g;
                        *m = m1 as f32;
                        *v = v1 as f32;
                        let step = lr * (m1 / c1) / ((v1 / c2).sqrt() + eps);
                        *p = (*p as f64 - step) as f32;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CaeModel,
    /// Mean reconstruction loss of each epoch, over all samples.
    pub loss_curve: Vec<f64>,
}

/// Minibatch reconstruction training. Resumable from a [`Checkpoint`].
#[derive(Debug)]
pub struct Trainer {
    model: CaeModel,
    config: TrainConfig,
    optimizer: OptimizerState,
    epochs_done: usize,
    loss_curve: Vec<f64>,
    checkpoint_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model: CaeModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(config.optimizer, &model);
        Ok(Self {
            model,
            config,
            optimizer,
            epochs_done: 0,
            loss_curve: Vec::new(),
            checkpoint_dir: None,
        })
    }

    /// Continues from a checkpoint. `epochs` may be raised to train longer;
    /// every other setting comes from the checkpoint.
    pub fn resume(checkpoint: Checkpoint, epochs: Option<usize>) -> Result<Self> {
        let state = checkpoint.train.ok_or_else(|| {
            Error::Config("checkpoint holds a bare model without training state".into())
        })?;
        let mut config = state.config;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        config.validate()?;
        Ok(Self {
            model: checkpoint.model,
            config,
            optimizer: state.optimizer,
            epochs_done: state.epochs_done,
            loss_curve: state.loss_curve,
            checkpoint_dir: None,
        })
    }

    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn model(&self) -> &CaeModel {
        &self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn loss_curve(&self) -> &[f64] {
        &self.loss_curve
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: Some(TrainState {
                config: self.config.clone(),
                epochs_done: self.epochs_done,
                loss_curve: self.loss_curve.clone(),
                optimizer: self.optimizer.clone(),
            }),
        }
    }

    fn check_dataset(&self, images: &[RasterImage]) -> Result<()> {
        if images.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        let s = self.model.config.input_size;
        if self.model.config.input_channels != 1 {
            return Err(Error::Config("raster training needs a single input channel".into()));
        }
        if let Some(img) = images.iter().find(|i| i.size() != s) {
            return Err(Error::Shape(format!(
                "image '{}' is {}px, model expects {s}px",
                img.place_id,
                img.size()
            )));
        }
        Ok(())
    }

    /// Sample order of an epoch, derived from the shuffle seed and the epoch
    /// number alone so a resumed run replays the same order.
    fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.shuffle_seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn run_epoch(&mut self, images: &[RasterImage]) -> Result<f64> {
        self.check_dataset(images)?;
        let epoch = self.epochs_done;
        let order = self.epoch_order(epoch, images.len());
        let mut total = 0.0;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let batch = Tensor::stack(&idx.iter().map(|&i| images[i].to_tensor()).collect::<Vec<_>>())?;
            let (loss, grads) = self.model.loss_and_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b });
            }
            self.optimizer.apply(&mut self.model, &grads, &self.config);
            if !self.model.parameters().iter().all(|p| p.iter().all(|v| v.is_finite())) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            total += loss * idx.len() as f64;
        }
        let mean = total / images.len() as f64;
        self.loss_curve.push(mean);
        self.epochs_done += 1;
        log::info!("epoch {} mean loss {mean:.6}", self.epochs_done);
        if let Some(dir) = &self.checkpoint_dir {
            let every = self.config.checkpoint_every;
            if every > 0 && self.epochs_done % every == 0 {
                self.write_checkpoint(dir)?;
            }
        }
        Ok(mean)
    }

    fn write_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::path_io(dir, e))?;
        let path = dir.join(format!("epoch-{:04}.msck", self.epochs_done));
        crate::artifact::write_atomic(&path, &self.checkpoint().to_bytes()?)
    }

    /// Trains until `epochs` epochs have been completed in total.
    pub fn run(mut self, images: &[RasterImage]) -> Result<TrainOutcome> {
        self.check_dataset(images)?;
        while self.epochs_done < self.config.epochs {
            self.run_epoch(images)?;
        }
        Ok(TrainOutcome {
            model: self.model,
            loss_curve: self.loss_curve,
        })
    }
}

pub fn train(model: CaeModel, images: &[RasterImage], config: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(model, config.clone())?.run(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cae::{build_model, CaeConfig};

    fn tiny() -> CaeModel {
        build_model(
            CaeConfig {
                encoder_channels: vec![4, 3],
                input_size: 16,
                ..CaeConfig::default()
            },
            9,
        )
        .unwrap()
    }

    fn cross(id: &str) -> RasterImage {
        let mut img = RasterImage::blank(id, 16);
        for i in 0..16 {
            img.set(i, 7, true);
            img.set(9, i, true);
        }
        img
    }

    #[test]
    fn memorizes_one_image() {
        let tc = TrainConfig {
            batch_size: 1,
            epochs: 40,
            learning_rate: 5e-3,
            optimizer: OptimizerKind::Adam,
            ..TrainConfig::default()
        };
        let out = train(tiny(), &[cross("a")], &tc).unwrap();
        assert_eq!(out.loss_curve.len(), 40);
        assert!(out.loss_curve.last().unwrap() < out.loss_curve.first().unwrap());
    }

    #[test]
    fn sgd_memorizes_one_image() {
        let tc = TrainConfig {
            batch_size: 1,
            epochs: 30,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let out = train(tiny(), &[cross("a")], &tc).unwrap();
        assert!(out.loss_curve.last().unwrap() < out.loss_curve.first().unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        let tc = TrainConfig::default();
        assert!(train(tiny(), &[], &tc).is_err());
        assert!(train(tiny(), &[RasterImage::blank("x", 8)], &tc).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(tiny(), &[cross("a")], &bad).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut model = tiny();
        model.encoder[0].bias[0] = f32::NAN;
        let tc = TrainConfig {
            batch_size: 1,
            epochs: 2,
            ..TrainConfig::default()
        };
        match train(model, &[cross("a"), cross("b")], &tc) {
            Err(Error::Divergence { epoch: 0, batch: 0 }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let images: Vec<RasterImage> = (0..5).map(|i| cross(&i.to_string())).collect();
        let tc = TrainConfig {
            batch_size: 2,
            epochs: 4,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            shuffle_seed: 77,
            ..TrainConfig::default()
        };
        let full = train(tiny(), &images, &tc).unwrap();

        let mut first = Trainer::new(tiny(), TrainConfig { epochs: 2, ..tc.clone() }).unwrap();
        first.run_epoch(&images).unwrap();
        first.run_epoch(&images).unwrap();
        let bytes = first.checkpoint().to_bytes().unwrap();
        let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
        let resumed = Trainer::resume(ckpt, Some(4)).unwrap().run(&images).unwrap();
        assert_eq!(resumed.loss_curve, full.loss_curve);
        assert_eq!(resumed.model, full.model);
    }
}
