//! SGD with momentum on the linear head, one sample per step.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cam::CamWeights;
use crate::error::{Error, Result};
use crate::loss::{loss_and_grad_with, LossVariant, TagSet, DEFAULT_LSE_R};
use crate::tensor::Grid3;

use super::head::{head_gradient, scene_features, HeadParams, FEATURES};
use super::masks::{MaskBuilder, MaskConfig, MaskInputs};
use super::synth::SynthScene;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Weak,
    FgBg,
    MultiClass,
}

impl VariantKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Self::Weak),
            "fgbg" => Ok(Self::FgBg),
            "multiclass" => Ok(Self::MultiClass),
            other => Err(Error::arg(format!(
                "unknown loss variant {other:?} (expected weak, fgbg or multiclass)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Weak => "weak",
            Self::FgBg => "fgbg",
            Self::MultiClass => "multiclass",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Learning rate is multiplied by this factor after every epoch.
    pub lr_decay: f64,
    /// Log-sum-exp pooling sharpness used by the loss.
    pub lse_r: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            decay: 0.0005,
            epochs: 20,
            seed: 0,
            lr_decay: 1.0,
            lse_r: DEFAULT_LSE_R,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::arg(format!("weight decay must be >= 0, got {}", self.decay)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::arg(format!("lr decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        Ok(())
    }
}

/// One training example with its supervision frozen.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub features: Grid3,
    pub tags: TagSet,
    pub target: LossVariant,
}

/// Runs the mask pipeline once per scene and builds the training set.
pub fn prepare_samples(
    scenes: &[SynthScene],
    cam_weights: &CamWeights,
    kind: VariantKind,
    masks: &MaskConfig,
) -> Result<Vec<TrainSample>> {
    scenes
        .iter()
        .map(|scene| {
            let target = match kind {
                VariantKind::Weak => LossVariant::Weak,
                VariantKind::FgBg => {
                    let b = MaskBuilder::new(MaskInputs::from_scene(scene), *masks)?;
                    LossVariant::FgBg(b.fgbg()?)
                }
                VariantKind::MultiClass => {
                    let b = MaskBuilder::new(MaskInputs::from_scene(scene), *masks)?;
                    LossVariant::MultiClass(b.multiclass(cam_weights)?)
                }
            };
            Ok(TrainSample {
                features: scene_features(scene)?,
                tags: scene.tags.clone(),
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub head: HeadParams,
    /// Mean per-sample loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// `v <- mu v - lr (g + decay w)`, then `w <- w + v`.
pub fn sgd_step(head: &mut HeadParams, velocity: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
    for ((v, w), g) in velocity.iter_mut().zip(head.values_mut()).zip(grad) {
        *v = cfg.momentum * *v - lr * (g + cfg.decay * *w);
        *w += *v;
    }
}

/// Trains from a seeded initialization.
pub fn train_head(samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::arg("training set is empty"))?;
    let labels = first.tags.label_count();
    let head = HeadParams::init(labels, FEATURES, cfg.seed)?;
    train_from(head, samples, cfg)
}

/// Trains starting from `head`. Sample order is reshuffled every epoch from
/// `cfg.seed`.
pub fn train_from(
    mut head: HeadParams,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.tags.label_count() != head.labels() || s.features.channels() != head.features() {
            return Err(Error::dim(format!(
                "sample {i} has {} labels and {} features; head has {} and {}",
                s.tags.label_count(),
                s.features.channels(),
                head.labels(),
                head.features()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = vec![0.0; head.values().len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &samples[i];
            let scores = super::head::predict(&head, &s.features)?;
            let (loss, grad) = loss_and_grad_with(&scores, &s.tags, &s.target, cfg.lse_r)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch}, sample {i} (lr {lr})"
                )));
            }
            total += loss;
            let g = head_gradient(&s.features, &grad);
            sgd_step(&mut head, &mut velocity, &g, lr, cfg);
            if let Some(bad) = head.values().iter().position(|w| !w.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "parameter {bad} diverged at epoch {epoch}, sample {i} (lr {lr})"
                )));
            }
        }
        let mean = total / samples.len() as f64;
        debug!("epoch {epoch}: mean loss {mean:.6}");
        history.push(mean);
        lr *= cfg.lr_decay;
    }
    if let Some(last) = history.last() {
        info!("trained {} epochs, final mean loss {last:.6}", cfg.epochs);
    }
    Ok(TrainReport {
        head,
        loss_history: history,
    })
}
