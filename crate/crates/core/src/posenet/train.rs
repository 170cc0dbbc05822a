use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::infer::infer_batch;
use super::loss::{batch, total_loss};
use super::network::PoseNet;
use crate::eval::{pck, EvalConfig, EvalReport};
use crate::geometry::{jitter_roi, pose_from_crop, pose_to_roi, DEFAULT_PADDING};
use crate::synthdata::{crop_image, crop_sample, crop_sample_occluded, Image, OcclusionConfig, TrainingSample};
use crate::tensor::{Adam, AdamConfig, Graph};
use crate::{Error, Pose, Result, Roi};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Learning rate at the end of the cosine schedule, relative to the start.
    pub final_lr_fraction: f64,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub padding: f64,
    /// Relative scale and shift perturbation of the crop region.
    pub jitter_scale: f64,
    pub jitter_shift: f64,
    /// Uniform perturbation of the crop rotation, radians.
    pub jitter_rotation: f64,
    /// Chance that a crop receives random occluders.
    pub occlusion_probability: f64,
    pub occlusion: OcclusionConfig,
    /// Evaluate held-out PCK every this many epochs (and after the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            final_lr_fraction: 0.02,
            max_steps: None,
            padding: DEFAULT_PADDING,
            jitter_scale: 0.1,
            jitter_shift: 0.1,
            jitter_rotation: 0.1,
            occlusion_probability: 0.5,
            occlusion: OcclusionConfig {
                max_rects: 2,
                ..OcclusionConfig::default()
            },
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    /// No augmentation: every epoch sees identical crops.
    pub fn without_augmentation(self) -> Self {
        Self {
            jitter_scale: 0.0,
            jitter_shift: 0.0,
            jitter_rotation: 0.0,
            occlusion_probability: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and eval_every must be positive".into(),
            ));
        }
        if !(self.adam.lr >= 0.0) || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::InvalidConfig("learning rate settings out of range".into()));
        }
        if !(self.padding >= 1.0) || !(0.0..=1.0).contains(&self.occlusion_probability) {
            return Err(Error::InvalidConfig(
                "padding or occlusion probability out of range".into(),
            ));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        let t = if total > 1 {
            step as f64 / (total - 1) as f64
        } else {
            0.0
        };
        let f = self.final_lr_fraction;
        self.adam.lr * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    /// Mean total loss over the epoch's batches.
    pub loss: f64,
    pub regression_loss: f64,
    /// Held-out aggregate PCK, when evaluated.
    pub pck: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    /// `epoch,loss,pck`; the PCK cell is empty when it was not evaluated.
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss,pck\n");
        for e in &self.epochs {
            let pck = e.pck.map(|p| format!("{p:.3}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.6},{}", e.epoch, e.loss, pck);
        }
        out
    }

    pub fn final_pck(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.pck)
    }
}

/// Region a training or evaluation crop is taken from: the ground-truth pose
/// box, optionally perturbed.
pub fn training_roi<R: Rng + ?Sized>(pose: &Pose, config: &TrainConfig, rng: Option<&mut R>) -> Result<Roi> {
    let roi = pose_to_roi(pose, config.padding)?;
    Ok(match rng {
        Some(rng) => {
            let mut r = jitter_roi(&roi, rng, config.jitter_scale, config.jitter_shift);
            if config.jitter_rotation > 0.0 {
                r.rotation += rng.random_range(-config.jitter_rotation..=config.jitter_rotation);
            }
            Roi::new(r.center, r.side, r.rotation)?
        }
        None => roi,
    })
}

/// Augmented sample for one training step.
pub fn augmented_sample<R: Rng + ?Sized>(
    image: &Image,
    pose: &Pose,
    crop_size: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainingSample> {
    let roi = training_roi(pose, config, Some(&mut *rng))?;
    if config.occlusion_probability > 0.0 && rng.random_bool(config.occlusion_probability) {
        crop_sample_occluded(image, pose, &roi, crop_size, rng, &config.occlusion)
    } else {
        crop_sample(image, pose, &roi, crop_size)
    }
}

/// Predictions on ground-truth-aligned crops, mapped back to image coordinates.
pub fn predict_aligned(model: &PoseNet<f32>, data: &[(Image, Pose)], padding: f64) -> Result<Vec<Pose>> {
    const CHUNK: usize = 32;
    let s = model.config().input_size;
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(CHUNK) {
        let rois = chunk
            .iter()
            .map(|(_, pose)| pose_to_roi(pose, padding))
            .collect::<Result<Vec<_>>>()?;
        let crops = chunk
            .iter()
            .zip(&rois)
            .map(|((img, _), roi)| Ok(crop_image(img, roi, s)?.to_chw()))
            .collect::<Result<Vec<_>>>()?;
        for (pred, roi) in infer_batch(model, &crops)?.iter().zip(&rois) {
            out.push(pose_from_crop(&pred.crop_pose()?, roi));
        }
    }
    Ok(out)
}

/// PCK of the model on ground-truth-aligned crops.
pub fn evaluate_aligned(
    model: &PoseNet<f32>,
    data: &[(Image, Pose)],
    padding: f64,
    config: &EvalConfig,
    label: &str,
    dataset: &str,
) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let preds = predict_aligned(model, data, padding)?;
    let seconds = start.elapsed().as_secs_f64();
    let mut report = EvalReport::new(label, dataset, config);
    for (p, (_, gt)) in preds.iter().zip(data) {
        report.add(&pck(p, gt, config)?);
    }
    report.predictor_seconds = seconds;
    Ok(report)
}

/// Adam training with a cosine learning-rate schedule. Every crop is
/// re-augmented each epoch. Deterministic for a fixed seed.
pub fn train(
    model: &mut PoseNet<f32>,
    train_set: &[(Image, Pose)],
    heldout: &[(Image, Pose)],
    config: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let net = *model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(config.adam, model.params());
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = config
        .max_steps
        .unwrap_or(usize::MAX)
        .min(steps_per_epoch * config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        if step >= total_steps {
            break;
        }
        let start = std::time::Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut reg_sum, mut batches) = (0.0, 0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            if step >= total_steps {
                break;
            }
            let samples = idx
                .iter()
                .map(|i| {
                    let (img, pose) = &train_set[*i];
                    augmented_sample(img, pose, net.input_size, config, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&TrainingSample> = samples.iter().collect();
            let (input, targets) = batch::<f32>(&refs, &net)?;
            let mut g = Graph::new();
            let x = g.input(input);
            let out = model.forward(&mut g, x, true)?;
            let terms = total_loss(&mut g, &out, &targets, &net.loss_weights)?;
            let loss = g.value(terms.total).item() as f64;
            if !loss.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "training diverged at step {step} (loss {loss})"
                )));
            }
            loss_sum += loss;
            reg_sum += g.value(terms.regression).item() as f64;
            batches += 1;
            let grads = g.backward(terms.total)?.dense(model.params());
            drop(g);
            adam.config.lr = config.lr_at(step, total_steps);
            adam.step(model.params_mut(), &grads)?;
            step += 1;
        }
        let last = epoch == config.epochs || step >= total_steps;
        let pck = if !heldout.is_empty() && (epoch % config.eval_every == 0 || last) {
            let r = evaluate_aligned(model, heldout, config.padding, &EvalConfig::default(), "", "")?;
            Some(r.aggregate())
        } else {
            None
        };
        let stats = EpochStats {
            epoch,
            steps: step,
            loss: loss_sum / batches.max(1) as f64,
            regression_loss: reg_sum / batches.max(1) as f64,
            pck,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig::default();
        assert!((c.lr_at(0, 100) - c.adam.lr).abs() < 1e-15);
        assert!((c.lr_at(99, 100) - c.adam.lr * c.final_lr_fraction).abs() < 1e-15);
        assert!(c.lr_at(50, 100) < c.adam.lr);
    }

    #[test]
    fn csv_layout() {
        let report = TrainReport {
            epochs: vec![EpochStats {
                epoch: 1,
                steps: 3,
                loss: 0.5,
                regression_loss: 0.1,
                pck: Some(50.0),
                seconds: 1.0,
            }],
        };
        assert_eq!(report.loss_curve_csv(), "epoch,loss,pck\n1,0.500000,50.000\n");
    }
}
