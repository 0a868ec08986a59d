//! Loss, samplers, learning-rate schedule and the epoch loop.

mod loss;
mod sampler;
mod schedule;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{augment, extract_patch, AugmentConfig, PatchSpec, PreprocessedCase};
use crate::unet3d::{save_checkpoint, AdamSnapshot, Checkpoint, Network, RngState, Tensor};
use crate::volume::Volume;

pub use loss::{
    class_weights_from_counts, combined_loss, combined_loss_grad, soft_dice_loss, weighted_cross_entropy, LossConfig,
    LossParts,
};
pub use sampler::{make_sampler, Sampler, SamplingWeights};
pub use schedule::{plateau_scheduler, Adam, PlateauScheduler, IMPROVEMENT_THRESHOLD};

// rng streams derived from the training seed
const STREAM_PATCHES: u64 = 1;
const STREAM_VALIDATION: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    pub foreground_bias: f64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            samples_per_epoch: 400,
            batch_size: 2,
            lr0: 0.005,
            plateau_factor: 0.3,
            plateau_patience: 10,
            seed: 0,
            foreground_bias: 0.5,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.samples_per_epoch == 0 {
            return Err(Error::invalid("epochs, batch_size and samples_per_epoch must be positive"));
        }
        if self.samples_per_epoch % self.batch_size != 0 {
            return Err(Error::invalid(format!(
                "samples_per_epoch {} not divisible by batch_size {}",
                self.samples_per_epoch, self.batch_size
            )));
        }
        if !(self.lr0 > 0.0) || !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) || self.plateau_patience == 0
        {
            return Err(Error::invalid("need lr0 > 0, plateau_factor in (0,1), plateau_patience > 0"));
        }
        if !(0.0..=1.0).contains(&self.foreground_bias) {
            return Err(Error::invalid("foreground_bias must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples_per_epoch / self.batch_size
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub sampled_case_ids: Vec<String>,
}

pub fn read_train_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log: PathBuf,
}

fn image_tensor(patches: &[Volume<f32>]) -> Result<Tensor<f32>> {
    let d = patches[0].dims();
    let data = patches.iter().flat_map(|p| p.as_slice().iter().copied()).collect();
    Tensor::new([patches.len(), 1, d[0], d[1], d[2]], data)
}

fn training_target(case: &PreprocessedCase) -> Result<&Volume<u8>> {
    case.annotations
        .first()
        .map(|a| &a.voxels)
        .ok_or_else(|| Error::invalid(format!("case {} has no annotations", case.case_id())))
}

/// One foreground-centred patch per validation case, drawn once from a
/// fixed stream so the validation loss is comparable across epochs.
pub fn validation_patches(
    cases: &[PreprocessedCase],
    patch: &PatchSpec,
    seed: u64,
) -> Result<Vec<(Volume<f32>, Volume<u8>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_VALIDATION);
    cases.iter().map(|c| Ok(extract_patch(&c.image.voxels, training_target(c)?, patch, &mut rng, 1.0))).collect()
}

pub fn validation_loss(net: &Network<f32>, patches: &[(Volume<f32>, Volume<u8>)], loss: &LossConfig) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::invalid("no validation cases"));
    }
    let mut total = 0.0;
    for (img, lab) in patches {
        let out = net.forward(&image_tensor(std::slice::from_ref(img))?)?;
        total += combined_loss(&out.scores, &out.probs, lab.as_slice(), loss)?.total;
    }
    Ok(total / patches.len() as f64)
}

fn checkpoint(
    net: &Network<f32>,
    epoch: usize,
    adam: &Adam,
    sampler: &Sampler,
    patch_rng: &ChaCha8Rng,
    sched: &PlateauScheduler,
) -> Result<Checkpoint> {
    Ok(Checkpoint {
        config: net.config.clone(),
        epoch,
        params: net.params.clone(),
        adam: Some(AdamSnapshot { step: adam.step, m: adam.m.clone(), v: adam.v.clone() }),
        rng: vec![
            ("sampler".into(), RngState::capture(sampler.rng())),
            ("patches".into(), RngState::capture(patch_rng)),
        ],
        extra: serde_json::json!({ "scheduler": serde_json::to_value(sched)? }),
    })
}

/// Runs `epochs × steps_per_epoch` Adam steps, evaluates the validation
/// loss after every epoch and writes `train_log.jsonl`, `best.ckpt` and
/// `last.ckpt` into `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    net: &mut Network<f32>,
    train_cases: &[PreprocessedCase],
    val_cases: &[PreprocessedCase],
    sampler: &mut Sampler,
    patch: &PatchSpec,
    config: &TrainConfig,
    loss: &LossConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    loss.validate()?;
    net.check_input(patch.size, 1)?;
    let by_id: BTreeMap<&str, &PreprocessedCase> = train_cases.iter().map(|c| (c.case_id(), c)).collect();
    if let Some(id) = sampler.ids().iter().find(|id| !by_id.contains_key(id.as_str())) {
        return Err(Error::invalid(format!("sampler case {id} is not among the training cases")));
    }
    let val = validation_patches(val_cases, patch, config.seed)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_PATCHES);
    let mut adam = Adam::new(&net.params);
    let mut sched = PlateauScheduler::new(config.lr0, config.plateau_factor, config.plateau_patience);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (0, f64::INFINITY);

    for epoch in 1..=config.epochs {
        let lr = sched.lr;
        let mut sampled = Vec::with_capacity(config.samples_per_epoch);
        let mut epoch_loss = 0.0;
        for step in 0..config.steps_per_epoch() {
            let ids: Vec<String> = (0..config.batch_size).map(|_| sampler.draw().to_string()).collect();
            let mut images = Vec::with_capacity(ids.len());
            let mut target = Vec::new();
            for id in &ids {
                let case = by_id[id.as_str()];
                let (img, lab) =
                    extract_patch(&case.image.voxels, training_target(case)?, patch, &mut rng, config.foreground_bias);
                let (img, lab) = augment(&img, &lab, &config.augment, &mut rng);
                images.push(img);
                target.extend_from_slice(lab.as_slice());
            }
            let batch = image_tensor(&images)?;
            let (out, caches) = net.forward_train(&batch)?;
            let (parts, grad) = combined_loss_grad(&out.scores, &out.probs, &target, loss)?;
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {} at epoch {epoch} step {step} (cases {ids:?}, dice {}, ce {})",
                    parts.total, parts.dice, parts.ce
                )));
            }
            let mut grads = net.zero_grads();
            for (b, cache) in caches.iter().enumerate() {
                net.backward(cache, grad.sample(b), &mut grads);
            }
            adam.update(&mut net.params, &grads, lr);
            epoch_loss += parts.total;
            sampled.extend(ids);
        }
        let train_loss = epoch_loss / config.steps_per_epoch() as f64;
        let val_loss = validation_loss(net, &val, loss)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        sched.step(val_loss);

        let entry = EpochLog { epoch, train_loss, val_loss, lr, sampled_case_ids: sampled };
        serde_json::to_writer(&mut log, &entry)?;
        writeln!(log).map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        history.push(entry);

        let ckpt = checkpoint(net, epoch, &adam, sampler, &rng, &sched)?;
        if val_loss < best.1 {
            best = (epoch, val_loss);
            save_checkpoint(&best_path, &ckpt)?;
        }
        save_checkpoint(&last_path, &ckpt)?;
    }
    Ok(TrainOutcome {
        history,
        best_epoch: best.0,
        best_val_loss: best.1,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log: log_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_steps() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.steps_per_epoch(), 200);
        assert!(TrainConfig { samples_per_epoch: 401, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { foreground_bias: 1.5, ..Default::default() }.validate().is_err());
    }
}
