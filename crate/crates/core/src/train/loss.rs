//! Soft Dice plus class-weighted cross-entropy, with the gradient with
//! respect to the pre-softmax scores.

use serde::{Deserialize, Serialize};

use crate::cohort::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::unet3d::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub ce_weight: f64,
    pub ce_class_weights: [f64; NUM_CLASSES],
    pub smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { dice_weight: 1.0, ce_weight: 1.0, ce_class_weights: [1.0; NUM_CLASSES], smooth: 1e-5 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ce_class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid(format!("class weights must be positive: {:?}", self.ce_class_weights)));
        }
        if !(self.smooth > 0.0) || self.dice_weight < 0.0 || self.ce_weight < 0.0 {
            return Err(Error::invalid("loss weights must be >= 0 and smooth > 0"));
        }
        Ok(())
    }
}

/// CE class weights ∝ 1/√(voxel frequency), normalized to mean 1. A class
/// that never occurs gets the largest weight among the present ones.
pub fn class_weights_from_counts(counts: [u64; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Degenerate("no voxels to derive class weights from".into()));
    }
    let raw: Vec<Option<f64>> =
        counts.iter().map(|&c| (c > 0).then(|| 1.0 / (c as f64 / total as f64).sqrt())).collect();
    let top = raw.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let filled: Vec<f64> = raw.iter().map(|r| r.unwrap_or(top)).collect();
    let mean = filled.iter().sum::<f64>() / NUM_CLASSES as f64;
    Ok(std::array::from_fn(|k| filled[k] / mean))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub dice: f64,
    pub ce: f64,
    pub total: f64,
}

fn check(t: &[usize; 5], target: &[u8]) -> Result<usize> {
    if t[1] != NUM_CLASSES {
        return Err(Error::Shape(format!("expected {NUM_CLASSES} channels, got {}", t[1])));
    }
    let vox = t[2] * t[3] * t[4];
    if target.len() != t[0] * vox {
        return Err(Error::Shape(format!("target has {} voxels, tensor {:?}", target.len(), t)));
    }
    if let Some(&bad) = target.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::LabelDomain { value: bad as i64, context: "loss target".into() });
    }
    Ok(vox)
}

/// Per foreground class c: (Σp·t, Σp, Σt) over batch and voxels.
fn dice_sums<T: Real>(probs: &Tensor<T>, target: &[u8], vox: usize) -> [[f64; 3]; NUM_CLASSES] {
    let mut s = [[0.0; 3]; NUM_CLASSES];
    for b in 0..probs.shape[0] {
        for c in 1..NUM_CLASSES {
            let p = &probs.data[(b * NUM_CLASSES + c) * vox..(b * NUM_CLASSES + c + 1) * vox];
            let t = &target[b * vox..(b + 1) * vox];
            for (pv, &tv) in p.iter().zip(t) {
                let pv = pv.to_f64();
                s[c][1] += pv;
                if tv as usize == c {
                    s[c][0] += pv;
                    s[c][2] += 1.0;
                }
            }
        }
    }
    s
}

/// 1 − mean over the foreground classes of (2Σp·t + ε)/(Σp + Σt + ε).
pub fn soft_dice_loss<T: Real>(probs: &Tensor<T>, target: &[u8], smooth: f64) -> Result<f64> {
    let vox = check(&probs.shape, target)?;
    let s = dice_sums(probs, target, vox);
    let mean = (1..NUM_CLASSES).map(|c| (2.0 * s[c][0] + smooth) / (s[c][1] + s[c][2] + smooth)).sum::<f64>()
        / (NUM_CLASSES - 1) as f64;
    Ok(1.0 - mean)
}

/// Mean over voxels of w[t]·(−log p[t]), computed from the scores.
pub fn weighted_cross_entropy<T: Real>(
    scores: &Tensor<T>,
    target: &[u8],
    class_weights: &[f64; NUM_CLASSES],
) -> Result<f64> {
    let vox = check(&scores.shape, target)?;
    if class_weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("class weights must be positive"));
    }
    let mut total = 0.0;
    for b in 0..scores.shape[0] {
        for v in 0..vox {
            let t = target[b * vox + v] as usize;
            total += class_weights[t] * -log_softmax_at(scores, b, v, vox, t);
        }
    }
    Ok(total / (scores.shape[0] * vox) as f64)
}

fn log_softmax_at<T: Real>(scores: &Tensor<T>, b: usize, v: usize, vox: usize, k: usize) -> f64 {
    let s = |c: usize| scores.data[(b * NUM_CLASSES + c) * vox + v].to_f64();
    let m = (0..NUM_CLASSES).map(s).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + (0..NUM_CLASSES).map(|c| (s(c) - m).exp()).sum::<f64>().ln();
    s(k) - lse
}

pub fn combined_loss<T: Real>(
    scores: &Tensor<T>,
    probs: &Tensor<T>,
    target: &[u8],
    config: &LossConfig,
) -> Result<LossParts> {
    if scores.shape != probs.shape {
        return Err(Error::Shape("scores and probabilities differ in shape".into()));
    }
    let dice = soft_dice_loss(probs, target, config.smooth)?;
    let ce = weighted_cross_entropy(scores, target, &config.ce_class_weights)?;
    Ok(LossParts { dice, ce, total: config.dice_weight * dice + config.ce_weight * ce })
}

/// [`combined_loss`] and its gradient with respect to `scores`.
pub fn combined_loss_grad<T: Real>(
    scores: &Tensor<T>,
    probs: &Tensor<T>,
    target: &[u8],
    config: &LossConfig,
) -> Result<(LossParts, Tensor<T>)> {
    let parts = combined_loss(scores, probs, target, config)?;
    let vox = probs.shape[2] * probs.shape[3] * probs.shape[4];
    let nb = probs.shape[0];
    let s = dice_sums(probs, target, vox);
    let k = config.dice_weight / (NUM_CLASSES - 1) as f64;
    let ce_scale = config.ce_weight / (nb * vox) as f64;
    let mut grad = Tensor::zeros(probs.shape);
    let mut gp = [0.0f64; NUM_CLASSES];
    for b in 0..nb {
        for v in 0..vox {
            let t = target[b * vox + v] as usize;
            let p = |c: usize| probs.data[(b * NUM_CLASSES + c) * vox + v].to_f64();
            // dL_dice/dp_c
            gp[0] = 0.0;
            for c in 1..NUM_CLASSES {
                let denom = s[c][1] + s[c][2] + config.smooth;
                let num = 2.0 * s[c][0] + config.smooth;
                let tc = (t == c) as u8 as f64;
                gp[c] = -k * (2.0 * tc * denom - num) / (denom * denom);
            }
            let dot: f64 = (0..NUM_CLASSES).map(|c| p(c) * gp[c]).sum();
            let w = config.ce_class_weights[t];
            for c in 0..NUM_CLASSES {
                let pc = p(c);
                let dice_part = pc * (gp[c] - dot);
                let ce_part = ce_scale * w * (pc - (c == t) as u8 as f64);
                grad.data[(b * NUM_CLASSES + c) * vox + v] = T::from_f64(dice_part + ce_part);
            }
        }
    }
    Ok((parts, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet3d::layers::softmax;

    fn probs_of(scores: &Tensor<f64>) -> Tensor<f64> {
        let samples = (0..scores.batch()).map(|b| softmax(&scores.sample(b))).collect();
        Tensor::from_samples(samples).unwrap()
    }

    #[test]
    fn one_hot_prediction_has_near_zero_dice_loss() {
        let target = vec![0u8, 1, 2, 3, 1, 2, 0, 3];
        let mut p = Tensor::<f64>::zeros([1, 4, 2, 2, 2]);
        for (v, &t) in target.iter().enumerate() {
            p.data[t as usize * 8 + v] = 1.0;
        }
        assert!(soft_dice_loss(&p, &target, 1e-5).unwrap().abs() < 1e-12);
    }

    #[test]
    fn uniform_probabilities_on_background_target() {
        let p = Tensor::new([1, 4, 2, 2, 2], vec![0.25f64; 32]).unwrap();
        let target = vec![0u8; 8];
        let eps = 1e-5;
        // each foreground class: (0 + ε)/(2 + 0 + ε)
        let want = 1.0 - eps / (2.0 + eps);
        assert!((soft_dice_loss(&p, &target, eps).unwrap() - want).abs() < 1e-15);
        assert!(soft_dice_loss(&p, &target, 1e-12).unwrap() > 1.0 - 1e-11);
    }

    #[test]
    fn cross_entropy_examples() {
        let scores = Tensor::new([1, 4, 1, 1, 2], vec![0.0f64; 8]).unwrap();
        let target = vec![2u8, 0];
        let ce = weighted_cross_entropy(&scores, &target, &[1.0; 4]).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        let ce2 = weighted_cross_entropy(&scores, &target, &[1.0, 1.0, 2.0, 1.0]).unwrap();
        assert!((ce2 - 1.5 * 4f64.ln()).abs() < 1e-12);
        let mut confident = vec![-50.0f64; 8];
        confident[2 * 2] = 50.0;
        confident[1] = 50.0;
        let s = Tensor::new([1, 4, 1, 1, 2], confident).unwrap();
        assert!(weighted_cross_entropy(&s, &target, &[1.0; 4]).unwrap() < 1e-12);
        assert!(weighted_cross_entropy(&scores, &target, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(weighted_cross_entropy(&scores, &[0u8], &[1.0; 4]).is_err());
    }

    #[test]
    fn combined_is_sum_of_parts() {
        let scores = Tensor::new([1, 4, 1, 1, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let probs = probs_of(&scores);
        let target = vec![1u8, 3, 0];
        let cfg = LossConfig { ce_class_weights: [0.5, 1.0, 2.0, 1.5], ..Default::default() };
        let parts = combined_loss(&scores, &probs, &target, &cfg).unwrap();
        let d = soft_dice_loss(&probs, &target, cfg.smooth).unwrap();
        let c = weighted_cross_entropy(&scores, &target, &cfg.ce_class_weights).unwrap();
        assert!((parts.total - (d + c)).abs() < 1e-15);
        let dice_only = LossConfig { ce_weight: 0.0, ..cfg };
        assert_eq!(combined_loss(&scores, &probs, &target, &dice_only).unwrap().total, d);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let vals: Vec<f64> = (0..2 * 4 * 4).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let scores = Tensor::new([2, 4, 1, 2, 2], vals).unwrap();
        let target = vec![0u8, 2, 1, 3, 2, 2, 0, 1];
        let cfg = LossConfig { ce_class_weights: [0.7, 1.1, 1.3, 0.9], ..Default::default() };
        let (_, g) = combined_loss_grad(&scores, &probs_of(&scores), &target, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..scores.data.len() {
            let mut up = scores.clone();
            up.data[i] += h;
            let mut dn = scores.clone();
            dn.data[i] -= h;
            let fu = combined_loss(&up, &probs_of(&up), &target, &cfg).unwrap().total;
            let fd = combined_loss(&dn, &probs_of(&dn), &target, &cfg).unwrap().total;
            let num = (fu - fd) / (2.0 * h);
            let rel = (num - g.data[i]).abs() / num.abs().max(g.data[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "index {i}: numeric {num} analytic {}", g.data[i]);
        }
    }

    #[test]
    fn class_weights() {
        let w = class_weights_from_counts([900, 81, 9, 0]).unwrap();
        let mean = w.iter().sum::<f64>() / 4.0;
        assert!((mean - 1.0).abs() < 1e-12);
        // 1/sqrt(0.9), 1/sqrt(0.081), 1/sqrt(0.009) are in ratio 1 : 3.33 : 10
        assert!((w[2] / w[0] - 10.0).abs() < 1e-9);
        assert_eq!(w[3], w[2]);
        assert!(class_weights_from_counts([0; 4]).is_err());
    }
}
