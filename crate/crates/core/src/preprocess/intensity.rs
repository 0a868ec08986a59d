use serde::{Deserialize, Serialize};

use crate::cohort::{Case, CtVolume};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityStats {
    pub p_low: f64,
    pub p_high: f64,
    pub mean: f64,
    pub std: f64,
}

impl IntensityStats {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.p_low, self.p_high, self.mean, self.std].iter().all(|v| v.is_finite());
        if !finite || self.p_low > self.p_high || self.std <= 0.0 {
            return Err(Error::invalid(format!("invalid intensity stats {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v.clamp(self.p_low, self.p_high) - self.mean) / self.std
    }
}

/// Percentile of sorted data with linear interpolation between order
/// statistics (`q` in percent).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Stats over a pool of intensities: 0.5/99.5 percentiles, then mean and
/// standard deviation of the truncated pool.
pub fn stats_from_pool(mut pool: Vec<f64>) -> Result<IntensityStats> {
    if pool.len() < 2 {
        return Err(Error::Degenerate(format!("{} annotated voxels, need at least 2", pool.len())));
    }
    pool.sort_by(f64::total_cmp);
    let p_low = percentile(&pool, 0.5);
    let p_high = percentile(&pool, 99.5);
    let n = pool.len() as f64;
    let mean = pool.iter().map(|v| v.clamp(p_low, p_high)).sum::<f64>() / n;
    let var = pool.iter().map(|v| (v.clamp(p_low, p_high) - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::Degenerate("annotated intensities have zero variance after truncation".into()));
    }
    Ok(IntensityStats { p_low, p_high, mean, std })
}

/// Fits truncation and standardization over every voxel labelled
/// foreground in at least one annotation group of the training cases.
pub fn fit_intensity_stats(training_cases: &[Case]) -> Result<IntensityStats> {
    if training_cases.is_empty() {
        return Err(Error::invalid("no training cases"));
    }
    let mut pool = Vec::new();
    for case in training_cases {
        let img = case.image.voxels.as_slice();
        for (i, &v) in img.iter().enumerate() {
            if case.annotations.iter().any(|a| a.voxels.as_slice()[i] > 0) {
                pool.push(v as f64);
            }
        }
    }
    stats_from_pool(pool)
}

pub fn normalize(volume: &CtVolume, stats: &IntensityStats) -> Result<CtVolume> {
    stats.validate()?;
    let mut out = volume.clone();
    for v in out.voxels.as_mut_slice() {
        *v = stats.apply(*v as f64) as f32;
    }
    Ok(out)
}
