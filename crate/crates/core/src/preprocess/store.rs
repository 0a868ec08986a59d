//! On-disk layout of a preprocessed case: `image.f32` and `labels_g<k>.u8`
//! (raw little-endian voxels in (z, y, x) order) plus `sidecar.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize, resample_image, resample_labels, IntensityStats};
use crate::cohort::{Case, CtVolume, LabelMap, Spacing};
use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedCase {
    /// Resampled and standardized.
    pub image: CtVolume,
    /// Resampled with nearest neighbour, one per annotation group.
    pub annotations: Vec<LabelMap>,
    pub original_spacing: Spacing,
    pub original_dims: [usize; 3],
}

impl PreprocessedCase {
    pub fn case_id(&self) -> &str {
        &self.image.case_id
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    case_id: String,
    dims: [usize; 3],
    spacing: Spacing,
    origin: [f64; 3],
    original_spacing: Spacing,
    original_dims: [usize; 3],
    annotation_groups: usize,
    stats: IntensityStats,
}

pub fn preprocess_case(case: &Case, target: Spacing, stats: &IntensityStats) -> Result<PreprocessedCase> {
    let image = normalize(&resample_image(&case.image, target)?, stats)?;
    let annotations = case.annotations.iter().map(|a| resample_labels(a, target)).collect::<Result<Vec<_>>>()?;
    Ok(PreprocessedCase { image, annotations, original_spacing: case.image.spacing, original_dims: case.image.dims() })
}

pub fn save_preprocessed(dir: &Path, case: &PreprocessedCase, stats: &IntensityStats) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes: Vec<u8> = case.image.voxels.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    let p = dir.join("image.f32");
    std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    for (g, a) in case.annotations.iter().enumerate() {
        let p = dir.join(format!("labels_g{g}.u8"));
        std::fs::write(&p, a.voxels.as_slice()).map_err(|e| Error::io(&p, e))?;
    }
    let sidecar = Sidecar {
        case_id: case.case_id().to_string(),
        dims: case.image.dims(),
        spacing: case.image.spacing,
        origin: case.image.origin,
        original_spacing: case.original_spacing,
        original_dims: case.original_dims,
        annotation_groups: case.annotations.len(),
        stats: *stats,
    };
    let p = dir.join("sidecar.json");
    std::fs::write(&p, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&p, e))
}

pub fn load_preprocessed(dir: &Path) -> Result<(PreprocessedCase, IntensityStats)> {
    let p = dir.join("sidecar.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let sc: Sidecar = serde_json::from_str(&text)?;
    let n: usize = sc.dims.iter().product();

    let p = dir.join("image.f32");
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if bytes.len() != 4 * n {
        return Err(Error::Format { path: p, reason: format!("expected {} bytes, got {}", 4 * n, bytes.len()) });
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let mut image = CtVolume::new(sc.case_id.clone(), Volume::new(sc.dims, data)?, sc.spacing)?;
    image.origin = sc.origin;

    let mut annotations = Vec::with_capacity(sc.annotation_groups);
    for g in 0..sc.annotation_groups {
        let p = dir.join(format!("labels_g{g}.u8"));
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let mut lab = LabelMap::new(sc.case_id.clone(), g, Volume::new(sc.dims, bytes)?, sc.spacing)?;
        lab.origin = sc.origin;
        annotations.push(lab);
    }
    let case =
        PreprocessedCase { image, annotations, original_spacing: sc.original_spacing, original_dims: sc.original_dims };
    Ok((case, sc.stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic_cohort, SynthParams};
    use crate::preprocess::fit_intensity_stats;

    #[test]
    fn preprocess_and_reload() {
        let cohort = generate_synthetic_cohort(&SynthParams {
            n_cases: 2,
            volume_shape: [32, 48, 48],
            n_annotation_groups: 2,
            hard_fraction: 0.5,
            seed: 3,
        })
        .unwrap();
        let stats = fit_intensity_stats(&cohort.cases).unwrap();
        let pre = preprocess_case(&cohort.cases[0], [3.0, 1.56, 1.56], &stats).unwrap();
        assert_eq!(pre.annotations.len(), 2);
        assert!(pre.annotations.iter().all(|a| a.aligned_with(&pre.image)));
        let dir = tempfile::tempdir().unwrap();
        save_preprocessed(dir.path(), &pre, &stats).unwrap();
        let (back, s2) = load_preprocessed(dir.path()).unwrap();
        assert_eq!(back, pre);
        assert_eq!(s2, stats);
    }
}
