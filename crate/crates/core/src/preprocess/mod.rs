//! Geometry harmonization, intensity normalization, augmentation and patch
//! extraction.

mod augment;
mod intensity;
mod patch;
mod resample;
mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, gaussian_blur, AugmentConfig};
pub use intensity::{fit_intensity_stats, normalize, percentile, IntensityStats};
pub use patch::extract_patch;
pub use resample::{lanczos3, resample_image, resample_labels, resampled_shape};
pub use store::{load_preprocessed, preprocess_case, save_preprocessed, PreprocessedCase};

/// Patch size in voxels, (z, y, x). Each side must survive four 2× poolings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: [usize; 3],
}

impl PatchSpec {
    pub fn new(size: [usize; 3]) -> Result<Self> {
        if size.iter().any(|&s| s == 0 || s % 16 != 0) {
            return Err(Error::invalid(format!("patch size {size:?} must be positive multiples of 16")));
        }
        Ok(PatchSpec { size })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_spec_divisibility() {
        assert!(PatchSpec::new([96, 160, 160]).is_ok());
        assert!(PatchSpec::new([90, 160, 160]).is_err());
        assert!(PatchSpec::new([0, 16, 16]).is_err());
    }
}
