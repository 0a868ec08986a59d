//! Cases, volumes, clinical records, on-disk ingestion and dataset splits.

mod clinical;
pub mod nifti;
mod split;
mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub use clinical::{load_clinical, save_clinical, ClinicalRecord, ClinicalValue};
pub use split::{split_dataset, DatasetSplit};
pub use synth::{generate_synthetic_cohort, PhantomTruth, SynthParams, SyntheticCohort};

/// Voxel spacing in millimetres, (z, y, x).
pub type Spacing = [f64; 3];

pub const BACKGROUND: u8 = 0;
pub const KIDNEY: u8 = 1;
pub const TUMOR: u8 = 2;
pub const CYST: u8 = 3;
pub const NUM_CLASSES: usize = 4;

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")))
    }
}

pub(crate) fn same_spacing(a: Spacing, b: Spacing) -> bool {
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtVolume {
    pub case_id: String,
    pub spacing: Spacing,
    pub origin: [f64; 3],
    pub voxels: Volume<f32>,
}

impl CtVolume {
    pub fn new(case_id: impl Into<String>, voxels: Volume<f32>, spacing: Spacing) -> Result<Self> {
        check_spacing(spacing)?;
        Ok(CtVolume { case_id: case_id.into(), spacing, origin: [0.0; 3], voxels })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.voxels.dims()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub case_id: String,
    pub spacing: Spacing,
    pub origin: [f64; 3],
    pub annotation_group: usize,
    pub voxels: Volume<u8>,
}

impl LabelMap {
    pub fn new(
        case_id: impl Into<String>,
        annotation_group: usize,
        voxels: Volume<u8>,
        spacing: Spacing,
    ) -> Result<Self> {
        check_spacing(spacing)?;
        let case_id = case_id.into();
        if let Some(&bad) = voxels.as_slice().iter().find(|&&v| v as usize >= NUM_CLASSES) {
            return Err(Error::LabelDomain { value: bad as i64, context: case_id });
        }
        Ok(LabelMap { case_id, spacing, origin: [0.0; 3], annotation_group, voxels })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.voxels.dims()
    }

    /// Same geometry as `image` (shape and spacing).
    pub fn aligned_with(&self, image: &CtVolume) -> bool {
        self.dims() == image.dims() && same_spacing(self.spacing, image.spacing)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub image: CtVolume,
    pub annotations: Vec<LabelMap>,
    pub clinical: ClinicalRecord,
}

impl Case {
    pub fn new(image: CtVolume, annotations: Vec<LabelMap>, clinical: ClinicalRecord) -> Result<Self> {
        if annotations.is_empty() {
            return Err(Error::invalid(format!("case {} has no annotation groups", image.case_id)));
        }
        for ann in &annotations {
            if ann.dims() != image.dims() {
                return Err(Error::Shape(format!(
                    "case {}: annotation group {} has shape {:?}, image has {:?}",
                    image.case_id,
                    ann.annotation_group,
                    ann.dims(),
                    image.dims()
                )));
            }
            if !same_spacing(ann.spacing, image.spacing) {
                return Err(Error::Shape(format!(
                    "case {}: annotation group {} spacing {:?} differs from image {:?}",
                    image.case_id, ann.annotation_group, ann.spacing, image.spacing
                )));
            }
        }
        Ok(Case { image, annotations, clinical })
    }

    pub fn case_id(&self) -> &str {
        &self.image.case_id
    }
}

/// Reads one case from NIfTI files. Annotation groups are numbered in the
/// order the paths are given.
pub fn load_case(image_path: &Path, annotation_paths: &[impl AsRef<Path>], clinical: ClinicalRecord) -> Result<Case> {
    let case_id = clinical.case_id.clone();
    let image = nifti::read_image(image_path, &case_id)?;
    let annotations = annotation_paths
        .iter()
        .enumerate()
        .map(|(g, p)| nifti::read_labels(p.as_ref(), &case_id, g))
        .collect::<Result<Vec<_>>>()?;
    Case::new(image, annotations, clinical)
}
