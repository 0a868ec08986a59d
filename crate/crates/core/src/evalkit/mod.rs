//! Inference, postprocessing and hierarchical evaluation.

mod inference;
mod metrics;
mod report;

use serde::{Deserialize, Serialize};

use crate::cohort::{same_spacing, LabelMap, Spacing, CYST, KIDNEY, TUMOR};
use crate::error::{Error, Result};
use crate::volume::Volume;

pub use inference::{
    argmax_labels, connected_components, gaussian_importance, postprocess, sliding_window_predict,
    sliding_window_probs, window_starts,
};
pub use metrics::{dice, squared_distance_transform, surface_dice, surface_elements, Surface};
pub use report::{CaseEval, EvalReport, MetricKind, MetricSummary, ReportSummary};

/// Nested evaluation classes: tumor ⊂ masses ⊂ kidney and masses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchicalClass {
    KidneyAndMasses,
    Masses,
    Tumor,
}

impl HierarchicalClass {
    pub const ALL: [HierarchicalClass; 3] =
        [HierarchicalClass::KidneyAndMasses, HierarchicalClass::Masses, HierarchicalClass::Tumor];

    pub fn name(self) -> &'static str {
        match self {
            HierarchicalClass::KidneyAndMasses => "kidney_and_masses",
            HierarchicalClass::Masses => "masses",
            HierarchicalClass::Tumor => "tumor",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn label_set(self) -> &'static [u8] {
        match self {
            HierarchicalClass::KidneyAndMasses => &[KIDNEY, TUMOR, CYST],
            HierarchicalClass::Masses => &[TUMOR, CYST],
            HierarchicalClass::Tumor => &[TUMOR],
        }
    }

    pub fn contains(self, label: u8) -> bool {
        self.label_set().contains(&label)
    }

    pub fn binarize(self, labels: &Volume<u8>) -> Volume<bool> {
        labels.map(|l| self.contains(l))
    }
}

/// Surface Dice tolerance per hierarchical class, in mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub tolerances_mm: [f64; 3],
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { tolerances_mm: [1.0; 3] }
    }
}

/// Both metrics for every hierarchical class, averaged over the annotation
/// groups.
pub fn evaluate_case(
    prediction: &LabelMap,
    annotations: &[LabelMap],
    spacing: Spacing,
    config: &EvalConfig,
) -> Result<CaseEval> {
    if annotations.is_empty() {
        return Err(Error::invalid(format!("no annotations for case {}", prediction.case_id)));
    }
    for a in annotations {
        if a.dims() != prediction.dims() || !same_spacing(a.spacing, spacing) {
            return Err(Error::Shape(format!(
                "annotation group {} of {} does not match the prediction geometry",
                a.annotation_group, prediction.case_id
            )));
        }
    }
    let mut dice_v = [0.0; 3];
    let mut sd_v = [0.0; 3];
    let groups = annotations.len() as f64;
    for (k, class) in HierarchicalClass::ALL.into_iter().enumerate() {
        let pred = class.binarize(&prediction.voxels);
        for a in annotations {
            let gt = class.binarize(&a.voxels);
            dice_v[k] += dice(&pred, &gt)? / groups;
            sd_v[k] += surface_dice(&pred, &gt, spacing, config.tolerances_mm[k])? / groups;
        }
    }
    Ok(CaseEval { case_id: prediction.case_id.clone(), dice: dice_v, surface_dice: sd_v })
}
