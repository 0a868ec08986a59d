//! Kidney, tumor and cyst segmentation on contrast-enhanced CT with a
//! baseline 3D U-Net and a clinically cognizant retraining arm.
//!
//! The crate is organised along the experiment's data flow:
//!
//! * [`cohort`]: volumes, label maps, clinical records, NIfTI I/O, splits
//!   and a synthetic phantom cohort for desk-scale runs.
//! * [`preprocess`]: resampling, intensity truncation/standardization,
//!   augmentation and patch extraction.
//! * [`unet3d`]: the encoder/decoder network with hand-written backward
//!   passes, plus checkpoints.
//! * [`train`]: losses, samplers, the plateau schedule and the epoch loop.
//! * [`select`]: design matrix construction, LASSO with cross-validation
//!   and inverse-frequency sampling weights.
//! * [`evalkit`]: sliding-window inference, connected-component
//!   postprocessing and hierarchical Dice / Surface Dice.
//! * [`stats`]: Shapiro-Wilk, paired t, Wilcoxon signed rank and the arm
//!   comparison.

pub mod cohort;
pub mod error;
pub mod evalkit;
pub mod preprocess;
pub mod select;
pub mod stats;
pub mod train;
pub mod unet3d;
pub mod volume;

pub use error::{Error, Result};
pub use volume::Volume;
