//! Experiment configuration and dotted-path overrides.

use std::path::{Path, PathBuf};

use renalseg::cohort::{Spacing, SynthParams};
use renalseg::evalkit::EvalConfig;
use renalseg::preprocess::PatchSpec;
use renalseg::select::SelectionConfig;
use renalseg::train::TrainConfig;
use renalseg::unet3d::NetworkConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub cohort: PathBuf,
    pub workdir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_spacing: Spacing,
    pub patch_size: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub network: NetworkConfig,
    pub init_seed: u64,
}

/// `ce_class_weights: None` derives the weights from the training voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub dice_weight: f64,
    pub ce_weight: f64,
    pub ce_class_weights: Option<[f64; 4]>,
    pub smooth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub synth: SynthParams,
    pub split: SplitConfig,
    pub preprocess: PreprocessConfig,
    pub network: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossSettings,
    pub selection: SelectionConfig,
    pub evaluation: EvalConfig,
    pub stats: StatsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            paths: Paths { cohort: "cohort".into(), workdir: "work".into() },
            synth: SynthParams {
                n_cases: 300,
                volume_shape: [96, 160, 160],
                n_annotation_groups: 3,
                hard_fraction: 0.3,
                seed: 0,
            },
            split: SplitConfig { fractions: [0.7, 0.2, 0.1], seed: 0 },
            preprocess: PreprocessConfig { target_spacing: [3.0, 1.56, 1.56], patch_size: [96, 160, 160] },
            network: ModelConfig { network: NetworkConfig::default(), init_seed: 0 },
            train: TrainConfig::default(),
            loss: LossSettings { dice_weight: 1.0, ce_weight: 1.0, ce_class_weights: None, smooth: 1e-5 },
            selection: SelectionConfig::default(),
            evaluation: EvalConfig::default(),
            stats: StatsConfig { alpha: 0.05 },
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale experiment: 46 phantoms split 30/10/6, the tiny network
    /// on 32×64×64 patches and 5 epochs per arm.
    pub fn smoke() -> Self {
        let mut c = ExperimentConfig::default();
        c.synth = SynthParams {
            n_cases: 46,
            volume_shape: [40, 72, 72],
            n_annotation_groups: 2,
            hard_fraction: 0.5,
            seed: 7,
        };
        c.split = SplitConfig { fractions: [30.0 / 46.0, 10.0 / 46.0, 6.0 / 46.0], seed: 7 };
        c.preprocess.patch_size = [32, 64, 64];
        c.network = ModelConfig { network: NetworkConfig::tiny(), init_seed: 7 };
        c.train.epochs = 5;
        c.train.seed = 7;
        c.selection.seed = 7;
        c
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "default" => Ok(Self::default()),
            "smoke" => Ok(Self::smoke()),
            other => Err(CliError::Config(format!("unknown preset {other:?} (expected default or smoke)"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: renalseg::Error| CliError::Config(e.to_string());
        PatchSpec::new(self.preprocess.patch_size).map_err(bad)?;
        self.network.network.validate().map_err(bad)?;
        self.train.validate().map_err(bad)?;
        self.loss_config(None).validate().map_err(bad)?;
        if self.preprocess.target_spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(CliError::Config("target spacing must be positive".into()));
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return Err(CliError::Config("stats.alpha must lie in (0, 1)".into()));
        }
        if self.evaluation.tolerances_mm.iter().any(|t| !(*t >= 0.0)) {
            return Err(CliError::Config("surface tolerances must be >= 0".into()));
        }
        if self.selection.n_folds < 2
            || self.selection.n_lambdas == 0
            || !(self.selection.lambda_min_ratio > 0.0 && self.selection.lambda_min_ratio < 1.0)
        {
            return Err(CliError::Config(
                "selection needs n_folds >= 2, n_lambdas >= 1, lambda_min_ratio in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn patch(&self) -> PatchSpec {
        PatchSpec { size: self.preprocess.patch_size }
    }

    /// Loss configuration; `derived` fills in class weights when the config
    /// leaves them open.
    pub fn loss_config(&self, derived: Option<[f64; 4]>) -> renalseg::train::LossConfig {
        renalseg::train::LossConfig {
            dice_weight: self.loss.dice_weight,
            ce_weight: self.loss.ce_weight,
            ce_class_weights: self.loss.ce_class_weights.or(derived).unwrap_or([1.0; 4]),
            smooth: self.loss.smooth,
        }
    }

    /// Applies `path = value` overrides. Values are parsed as JSON and fall
    /// back to plain strings; every path must already exist.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for (path, raw) in overrides {
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            let mut node = &mut doc;
            for key in path.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|o| o.get_mut(key))
                    .ok_or_else(|| CliError::Config(format!("unknown config key {path:?}")))?;
            }
            *node = value;
        }
        serde_json::from_value(doc).map_err(|e| CliError::Config(format!("override rejected: {e}")))
    }
}

/// Dotted paths at which two JSON documents differ.
pub fn json_diff(a: &Value, b: &Value) -> Vec<String> {
    fn walk(a: &Value, b: &Value, prefix: &str, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(u, v, &p, out),
                        _ => out.push(p),
                    }
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(a, b, "", &mut out);
    out
}

/// Splits `--a.b value` and `--a.b=value` tokens out of an argument list.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").filter(|k| k.split('=').next().is_some_and(|p| p.contains('.')));
        match key {
            Some(k) => match k.split_once('=') {
                Some((p, v)) => overrides.push((p.to_string(), v.to_string())),
                None => {
                    let v = it.next().ok_or_else(|| CliError::Config(format!("override --{k} needs a value")))?;
                    overrides.push((k.to_string(), v));
                }
            },
            None => rest.push(a),
        }
    }
    Ok((rest, overrides))
}
