//! Clinical characteristic selection: design matrix, cross-validated LASSO
//! at one standard error, and inverse-frequency sampling weights.

mod lasso;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cohort::{ClinicalRecord, ClinicalValue};
use crate::error::{Error, Result};
use crate::train::SamplingWeights;

pub use lasso::{
    cv_select, fold_assignment, lambda_grid, lambda_max, lasso_coordinate_descent, lasso_objective, LassoFit,
    LassoPath, CD_MAX_SWEEPS, CD_TOLERANCE,
};

pub const MIN_CASES: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    /// A boolean characteristic (`level` is `None`) or one level of a
    /// categorical one.
    Binary {
        level: Option<String>,
    },
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    /// `key` for booleans and numbers, `key=level` for categorical levels.
    pub name: String,
    pub key: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    fn raw_value(&self, record: &ClinicalRecord) -> Result<f64> {
        let missing = || Error::invalid(format!("{} has no value for {}", record.case_id, self.key));
        let v = record.get(&self.key).ok_or_else(missing)?;
        match (&self.kind, v) {
            (ColumnKind::Binary { level: None }, ClinicalValue::Bool(b)) => Ok(*b as u8 as f64),
            (ColumnKind::Binary { level: Some(l) }, ClinicalValue::Category(c)) => Ok((c == l) as u8 as f64),
            (ColumnKind::Continuous, ClinicalValue::Number(x)) => Ok(*x),
            _ => Err(Error::invalid(format!("{} has a value of the wrong type for {}", record.case_id, self.key))),
        }
    }
}

/// Standardized design over complete characteristics. `x` is column-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub case_ids: Vec<String>,
    pub columns: Vec<Column>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub column_means: Vec<f64>,
    /// Population standard deviations (divisor n).
    pub column_stds: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum KeyType {
    Bool,
    Number,
    Category,
}

fn key_type(v: &ClinicalValue) -> KeyType {
    match v {
        ClinicalValue::Bool(_) => KeyType::Bool,
        ClinicalValue::Number(_) => KeyType::Number,
        ClinicalValue::Category(_) => KeyType::Category,
    }
}

/// Keeps characteristics present in every record, one-hot encodes
/// categorical levels, drops constant columns and z-normalizes the rest.
/// Rows are sorted by case id.
pub fn build_design_matrix(records: &[ClinicalRecord], dice: &BTreeMap<String, f64>) -> Result<DesignMatrix> {
    let mut records: Vec<&ClinicalRecord> = records.iter().collect();
    records.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    if records.windows(2).any(|w| w[0].case_id == w[1].case_id) {
        return Err(Error::invalid("duplicate clinical record"));
    }
    if records.len() < MIN_CASES {
        return Err(Error::invalid(format!("need at least {MIN_CASES} cases, got {}", records.len())));
    }
    let y = records
        .iter()
        .map(|r| {
            dice.get(&r.case_id)
                .copied()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::invalid(format!("no Dice value for {}", r.case_id)))
        })
        .collect::<Result<Vec<f64>>>()?;

    let keys: BTreeSet<&String> = records.iter().flat_map(|r| r.entries.keys()).collect();
    let mut candidates: Vec<Column> = Vec::new();
    for key in keys {
        let values: Option<Vec<&ClinicalValue>> = records.iter().map(|r| r.get(key)).collect();
        let Some(values) = values else { continue };
        let t = key_type(values[0]);
        if values.iter().any(|v| key_type(v) != t) {
            return Err(Error::invalid(format!("characteristic {key} mixes value types")));
        }
        match t {
            KeyType::Bool => candidates.push(Column {
                name: key.clone(),
                key: key.clone(),
                kind: ColumnKind::Binary { level: None },
            }),
            KeyType::Number => {
                candidates.push(Column { name: key.clone(), key: key.clone(), kind: ColumnKind::Continuous })
            }
            KeyType::Category => {
                let levels: BTreeSet<&str> = values
                    .iter()
                    .map(|v| match v {
                        ClinicalValue::Category(c) => c.as_str(),
                        _ => unreachable!(),
                    })
                    .collect();
                for level in levels {
                    candidates.push(Column {
                        name: format!("{key}={level}"),
                        key: key.clone(),
                        kind: ColumnKind::Binary { level: Some(level.to_string()) },
                    });
                }
            }
        }
    }

    let n = records.len() as f64;
    let (mut columns, mut x, mut means, mut stds) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for col in candidates {
        let raw = records.iter().map(|r| col.raw_value(r)).collect::<Result<Vec<f64>>>()?;
        if raw.iter().all(|&v| v == raw[0]) {
            continue;
        }
        let mean = raw.iter().sum::<f64>() / n;
        let std = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        x.push(raw.iter().map(|v| (v - mean) / std).collect());
        columns.push(col);
        means.push(mean);
        stds.push(std);
    }
    if columns.is_empty() {
        return Err(Error::Degenerate("no clinical characteristic survives filtering".into()));
    }
    Ok(DesignMatrix {
        case_ids: records.iter().map(|r| r.case_id.clone()).collect(),
        columns,
        x,
        y,
        column_means: means,
        column_stds: stds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedCharacteristic {
    pub column: Column,
    /// Coefficient on the original (unstandardized) scale.
    pub coefficient: f64,
    pub standardized_coefficient: f64,
    pub sign: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Original-scale intercept at `lambda_1se`.
    pub intercept: f64,
    pub selected: Vec<SelectedCharacteristic>,
    /// Fraction of training cases having each selected characteristic
    /// (for continuous ones: being above the training median).
    pub frequencies: BTreeMap<String, f64>,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub path: Option<LassoPath>,
}

impl SelectionResult {
    pub fn empty() -> Self {
        SelectionResult {
            intercept: 0.0,
            selected: Vec::new(),
            frequencies: BTreeMap::new(),
            lambda_min: 0.0,
            lambda_1se: 0.0,
            path: None,
        }
    }
}

/// Whether each record has the characteristic. Continuous characteristics
/// are dichotomized at the median over `records` ("above median").
pub fn characteristic_indicator(column: &Column, records: &[ClinicalRecord]) -> Result<Vec<bool>> {
    let raw = records.iter().map(|r| column.raw_value(r)).collect::<Result<Vec<f64>>>()?;
    Ok(match column.kind {
        ColumnKind::Binary { .. } => raw.iter().map(|&v| v == 1.0).collect(),
        ColumnKind::Continuous => {
            let mut sorted = raw.clone();
            sorted.sort_by(f64::total_cmp);
            let median = crate::preprocess::percentile(&sorted, 50.0);
            raw.iter().map(|&v| v > median).collect()
        }
    })
}

fn frequency(column: &Column, records: &[ClinicalRecord]) -> Result<f64> {
    let has = characteristic_indicator(column, records)?;
    if has.is_empty() {
        return Err(Error::invalid("no training records"));
    }
    Ok(has.iter().filter(|&&h| h).count() as f64 / has.len() as f64)
}

/// Reads off the nonzero coefficients at `lambda_1se` and the training
/// frequencies of the selected characteristics.
pub fn selection_from_path(
    design: &DesignMatrix,
    path: LassoPath,
    train_records: &[ClinicalRecord],
) -> Result<SelectionResult> {
    let k = path.index_1se;
    let beta = &path.coefficients[k];
    let mut intercept = path.intercepts[k];
    let mut selected = Vec::new();
    let mut frequencies = BTreeMap::new();
    for (j, &b) in beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let coef = b / design.column_stds[j];
        intercept -= coef * design.column_means[j];
        let column = design.columns[j].clone();
        frequencies.insert(column.name.clone(), frequency(&column, train_records)?);
        selected.push(SelectedCharacteristic {
            column,
            coefficient: coef,
            standardized_coefficient: b,
            sign: if b > 0.0 { 1 } else { -1 },
        });
    }
    Ok(SelectionResult {
        intercept,
        selected,
        frequencies,
        lambda_min: path.lambda_min,
        lambda_1se: path.lambda_1se,
        path: Some(path),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub n_folds: usize,
    pub n_lambdas: usize,
    /// Smallest λ on the grid as a fraction of λ_max.
    pub lambda_min_ratio: f64,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { n_folds: 5, n_lambdas: 100, lambda_min_ratio: 1e-3, seed: 0 }
    }
}

/// Full selection: design matrix over the validation records, λ grid,
/// cross-validated path and read-off at `lambda_1se`. Returns an empty
/// selection (uniform weights downstream) when no characteristic varies
/// or the target is constant, together with the reason.
pub fn select_characteristics(
    val_records: &[ClinicalRecord],
    tumor_dice: &BTreeMap<String, f64>,
    train_records: &[ClinicalRecord],
    config: &SelectionConfig,
) -> Result<(SelectionResult, Option<String>)> {
    if val_records.len() < MIN_CASES.max(config.n_folds) {
        return Err(Error::invalid(format!(
            "selection needs at least {} validation cases, got {}",
            MIN_CASES.max(config.n_folds),
            val_records.len()
        )));
    }
    let design = match build_design_matrix(val_records, tumor_dice) {
        Ok(d) => d,
        Err(Error::Degenerate(why)) => return Ok((SelectionResult::empty(), Some(why))),
        Err(e) => return Err(e),
    };
    let lmax = lambda_max(&design.x, &design.y);
    if !(lmax > 0.0) {
        return Ok((SelectionResult::empty(), Some("tumor Dice is constant over the validation cases".into())));
    }
    let grid = lambda_grid(lmax, config.n_lambdas, config.lambda_min_ratio);
    let path = cv_select(&design.x, &design.y, config.n_folds, &grid, config.seed)?;
    Ok((selection_from_path(&design, path, train_records)?, None))
}

/// Inverse-frequency case weights. A positive coefficient means having
/// the characteristic goes with higher Dice, so cases lacking it are
/// up-weighted by 1/freq; for a negative coefficient cases having it are
/// up-weighted by 1/(1 − freq). Factors multiply across characteristics
/// and the result is normalized to mean 1.
pub fn compute_sampling_weights(
    selection: &SelectionResult,
    train_records: &[ClinicalRecord],
) -> Result<SamplingWeights> {
    let mut raw: BTreeMap<String, f64> = train_records.iter().map(|r| (r.case_id.clone(), 1.0)).collect();
    if raw.len() != train_records.len() {
        return Err(Error::invalid("duplicate training record"));
    }
    for s in &selection.selected {
        let has = characteristic_indicator(&s.column, train_records)?;
        let freq = has.iter().filter(|&&h| h).count() as f64 / has.len() as f64;
        if freq == 0.0 || freq == 1.0 {
            return Err(Error::Degenerate(format!(
                "characteristic {} has training frequency {freq}; inverse-frequency weighting is undefined",
                s.column.name
            )));
        }
        for (r, h) in train_records.iter().zip(has) {
            let factor = match (s.coefficient > 0.0, h) {
                (true, false) => 1.0 / freq,
                (false, true) => 1.0 / (1.0 - freq),
                _ => 1.0,
            };
            *raw.get_mut(&r.case_id).unwrap() *= factor;
        }
    }
    SamplingWeights::new(raw)
}
