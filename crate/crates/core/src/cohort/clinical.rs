use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// A single characteristic value. Missingness is represented one level up
/// as `None`, so it can never collide with a legal value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClinicalValue {
    Bool(bool),
    Number(f64),
    Category(String),
}

/// Per-case characteristics keyed by flattened dot-path
/// (`comorbidities.chronic_kidney_disease`).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ClinicalRecord {
    pub case_id: String,
    pub entries: BTreeMap<String, Option<ClinicalValue>>,
}

impl ClinicalRecord {
    pub fn new(case_id: impl Into<String>) -> Self {
        ClinicalRecord { case_id: case_id.into(), entries: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: Option<ClinicalValue>) -> Self {
        self.entries.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&ClinicalValue> {
        self.entries.get(key).and_then(|v| v.as_ref())
    }

    /// Parses one JSON object, flattening nested objects into dot-paths.
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| Error::invalid("clinical record must be a JSON object"))?;
        let case_id = obj
            .get("case_id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::invalid("clinical record without string case_id"))?
            .to_string();
        let mut entries = BTreeMap::new();
        for (k, v) in obj {
            if k != "case_id" {
                flatten(k, v, &mut entries)?;
            }
        }
        Ok(ClinicalRecord { case_id, entries })
    }

    /// Nested JSON object; dot-paths become nested objects again.
    pub fn to_json(&self) -> Value {
        let mut root = Map::new();
        root.insert("case_id".into(), Value::String(self.case_id.clone()));
        for (key, value) in &self.entries {
            let v = match value {
                None => Value::Null,
                Some(v) => serde_json::to_value(v).expect("clinical value serializes"),
            };
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().unwrap();
            let mut node = &mut root;
            for p in parts {
                node = node
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("dot-path prefix collides with a leaf value");
            }
            node.insert(leaf.to_string(), v);
        }
        Value::Object(root)
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Option<ClinicalValue>>) -> Result<()> {
    match v {
        Value::Object(m) => {
            for (k, inner) in m {
                flatten(&format!("{prefix}.{k}"), inner, out)?;
            }
        }
        Value::Null => {
            out.insert(prefix.to_string(), None);
        }
        Value::Bool(b) => {
            out.insert(prefix.to_string(), Some(ClinicalValue::Bool(*b)));
        }
        Value::Number(n) => {
            let x = n.as_f64().ok_or_else(|| Error::invalid(format!("{prefix}: bad number")))?;
            out.insert(prefix.to_string(), Some(ClinicalValue::Number(x)));
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), Some(ClinicalValue::Category(s.clone())));
        }
        Value::Array(_) => {
            return Err(Error::invalid(format!("{prefix}: arrays are not clinical values")));
        }
    }
    Ok(())
}

pub fn parse_clinical(doc: &Value) -> Result<Vec<ClinicalRecord>> {
    let list = doc.as_array().ok_or_else(|| Error::invalid("clinical document must be a JSON list"))?;
    let records = list.iter().map(ClinicalRecord::from_json).collect::<Result<Vec<_>>>()?;
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.case_id.as_str()) {
            return Err(Error::invalid(format!("duplicate case_id {}", r.case_id)));
        }
    }
    Ok(records)
}

pub fn load_clinical(path: &Path) -> Result<Vec<ClinicalRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_clinical(&serde_json::from_str(&text)?)
}

pub fn save_clinical(path: &Path, records: &[ClinicalRecord]) -> Result<()> {
    let doc = Value::Array(records.iter().map(ClinicalRecord::to_json).collect());
    std::fs::write(path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flattens_nested_and_keeps_missing() {
        let doc = json!([
            {"case_id": "case_00000", "age_at_nephrectomy": 61, "gender": "male",
             "comorbidities": {"chronic_kidney_disease": false, "hypertension": null},
             "smoking_history": "previous_smoker"},
        ]);
        let recs = parse_clinical(&doc).unwrap();
        let r = &recs[0];
        assert_eq!(r.get("comorbidities.chronic_kidney_disease"), Some(&ClinicalValue::Bool(false)));
        assert_eq!(r.entries.get("comorbidities.hypertension"), Some(&None));
        assert_eq!(r.get("comorbidities.hypertension"), None);
        assert_eq!(r.get("age_at_nephrectomy"), Some(&ClinicalValue::Number(61.0)));
        assert_eq!(parse_clinical(&Value::Array(vec![r.to_json()])).unwrap()[0], *r);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let doc = json!([{"case_id": "a"}, {"case_id": "a"}]);
        assert!(parse_clinical(&doc).is_err());
    }
}
