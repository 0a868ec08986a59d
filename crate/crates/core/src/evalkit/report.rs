//! Per-case metric tables and their cohort summaries.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HierarchicalClass;
use crate::error::{Error, Result};
use crate::preprocess::percentile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Dice,
    SurfaceDice,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Dice => "dice",
            MetricKind::SurfaceDice => "surface_dice",
        }
    }

    /// The six reported metrics, class-major.
    pub fn all_metrics() -> Vec<(HierarchicalClass, MetricKind)> {
        HierarchicalClass::ALL.into_iter().flat_map(|c| [(c, MetricKind::Dice), (c, MetricKind::SurfaceDice)]).collect()
    }

    pub fn label(class: HierarchicalClass, kind: MetricKind) -> String {
        format!("{}_{}", class.name(), kind.name())
    }
}

/// One case's metrics, indexed like [`HierarchicalClass::ALL`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEval {
    pub case_id: String,
    pub dice: [f64; 3],
    pub surface_dice: [f64; 3],
}

impl CaseEval {
    pub fn get(&self, class: HierarchicalClass, kind: MetricKind) -> f64 {
        let k = HierarchicalClass::ALL.iter().position(|&c| c == class).unwrap();
        match kind {
            MetricKind::Dice => self.dice[k],
            MetricKind::SurfaceDice => self.surface_dice[k],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single case.
    pub sd: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::invalid("cannot summarize an empty metric"));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(MetricSummary {
            n,
            mean,
            sd,
            median: percentile(&sorted, 50.0),
            q25: percentile(&sorted, 25.0),
            q75: percentile(&sorted, 75.0),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub arm: String,
    /// Keyed by metric label, e.g. `tumor_dice`, class-major order.
    pub metrics: Vec<(String, MetricSummary)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arm: String,
    pub cases: Vec<CaseEval>,
}

impl EvalReport {
    pub fn new(arm: impl Into<String>, mut cases: Vec<CaseEval>) -> Result<Self> {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        if cases.windows(2).any(|w| w[0].case_id == w[1].case_id) {
            return Err(Error::invalid("duplicate case in evaluation report"));
        }
        for c in &cases {
            if c.case_id.contains([',', '\n']) {
                return Err(Error::invalid(format!("case id {:?} cannot be written to CSV", c.case_id)));
            }
            if c.dice.iter().chain(&c.surface_dice).any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("metric outside [0, 1] for {}", c.case_id)));
            }
        }
        Ok(EvalReport { arm: arm.into(), cases })
    }

    pub fn case_ids(&self) -> Vec<&str> {
        self.cases.iter().map(|c| c.case_id.as_str()).collect()
    }

    pub fn values(&self, class: HierarchicalClass, kind: MetricKind) -> Vec<f64> {
        self.cases.iter().map(|c| c.get(class, kind)).collect()
    }

    pub fn summary(&self) -> Result<ReportSummary> {
        let metrics = MetricKind::all_metrics()
            .into_iter()
            .map(|(c, k)| Ok((MetricKind::label(c, k), MetricSummary::of(&self.values(c, k))?)))
            .collect::<Result<_>>()?;
        Ok(ReportSummary { arm: self.arm.clone(), metrics })
    }

    /// `case_id,class,dice,surface_dice`, one row per case and class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case_id,class,dice,surface_dice\n");
        for c in &self.cases {
            for (k, class) in HierarchicalClass::ALL.into_iter().enumerate() {
                writeln!(s, "{},{},{},{}", c.case_id, class.name(), c.dice[k], c.surface_dice[k]).unwrap();
            }
        }
        s
    }

    pub fn from_csv(arm: impl Into<String>, text: &str) -> Result<Self> {
        let bad =
            |line: usize, why: &str| Error::Format { path: "<eval csv>".into(), reason: format!("line {line}: {why}") };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "case_id,class,dice,surface_dice")) => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut cases: Vec<CaseEval> = Vec::new();
        let mut seen: Vec<[bool; 3]> = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i + 1, "expected 4 fields"));
            }
            let class = HierarchicalClass::from_name(f[1]).ok_or_else(|| bad(i + 1, "unknown class"))?;
            let k = HierarchicalClass::ALL.iter().position(|&c| c == class).unwrap();
            let d: f64 = f[2].parse().map_err(|_| bad(i + 1, "bad dice"))?;
            let sd: f64 = f[3].parse().map_err(|_| bad(i + 1, "bad surface_dice"))?;
            let idx = match cases.iter().position(|c| c.case_id == f[0]) {
                Some(idx) => idx,
                None => {
                    cases.push(CaseEval {
                        case_id: f[0].to_string(),
                        dice: [f64::NAN; 3],
                        surface_dice: [f64::NAN; 3],
                    });
                    seen.push([false; 3]);
                    cases.len() - 1
                }
            };
            if seen[idx][k] {
                return Err(bad(i + 1, "duplicate row"));
            }
            seen[idx][k] = true;
            cases[idx].dice[k] = d;
            cases[idx].surface_dice[k] = sd;
        }
        if seen.iter().any(|s| s.contains(&false)) {
            return Err(bad(0, "a case is missing one of the classes"));
        }
        EvalReport::new(arm, cases)
    }

    pub fn write(&self, csv_path: &Path, summary_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let json = serde_json::to_string_pretty(&self.summary()?)?;
        std::fs::write(summary_path, json).map_err(|e| Error::io(summary_path, e))
    }

    pub fn read(arm: impl Into<String>, csv_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Self::from_csv(arm, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        EvalReport::new(
            "baseline",
            vec![
                CaseEval { case_id: "b".into(), dice: [0.9, 0.5, 0.25], surface_dice: [0.8, 0.4, 0.1] },
                CaseEval { case_id: "a".into(), dice: [0.7, 0.3, 0.0], surface_dice: [0.6, 0.2, 1.0 / 3.0] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let r = report();
        assert_eq!(r.case_ids(), vec!["a", "b"]);
        let back = EvalReport::from_csv("baseline", &r.to_csv()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.to_csv().lines().count(), 7);
    }

    #[test]
    fn summary_has_six_rows() {
        let s = report().summary().unwrap();
        assert_eq!(s.metrics.len(), 6);
        assert_eq!(s.metrics[0].0, "kidney_and_masses_dice");
        assert_eq!(s.metrics[5].0, "tumor_surface_dice");
        let m = s.metrics[0].1;
        assert!((m.mean - 0.8).abs() < 1e-12);
        assert!((m.sd - (0.02f64).sqrt()).abs() < 1e-12);
        assert!((m.median - 0.8).abs() < 1e-12);
        assert!((m.q25 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_and_broken_csv() {
        assert!(EvalReport::new(
            "x",
            vec![CaseEval { case_id: "a".into(), dice: [1.5, 0.0, 0.0], surface_dice: [0.0; 3] }]
        )
        .is_err());
        assert!(EvalReport::from_csv("x", "case_id,class,dice,surface_dice\na,tumor,0.5,0.5\n").is_err());
        assert!(EvalReport::from_csv("x", "nope\n").is_err());
    }
}
