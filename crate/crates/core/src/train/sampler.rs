//! Case weights and the seeded with-replacement case sampler.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly positive per-case weights with mean 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SamplingWeights {
    pub weights: BTreeMap<String, f64>,
}

impl SamplingWeights {
    /// Validates and rescales to mean 1.
    pub fn new(raw: BTreeMap<String, f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("no sampling weights"));
        }
        if let Some((k, v)) = raw.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("weight for {k} must be positive, got {v}")));
        }
        let mean = raw.values().sum::<f64>() / raw.len() as f64;
        Ok(SamplingWeights { weights: raw.into_iter().map(|(k, v)| (k, v / mean)).collect() })
    }

    pub fn uniform<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        Self::new(ids.iter().map(|s| (s.as_ref().to_string(), 1.0)).collect())
    }

    pub fn get(&self, case_id: &str) -> Option<f64> {
        self.weights.get(case_id).copied()
    }
}

/// Draws case ids i.i.d. with replacement, P(case) ∝ weight.
#[derive(Clone, Debug)]
pub struct Sampler {
    ids: Vec<String>,
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn draw(&mut self) -> &str {
        let i = self.dist.sample(&mut self.rng);
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }
}

/// `weights = None` samples uniformly. Otherwise the weights must cover
/// exactly the training ids.
pub fn make_sampler(train_ids: &[String], weights: Option<&SamplingWeights>, seed: u64) -> Result<Sampler> {
    if train_ids.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let mut ids = train_ids.to_vec();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate training id"));
    }
    let w: Vec<f64> = match weights {
        None => vec![1.0; ids.len()],
        Some(sw) => {
            if let Some(extra) = sw.weights.keys().find(|k| ids.binary_search(k).is_err()) {
                return Err(Error::invalid(format!("weight for unknown case {extra}")));
            }
            ids.iter()
                .map(|id| sw.get(id).ok_or_else(|| Error::invalid(format!("no weight for training case {id}"))))
                .collect::<Result<_>>()?
        }
    };
    let dist = WeightedIndex::new(&w).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(Sampler { ids, dist, rng: ChaCha8Rng::seed_from_u64(seed) })
}
