//! Deterministic synthetic phantom cohort.
//!
//! Each phantom has two ellipsoidal kidneys, a tumor sphere attached to one
//! of them and sometimes a cyst in the other. "Hard" cases get small,
//! low-contrast tumors and never-smoker clinical records, which gives the
//! selection stage a known association to recover.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Case, ClinicalRecord, ClinicalValue, CtVolume, LabelMap, Spacing, CYST, KIDNEY, TUMOR};
use crate::error::{Error, Result};
use crate::volume::Volume;

pub const MIN_DIM: usize = 32;

pub const BACKGROUND_HU: f32 = -50.0;
pub const KIDNEY_HU: f32 = 120.0;
pub const TUMOR_HU: f32 = 60.0;
/// Hard-case tumors are nearly iso-intense with kidney.
pub const HARD_TUMOR_HU: f32 = 100.0;
pub const CYST_HU: f32 = 10.0;
pub const NOISE_SIGMA: f64 = 15.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_cases: usize,
    pub volume_shape: [usize; 3],
    pub n_annotation_groups: usize,
    pub hard_fraction: f64,
    pub seed: u64,
}

/// Generator ground truth for one case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub case_id: String,
    pub hard: bool,
    pub tumor_radius_vox: f64,
    pub tumor_intensity: f32,
    pub has_cyst: bool,
}

#[derive(Clone, Debug)]
pub struct SyntheticCohort {
    pub cases: Vec<Case>,
    pub truth: Vec<PhantomTruth>,
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|k| ((p[k] - self.center[k]) / self.radii[k]).powi(2)).sum::<f64>() <= 1.0
    }

    fn jittered(&self, rng: &mut ChaCha8Rng, amount: f64) -> Ellipsoid {
        let mut e = *self;
        for k in 0..3 {
            e.center[k] += rng.random_range(-amount..=amount);
            e.radii[k] = (e.radii[k] + rng.random_range(-amount..=amount)).max(1.0);
        }
        e
    }
}

struct Phantom {
    kidneys: [Ellipsoid; 2],
    tumor: Ellipsoid,
    cyst: Option<Ellipsoid>,
}

impl Phantom {
    fn rasterize(&self, dims: [usize; 3]) -> Volume<u8> {
        let mut v = Volume::from_fn(dims, |z, y, x| {
            let p = [z as f64, y as f64, x as f64];
            if self.tumor.contains(p) {
                TUMOR
            } else if self.cyst.is_some_and(|c| c.contains(p)) {
                CYST
            } else if self.kidneys.iter().any(|k| k.contains(p)) {
                KIDNEY
            } else {
                0
            }
        });
        if !v.as_slice().contains(&TUMOR) {
            let c = self.tumor.center.map(|c| c.round().max(0.0) as usize);
            let c = [c[0].min(dims[0] - 1), c[1].min(dims[1] - 1), c[2].min(dims[2] - 1)];
            v.set(c[0], c[1], c[2], TUMOR);
        }
        v
    }
}

fn case_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1)
}

fn random_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = [n.sample(rng), n.sample(rng), n.sample(rng)];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.map(|x| x / norm);
        }
    }
}

pub fn generate_synthetic_cohort(params: &SynthParams) -> Result<SyntheticCohort> {
    let SynthParams { n_cases, volume_shape: dims, n_annotation_groups, hard_fraction, seed } = *params;
    if n_cases == 0 {
        return Err(Error::invalid("n_cases must be at least 1"));
    }
    if n_annotation_groups == 0 {
        return Err(Error::invalid("need at least one annotation group"));
    }
    if !(0.0..=1.0).contains(&hard_fraction) {
        return Err(Error::invalid(format!("hard_fraction {hard_fraction} outside [0, 1]")));
    }
    if dims.iter().any(|&d| d < MIN_DIM) {
        return Err(Error::Shape(format!("phantom needs every dimension >= {MIN_DIM}, got {dims:?}")));
    }

    let n_hard = (hard_fraction * n_cases as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n_cases).collect();
    // own stream: a split shuffled with the same seed must not line up with it
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    pick.set_stream(1);
    order.shuffle(&mut pick);
    let mut hard = vec![false; n_cases];
    for &i in &order[..n_hard] {
        hard[i] = true;
    }

    let mut cases = Vec::with_capacity(n_cases);
    let mut truth = Vec::with_capacity(n_cases);
    for (i, &is_hard) in hard.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed(seed, i));
        let case_id = format!("case_{i:05}");
        let (case, t) = make_case(&case_id, dims, n_annotation_groups, is_hard, &mut rng)?;
        cases.push(case);
        truth.push(t);
    }
    Ok(SyntheticCohort { cases, truth })
}

fn make_case(
    case_id: &str,
    dims: [usize; 3],
    groups: usize,
    hard: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Case, PhantomTruth)> {
    let d = dims.map(|v| v as f64);
    let spacing: Spacing = [rng.random_range(2.5..3.5), rng.random_range(1.3..1.8), rng.random_range(1.3..1.8)];

    let kidney = |side: f64, rng: &mut ChaCha8Rng| Ellipsoid {
        center: [
            d[0] * rng.random_range(0.45..0.55),
            d[1] * rng.random_range(0.45..0.55),
            d[2] * (side + rng.random_range(-0.03..0.03)),
        ],
        radii: [
            d[0] * rng.random_range(0.26..0.32),
            d[1] * rng.random_range(0.15..0.19),
            d[2] * rng.random_range(0.10..0.13),
        ],
    };
    let kidneys = [kidney(0.28, rng), kidney(0.72, rng)];

    let host = rng.random_range(0..2usize);
    let min_kidney_radius = kidneys[host].radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let tumor_radius = if hard {
        rng.random_range(0.22..0.30) * min_kidney_radius
    } else {
        rng.random_range(0.55..0.75) * min_kidney_radius
    }
    .max(1.5);
    let dir = random_direction(rng);
    let reach = rng.random_range(0.5..0.8);
    let tumor_center: [f64; 3] = std::array::from_fn(|k| {
        (kidneys[host].center[k] + dir[k] * reach * kidneys[host].radii[k]).clamp(1.0, d[k] - 2.0)
    });
    let tumor = Ellipsoid { center: tumor_center, radii: [tumor_radius; 3] };

    let has_cyst = rng.random_bool(0.4);
    let cyst = has_cyst.then(|| {
        let other = &kidneys[1 - host];
        let r = 0.35 * other.radii.iter().cloned().fold(f64::INFINITY, f64::min);
        let dir = random_direction(rng);
        Ellipsoid {
            center: std::array::from_fn(|k| other.center[k] + dir[k] * 0.3 * other.radii[k]),
            radii: [r.max(1.5); 3],
        }
    });

    let phantom = Phantom { kidneys, tumor, cyst };
    let tumor_hu = if hard { HARD_TUMOR_HU } else { TUMOR_HU };
    let exact = phantom.rasterize(dims);
    let noise = Normal::new(0.0, NOISE_SIGMA).unwrap();
    let image_vox = exact.map(|l| match l {
        KIDNEY => KIDNEY_HU,
        TUMOR => tumor_hu,
        CYST => CYST_HU,
        _ => BACKGROUND_HU,
    });
    let mut image_vox = image_vox;
    for v in image_vox.as_mut_slice() {
        *v += noise.sample(rng) as f32;
    }
    let image = CtVolume::new(case_id, image_vox, spacing)?;

    let mut annotations = Vec::with_capacity(groups);
    for g in 0..groups {
        let vox = if g == 0 {
            exact.clone()
        } else {
            Phantom {
                kidneys: [kidneys[0].jittered(rng, 0.6), kidneys[1].jittered(rng, 0.6)],
                tumor: tumor.jittered(rng, 0.5),
                cyst: cyst.map(|c| c.jittered(rng, 0.5)),
            }
            .rasterize(dims)
        };
        annotations.push(LabelMap::new(case_id, g, vox, spacing)?);
    }

    let clinical = clinical_record(case_id, hard, tumor_radius * 2.0 * spacing[2] / 10.0, rng);
    let case = Case::new(image, annotations, clinical)?;
    let truth = PhantomTruth {
        case_id: case_id.to_string(),
        hard,
        tumor_radius_vox: tumor_radius,
        tumor_intensity: tumor_hu,
        has_cyst,
    };
    Ok((case, truth))
}

fn clinical_record(case_id: &str, hard: bool, size_cm: f64, rng: &mut ChaCha8Rng) -> ClinicalRecord {
    use ClinicalValue::*;
    let smoking = if hard {
        "never_smoked"
    } else if rng.random_bool(0.6) {
        "previous_smoker"
    } else {
        "current_smoker"
    };
    let bmi = (!rng.random_bool(0.1)).then(|| Number((28.0 + 5.0 * rng.random_range(-1.0..1.0f64)).round()));
    ClinicalRecord::new(case_id)
        .with("age_at_nephrectomy", Some(Number(rng.random_range(30..86) as f64)))
        .with("gender", Some(Category(if rng.random_bool(0.5) { "male" } else { "female" }.into())))
        .with("body_mass_index", bmi)
        .with("comorbidities.chronic_kidney_disease", Some(Bool(rng.random_bool(0.2))))
        .with("comorbidities.hypertension", Some(Bool(rng.random_bool(0.4))))
        .with("smoking_history", Some(Category(smoking.into())))
        .with("radiographic_size", Some(Number((size_cm * 10.0).round() / 10.0)))
        .with(
            "surgical_procedure",
            Some(Category(if rng.random_bool(0.5) { "partial_nephrectomy" } else { "radical_nephrectomy" }.into())),
        )
        .with("vital_status", Some(Category("alive".into())))
}
