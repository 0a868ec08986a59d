//! Paired comparison of the two arms: Shapiro-Wilk normality gate on the
//! per-case differences, then a paired t-test or a Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::evalkit::{EvalReport, MetricKind};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro-Wilk W and its p-value (Royston's approximation), 3 ≤ n ≤ 5000.
pub fn shapiro_wilk(sample: &[f64]) -> Result<(f64, f64)> {
    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::invalid(format!("Shapiro-Wilk needs 3..=5000 values, got {n}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Shapiro-Wilk sample".into()));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let mean = x.iter().sum::<f64>() / n as f64;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if x[n - 1] - x[0] <= 1e-12 * x[n - 1].abs().max(x[0].abs()).max(1e-300) || ss <= 0.0 {
        return Err(Error::Degenerate("Shapiro-Wilk on a sample with zero variance".into()));
    }

    let norm = std_normal();
    let nf = n as f64;
    let a: Vec<f64> = if n == 3 {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        vec![-h, 0.0, h]
    } else {
        let m: Vec<f64> = (1..=n).map(|i| norm.inverse_cdf((i as f64 - 0.375) / (nf + 0.25))).collect();
        let summ2: f64 = m.iter().map(|v| v * v).sum();
        let ssumm2 = summ2.sqrt();
        let u = 1.0 / nf.sqrt();
        let c1 = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
        let c2 = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
        let an = m[n - 1] / ssumm2 + poly(&c1, u);
        let mut a = vec![0.0; n];
        if n > 5 {
            let an1 = m[n - 2] / ssumm2 + poly(&c2, u);
            let phi = (summ2 - 2.0 * m[n - 1].powi(2) - 2.0 * m[n - 2].powi(2))
                / (1.0 - 2.0 * an.powi(2) - 2.0 * an1.powi(2));
            for i in 2..n - 2 {
                a[i] = m[i] / phi.sqrt();
            }
            a[n - 1] = an;
            a[0] = -an;
            a[n - 2] = an1;
            a[1] = -an1;
        } else {
            let phi = (summ2 - 2.0 * m[n - 1].powi(2)) / (1.0 - 2.0 * an.powi(2));
            for i in 1..n - 1 {
                a[i] = m[i] / phi.sqrt();
            }
            a[n - 1] = an;
            a[0] = -an;
        }
        a
    };
    let num: f64 = a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum();
    let w = (num * num / ss).min(1.0);

    let p = if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        p.clamp(0.0, 1.0)
    } else if n <= 11 {
        let gamma = -2.273 + 0.459 * nf;
        let mu = poly(&[0.5440, -0.39978, 0.025054, -6.714e-4], nf);
        let sigma = poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp();
        let y = (1.0 - w).ln();
        if gamma - y <= 0.0 {
            return Ok((w, 0.0));
        }
        let z = (-(gamma - y).ln() - mu) / sigma;
        1.0 - norm.cdf(z)
    } else {
        let ln = nf.ln();
        let mu = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln);
        let sigma = poly(&[-0.4803, -0.082676, 0.0030302], ln).exp();
        let z = ((1.0 - w).ln() - mu) / sigma;
        1.0 - norm.cdf(z)
    };
    Ok((w, p))
}

/// One-sample t-test of the differences against zero, two-sided.
pub fn paired_t(diffs: &[f64]) -> Result<(f64, f64)> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::invalid(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate("paired t-test on differences with zero variance".into()));
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok((t, p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    /// Exact for n ≤ 25 nonzero differences, normal approximation above.
    Auto,
    Exact,
    Normal,
}

pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Midranks (1-based) of `values`.
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test. Returns W⁺ (sum of ranks of positive
/// differences) and the two-sided p-value. Zero differences are dropped.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<(f64, f64)> {
    wilcoxon_signed_rank_with(diffs, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(diffs: &[f64], method: WilcoxonMethod) -> Result<(f64, f64)> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("Wilcoxon differences".into()));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Err(Error::Degenerate("Wilcoxon signed-rank with all differences zero".into()));
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let exact = match method {
        WilcoxonMethod::Auto => n <= WILCOXON_EXACT_MAX_N,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let p = if exact { exact_p(&ranks, w_plus) } else { normal_p(&abs, &ranks, w_plus) };
    Ok((w_plus, p))
}

/// Enumerates the null distribution of W⁺ over all sign assignments using
/// doubled (integer) midranks.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let r2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = r2.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &r2 {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks.len() as i32);
    let w2 = (2.0 * w_plus).round() as usize;
    let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
    let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(abs: &[f64], ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((w_plus - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    (2.0 * (1.0 - std_normal().cdf(z))).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestUsed {
    PairedT,
    Wilcoxon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub metric: String,
    pub case_ids: Vec<String>,
    pub baseline: Vec<f64>,
    pub cognizant: Vec<f64>,
    /// cognizant − baseline, per case.
    pub differences: Vec<f64>,
    /// `None` when the differences are constant and the gate cannot run.
    pub normality_p: Option<f64>,
    pub test_used: TestUsed,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Applies the normality gate and the chosen paired test to one metric.
pub fn compare_paired(
    metric: &str,
    case_ids: Vec<String>,
    baseline: Vec<f64>,
    cognizant: Vec<f64>,
    alpha: f64,
) -> Result<PairedComparison> {
    if baseline.len() != cognizant.len() || baseline.len() != case_ids.len() {
        return Err(Error::Shape("paired vectors differ in length".into()));
    }
    if baseline.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 pairs, got {}", baseline.len())));
    }
    let differences: Vec<f64> = cognizant.iter().zip(&baseline).map(|(c, b)| c - b).collect();
    let constant = differences.iter().all(|&d| d == differences[0]);
    let (normality_p, test_used, statistic, p_value) = if constant {
        let (w, p) = if differences[0] == 0.0 { (0.0, 1.0) } else { wilcoxon_signed_rank(&differences)? };
        (None, TestUsed::Wilcoxon, w, p)
    } else {
        let (_, np) = shapiro_wilk(&differences)?;
        if np > alpha {
            let (t, p) = paired_t(&differences)?;
            (Some(np), TestUsed::PairedT, t, p)
        } else {
            let (w, p) = wilcoxon_signed_rank(&differences)?;
            (Some(np), TestUsed::Wilcoxon, w, p)
        }
    };
    Ok(PairedComparison {
        metric: metric.to_string(),
        case_ids,
        baseline,
        cognizant,
        differences,
        normality_p,
        test_used,
        statistic,
        p_value,
        significant: p_value < alpha,
    })
}

/// The six paired comparisons (three classes × Dice / Surface Dice).
pub fn compare_arms(baseline: &EvalReport, cognizant: &EvalReport, alpha: f64) -> Result<Vec<PairedComparison>> {
    if baseline.case_ids() != cognizant.case_ids() {
        return Err(Error::invalid("the two reports cover different cases"));
    }
    let ids: Vec<String> = baseline.case_ids().into_iter().map(String::from).collect();
    MetricKind::all_metrics()
        .into_iter()
        .map(|(class, kind)| {
            compare_paired(
                &MetricKind::label(class, kind),
                ids.clone(),
                baseline.values(class, kind),
                cognizant.values(class, kind),
                alpha,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, StudentT};

    #[test]
    fn paired_t_examples() {
        let (t, p) = paired_t(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((t - 3.872983346207417).abs() < 1e-12);
        assert!((p - 0.030466291662170977).abs() < 1e-9);
        let (t, p) = paired_t(&[-1.0, 1.0]).unwrap();
        assert_eq!(t, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        assert!(matches!(paired_t(&[2.0, 2.0, 2.0]), Err(Error::Degenerate(_))));
        let d = [0.3, -0.1, 0.7, 1.2, 0.05];
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let (a, pa) = paired_t(&d).unwrap();
        let (b, pb) = paired_t(&neg).unwrap();
        assert!((a + b).abs() < 1e-12 && (pa - pb).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_small_examples() {
        let (w, p) = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(w, 15.0);
        assert!((p - 0.0625).abs() < 1e-15);
        let (_, p) = wilcoxon_signed_rank(&[-2.5, 2.5]).unwrap();
        assert_eq!(p, 1.0);
        assert!(matches!(wilcoxon_signed_rank(&[0.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn midranks_with_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn exact_matches_sign_enumeration_with_ties() {
        // brute force over all 2^n sign flips of the midranks
        let d = [0.5, -1.25, 2.0, 2.0, 3.5, -0.75, 1.0, 4.0];
        let abs: Vec<f64> = d.iter().map(|v: &f64| v.abs()).collect();
        let r = midranks(&abs);
        let obs: f64 = d.iter().zip(&r).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let (mut lo, mut hi) = (0usize, 0usize);
        for mask in 0..(1u32 << d.len()) {
            let s: f64 = (0..d.len()).filter(|&i| mask >> i & 1 == 1).map(|i| r[i]).sum();
            lo += (s <= obs + 1e-9) as usize;
            hi += (s >= obs - 1e-9) as usize;
        }
        let want = (2.0 * lo.min(hi) as f64 / 256.0).min(1.0);
        let (w, p) = wilcoxon_signed_rank(&d).unwrap();
        assert_eq!(w, obs);
        assert!((p - want).abs() < 1e-15, "{p} vs {want}");
        assert!((p - 26.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_against_reference_values() {
        let d = [1.1, -0.3, 2.2, 0.7, -1.4, 3.3, 0.9, 1.6, -0.2, 2.8, 0.4, 1.9];
        let (w, p) = wilcoxon_signed_rank_with(&d, WilcoxonMethod::Exact).unwrap();
        assert_eq!(w, 68.0);
        assert!((p - 0.02099609375).abs() < 1e-12);
        let (_, p) = wilcoxon_signed_rank_with(&d, WilcoxonMethod::Normal).unwrap();
        assert!((p - 0.025369859822053694).abs() < 1e-9);
    }

    #[test]
    fn exact_and_normal_agree_at_twenty() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..20 {
            let d: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).map(|v: f64| v + 0.3).collect();
            let (_, pe) = wilcoxon_signed_rank_with(&d, WilcoxonMethod::Exact).unwrap();
            let (_, pn) = wilcoxon_signed_rank_with(&d, WilcoxonMethod::Normal).unwrap();
            assert!((pe - pn).abs() < 0.02, "{pe} vs {pn}");
        }
    }

    #[test]
    fn small_n_envelope_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in 4..=12 {
            for _ in 0..10 {
                let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let (_, pe) = wilcoxon_signed_rank_with(&d, WilcoxonMethod::Exact).unwrap();
                let (_, pn) = wilcoxon_signed_rank_with(&d, WilcoxonMethod::Normal).unwrap();
                assert!((pe - pn).abs() < 0.05, "n={n}: {pe} vs {pn}");
            }
        }
    }

    #[test]
    fn wilcoxon_is_rank_based() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d: Vec<f64> = (0..15).map(|_| StandardNormal.sample(&mut rng)).collect();
        let cubed: Vec<f64> = d.iter().map(|v| v * v * v + 2.0 * v).collect();
        assert_eq!(wilcoxon_signed_rank(&d).unwrap().1, wilcoxon_signed_rank(&cubed).unwrap().1);
    }

    #[test]
    fn shapiro_reference_dataset() {
        let x = [148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0];
        let (w, p) = shapiro_wilk(&x).unwrap();
        assert!((w - 0.7888146948631716).abs() < 1e-4, "W = {w}");
        assert!((p - 0.006703814061898823).abs() < 1e-3, "p = {p}");
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        let (w2, _) = shapiro_wilk(&y).unwrap();
        assert!((w - w2).abs() < 1e-12);
    }

    #[test]
    fn shapiro_reference_samples() {
        let cases: [(&[f64], f64, f64); 6] = [
            (&[0.12573, -0.132105, 0.640423], 0.9644597413554837, 0.6377833955351866),
            (&[0.1049, -0.535669, 0.361595, 1.304], 0.9773621864185643, 0.886386860278322),
            (&[0.947081, -0.703735, -1.265421, -0.623274, 0.041326], 0.9493004187076789, 0.7321894229271856),
            (
                &[-2.325031, -0.218792, -1.245911, -0.732267, -0.544259, -0.3163, 0.411631],
                0.9406954625570381,
                0.644991997291626,
            ),
            (
                &[
                    1.042513, -0.128535, 1.366463, -0.665195, 0.35151, 0.90347, 0.094012, -0.743499, -0.921725,
                    -0.457726, 0.220195, -1.009618, -0.209176, -0.159225, 0.540846, 0.214659, 0.355373, -0.653829,
                    -0.129614, 0.783975,
                ],
                0.9718050437473343,
                0.7924548025991796,
            ),
            (
                &[
                    1.493431, -1.259066, 1.513924, 1.345875, 0.781311, 0.264456, -0.313923, 1.458021, 1.960258,
                    1.801635, 1.315104, 0.35738, -1.208319, -0.004454, 0.656475, -1.288361, 0.395122, 0.429864,
                    0.696043, -1.184118, -0.661703, -0.436435, -1.169802, 1.739368, -0.495911, 0.32897, -0.258573,
                    1.583473, 1.320361, 0.633353,
                ],
                0.9316695406488161,
                0.05439007601699495,
            ),
        ];
        for (x, w_ref, p_ref) in cases {
            let (w, p) = shapiro_wilk(x).unwrap();
            assert!((w - w_ref).abs() < 1e-4, "n={}: W {w} vs {w_ref}", x.len());
            assert!((p - p_ref).abs() < 1e-3, "n={}: p {p} vs {p_ref}", x.len());
        }
    }

    #[test]
    fn shapiro_errors() {
        assert!(matches!(shapiro_wilk(&[1.0, 1.0, 1.0, 1.0]), Err(Error::Degenerate(_))));
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
    }

    fn compare_on(diffs: &[f64]) -> PairedComparison {
        let n = diffs.len();
        let base: Vec<f64> = (0..n).map(|i| 0.5 + 0.001 * i as f64).collect();
        let cog: Vec<f64> = base.iter().zip(diffs).map(|(b, d)| b + d).collect();
        compare_paired("m", (0..n).map(|i| format!("c{i}")).collect(), base, cog, 0.05).unwrap()
    }

    #[test]
    fn gate_picks_t_for_normal_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t_chosen = 0;
        for _ in 0..50 {
            let d: Vec<f64> = (0..30)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    0.1 + 0.05 * z
                })
                .collect();
            let c = compare_on(&d);
            if c.test_used == TestUsed::PairedT {
                t_chosen += 1;
                assert!(c.significant);
            }
        }
        assert!(t_chosen >= 40, "paired t chosen {t_chosen}/50");
    }

    #[test]
    fn gate_picks_wilcoxon_for_heavy_tails() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cauchy = StudentT::new(1.0).unwrap();
        let mut w_chosen = 0;
        for _ in 0..50 {
            let d: Vec<f64> = (0..30).map(|_| 0.01 * cauchy.sample(&mut rng)).collect();
            if compare_on(&d).test_used == TestUsed::Wilcoxon {
                w_chosen += 1;
            }
        }
        assert!(w_chosen >= 45, "wilcoxon chosen {w_chosen}/50");
    }

    #[test]
    fn identical_arms_give_p_one() {
        let c = compare_on(&[0.0; 6]);
        assert_eq!(c.test_used, TestUsed::Wilcoxon);
        assert_eq!(c.p_value, 1.0);
        assert!(!c.significant);
        assert_eq!(c.normality_p, None);
    }
}
