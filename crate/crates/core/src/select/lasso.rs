//! L1-penalized least squares by cyclic coordinate descent, and the
//! cross-validated regularization path.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CD_TOLERANCE: f64 = 1e-7;
pub const CD_MAX_SWEEPS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub sweeps: usize,
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// (1/2n)‖y − β₀ − Xβ‖² + λ‖β‖₁ for column-major `x`.
pub fn lasso_objective(x: &[Vec<f64>], y: &[f64], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let n = y.len();
    let mut rss = 0.0;
    for i in 0..n {
        let mut f = intercept;
        for (col, b) in x.iter().zip(beta) {
            f += col[i] * b;
        }
        rss += (y[i] - f).powi(2);
    }
    rss / (2.0 * n as f64) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

fn check_problem(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if y.len() < 2 {
        return Err(Error::invalid(format!("LASSO needs at least 2 observations, got {}", y.len())));
    }
    if x.iter().any(|c| c.len() != y.len()) {
        return Err(Error::Shape("design columns and response differ in length".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LASSO inputs".into()));
    }
    Ok(())
}

/// Minimizes the LASSO objective for `x` given column-major. The intercept
/// is unpenalized. Converges when no coefficient moves by more than 1e-7
/// within a sweep; the objective is checked to be non-increasing per sweep.
pub fn lasso_coordinate_descent(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<LassoFit> {
    lasso_warm(x, y, lambda, None)
}

pub(crate) fn lasso_warm(x: &[Vec<f64>], y: &[f64], lambda: f64, init: Option<&[f64]>) -> Result<LassoFit> {
    check_problem(x, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = y.len() as f64;
    let p = x.len();
    let mut beta = init.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p]);
    let sq: Vec<f64> = x.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / n).collect();
    let mut intercept = 0.0;
    let mut resid: Vec<f64> =
        (0..y.len()).map(|i| y[i] - x.iter().zip(&beta).map(|(c, b)| c[i] * b).sum::<f64>()).collect();
    let mut prev = f64::INFINITY;
    for sweep in 1..=CD_MAX_SWEEPS {
        let mut max_step: f64 = 0.0;
        let shift = resid.iter().sum::<f64>() / n;
        intercept += shift;
        resid.iter_mut().for_each(|r| *r -= shift);
        max_step = max_step.max(shift.abs());
        for j in 0..p {
            if sq[j] == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let col = &x[j];
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n + sq[j] * beta[j];
            let new = soft_threshold(rho, lambda) / sq[j];
            let d = new - beta[j];
            if d != 0.0 {
                resid.iter_mut().zip(col).for_each(|(r, a)| *r -= a * d);
                beta[j] = new;
            }
            max_step = max_step.max(d.abs());
        }
        let obj =
            resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * n) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>();
        if obj > prev + 1e-12 * prev.abs().max(1.0) {
            return Err(Error::NonConvergence(format!("LASSO objective increased at sweep {sweep}: {prev} -> {obj}")));
        }
        prev = obj;
        if max_step < CD_TOLERANCE {
            return Ok(LassoFit { intercept, beta, sweeps: sweep });
        }
    }
    Err(Error::NonConvergence(format!("LASSO did not converge in {CD_MAX_SWEEPS} sweeps at lambda {lambda}")))
}

/// Smallest λ with an all-zero solution: max_j |x̃ⱼ·(y − ȳ)| / n with
/// centred columns.
pub fn lambda_max(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let ym = y.iter().sum::<f64>() / n;
    x.iter()
        .map(|c| {
            let cm = c.iter().sum::<f64>() / n;
            (c.iter().zip(y).map(|(a, b)| (a - cm) * (b - ym)).sum::<f64>() / n).abs()
        })
        .fold(0.0, f64::max)
}

/// `count` log-spaced values from `lmax` down to `ratio · lmax`.
pub fn lambda_grid(lmax: f64, count: usize, ratio: f64) -> Vec<f64> {
    if count == 1 {
        return vec![lmax];
    }
    (0..count).map(|k| lmax * ratio.powf(k as f64 / (count - 1) as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    /// Decreasing.
    pub lambdas: Vec<f64>,
    /// Full-data fits on the standardized design, per λ.
    pub intercepts: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub index_min: usize,
    pub index_1se: usize,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub folds: Vec<Vec<usize>>,
}

/// Shuffles 0..n with the seed and deals the positions round-robin.
pub fn fold_assignment(n: usize, n_folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); n_folds];
    for (k, i) in idx.into_iter().enumerate() {
        folds[k % n_folds].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

fn fit_path(x: &[Vec<f64>], y: &[f64], lambdas: &[f64]) -> Result<Vec<LassoFit>> {
    let mut out: Vec<LassoFit> = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let init = out.last().map(|f| f.beta.as_slice());
        out.push(lasso_warm(x, y, l, init)?);
    }
    Ok(out)
}

/// K-fold cross-validated path; `lambda_1se` is the largest λ whose mean
/// error is within one standard error of the minimum.
pub fn cv_select(x: &[Vec<f64>], y: &[f64], n_folds: usize, lambdas: &[f64], seed: u64) -> Result<LassoPath> {
    check_problem(x, y)?;
    if lambdas.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) || lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::invalid("lambda grid must be strictly decreasing and non-negative"));
    }
    let n = y.len();
    if n_folds < 2 || n < n_folds {
        return Err(Error::invalid(format!("{n_folds} folds over {n} cases")));
    }
    let folds = fold_assignment(n, n_folds, seed);
    let mut fold_mse = vec![vec![0.0; n_folds]; lambdas.len()];
    for (k, test) in folds.iter().enumerate() {
        let mut is_test = vec![false; n];
        test.iter().for_each(|&i| is_test[i] = true);
        let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
        let xt: Vec<Vec<f64>> = x.iter().map(|c| train.iter().map(|&i| c[i]).collect()).collect();
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        for (li, fit) in fit_path(&xt, &yt, lambdas)?.into_iter().enumerate() {
            let mse = test
                .iter()
                .map(|&i| {
                    let f = fit.intercept + x.iter().zip(&fit.beta).map(|(c, b)| c[i] * b).sum::<f64>();
                    (y[i] - f).powi(2)
                })
                .sum::<f64>()
                / test.len() as f64;
            fold_mse[li][k] = mse;
        }
    }
    let kf = n_folds as f64;
    let cv_mean: Vec<f64> = fold_mse.iter().map(|m| m.iter().sum::<f64>() / kf).collect();
    let cv_se: Vec<f64> = fold_mse
        .iter()
        .zip(&cv_mean)
        .map(|(m, mu)| (m.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt() / kf.sqrt())
        .collect();
    let mut index_min = 0;
    for i in 1..lambdas.len() {
        if cv_mean[i] < cv_mean[index_min] {
            index_min = i;
        }
    }
    let bound = cv_mean[index_min] + cv_se[index_min];
    let index_1se = (0..=index_min).find(|&i| cv_mean[i] <= bound).unwrap_or(index_min);
    let full = fit_path(x, y, lambdas)?;
    Ok(LassoPath {
        lambdas: lambdas.to_vec(),
        intercepts: full.iter().map(|f| f.intercept).collect(),
        coefficients: full.into_iter().map(|f| f.beta).collect(),
        cv_mean,
        cv_se,
        index_min,
        index_1se,
        lambda_min: lambdas[index_min],
        lambda_1se: lambdas[index_1se],
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn standardize(mut cols: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        for c in cols.iter_mut() {
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            c.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        cols
    }

    fn random_problem(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = standardize((0..p).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect());
        let y = (0..n).map(|i| 1.0 + 0.8 * x[0][i] - 0.5 * x[1][i] + 0.3 * rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn zero_solution_above_lambda_max() {
        let (x, y) = random_problem(1, 40, 6);
        let lm = lambda_max(&x, &y);
        for l in [lm, 1.5 * lm] {
            let fit = lasso_coordinate_descent(&x, &y, l).unwrap();
            assert!(fit.beta.iter().all(|&b| b == 0.0));
            let ym = y.iter().sum::<f64>() / y.len() as f64;
            assert!((fit.intercept - ym).abs() < 1e-9);
        }
        let fit = lasso_coordinate_descent(&x, &y, 0.9 * lm).unwrap();
        assert!(fit.beta.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn orthonormal_design_is_soft_thresholded_ols() {
        // columns: orthogonal ±1 patterns with mean 0 and (1/n)‖x‖² = 1
        let n = 8;
        let x: Vec<Vec<f64>> =
            (0..3).map(|j| (0..n).map(|i| if (i >> j) & 1 == 1 { 1.0 } else { -1.0 }).collect()).collect();
        let y = vec![3.0, -1.0, 0.5, 2.0, -0.25, 1.5, 0.0, 4.0];
        let ols: Vec<f64> = x.iter().map(|c| c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64).collect();
        for lambda in [0.0, 0.1, 0.3, 0.7, 2.0] {
            let fit = lasso_coordinate_descent(&x, &y, lambda).unwrap();
            for j in 0..3 {
                let want = soft_threshold(ols[j], lambda);
                assert!((fit.beta[j] - want).abs() < 1e-6, "j={j} lambda={lambda}");
            }
        }
    }

    #[test]
    fn single_column_ols() {
        let x = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]];
        let y = vec![2.1, 3.9, 6.2, 7.8, 10.1];
        let fit = lasso_coordinate_descent(&x, &y, 0.0).unwrap();
        // closed form: slope = cov/var, intercept = ȳ − slope·x̄
        let slope = (0..5).map(|i| (x[0][i] - 3.0) * (y[i] - 6.02)).sum::<f64>() / 10.0;
        assert!((fit.beta[0] - slope).abs() < 1e-6);
        assert!((fit.intercept - (6.02 - slope * 3.0)).abs() < 1e-6);
    }

    #[test]
    fn objective_reaches_a_minimum() {
        let (x, y) = random_problem(3, 30, 5);
        let fit = lasso_coordinate_descent(&x, &y, 0.05).unwrap();
        let best = lasso_objective(&x, &y, fit.intercept, &fit.beta, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let b: Vec<f64> = fit.beta.iter().map(|v| v + 0.01 * rng.random_range(-1.0..1.0)).collect();
            assert!(lasso_objective(&x, &y, fit.intercept, &b, 0.05) >= best - 1e-12);
        }
    }

    #[test]
    fn l1_norm_shrinks_with_lambda() {
        let (x, y) = random_problem(5, 50, 8);
        let lm = lambda_max(&x, &y);
        let grid = lambda_grid(lm, 30, 1e-3);
        let norms: Vec<f64> = grid
            .iter()
            .map(|&l| lasso_coordinate_descent(&x, &y, l).unwrap().beta.iter().map(|b| b.abs()).sum())
            .collect();
        for w in norms.windows(2) {
            assert!(w[1] >= w[0] - 1e-6);
        }
    }

    #[test]
    fn grid_and_folds() {
        let g = lambda_grid(2.0, 100, 1e-3);
        assert_eq!(g.len(), 100);
        assert!((g[0] - 2.0).abs() < 1e-15 && (g[99] - 0.002).abs() < 1e-12);
        let f = fold_assignment(23, 5, 9);
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5, 5, 4, 4]);
        assert_eq!(f, fold_assignment(23, 5, 9));
        let mut all: Vec<usize> = f.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn cv_invariants() {
        for seed in 0..5 {
            let (x, y) = random_problem(seed, 40, 6);
            let grid = lambda_grid(lambda_max(&x, &y), 100, 1e-3);
            let path = cv_select(&x, &y, 5, &grid, seed).unwrap();
            assert!(path.lambda_1se >= path.lambda_min);
            assert!(path.cv_mean[path.index_1se] <= path.cv_mean[path.index_min] + path.cv_se[path.index_min]);
        }
        assert!(cv_select(&[vec![1.0, 2.0, 3.0]], &[1.0, 2.0, 3.0], 5, &[0.1], 0).is_err());
        assert!(cv_select(&[vec![1.0; 10]], &[1.0; 10], 5, &[], 0).is_err());
    }
}
