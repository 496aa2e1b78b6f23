//! Ridge initialization, the moment estimator for `λ²`, and WAIC.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Chol;
use crate::model::Dataset;

/// Minimum number of posterior draws accepted by [`waic`].
pub const MIN_WAIC_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeInit {
    pub w_ridge: DMatrix<f64>,
    pub ridge_penalties: DVector<f64>,
}

/// Half-decade grid from `1e-3` to `1e3`.
pub fn default_penalty_grid() -> Vec<f64> {
    (0..=12)
        .map(|k| 10f64.powf(-3.0 + 0.5 * k as f64))
        .collect()
}

/// Row indices of each fold: a seeded permutation cut into contiguous blocks,
/// the first `n mod k` blocks one longer.
pub fn cv_folds(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    out
}

fn ridge_solve(xtx: &DMatrix<f64>, xty: &DMatrix<f64>, penalty: f64) -> Result<DMatrix<f64>> {
    let mut a = xtx.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += penalty;
    }
    let chol = Chol::new(&a, "ridge system").map_err(|_| Error::SingularDesign)?;
    Ok(chol.solve(xty))
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, j| m[(rows[r], j)])
}

/// Per-column ridge regression without intercept, penalty picked by k-fold
/// cross-validated squared prediction error (first grid point wins ties).
pub fn ridge_initialize(
    dataset: &Dataset,
    cv_folds_k: usize,
    penalty_grid: &[f64],
    seed: u64,
) -> Result<RidgeInit> {
    let n = dataset.n();
    if cv_folds_k < 2 || cv_folds_k > n {
        return Err(Error::invalid(
            "cv_folds",
            format!("need 2 <= folds <= n = {n}, got {cv_folds_k}"),
        ));
    }
    if penalty_grid.is_empty() || penalty_grid.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::invalid(
            "penalty grid",
            "must be nonempty and positive",
        ));
    }
    let c = dataset.c();
    let cv = cv_sse(dataset, cv_folds_k, penalty_grid, seed)?;
    let mut penalties = DVector::zeros(c);
    for j in 0..c {
        let mut best = 0;
        for g in 1..penalty_grid.len() {
            if cv[(g, j)] < cv[(best, j)] {
                best = g;
            }
        }
        penalties[j] = penalty_grid[best];
    }
    let xtx = dataset.x.transpose() * &dataset.x;
    let xty = dataset.x.transpose() * &dataset.y;
    let mut w = DMatrix::zeros(dataset.d(), c);
    for j in 0..c {
        let col = DMatrix::from_column_slice(dataset.d(), 1, xty.column(j).as_slice());
        let beta = ridge_solve(&xtx, &col, penalties[j])?;
        w.set_column(j, &beta.column(0));
    }
    Ok(RidgeInit {
        w_ridge: w,
        ridge_penalties: penalties,
    })
}

/// Cross-validated sum of squared errors, `grid x c`.
pub fn cv_sse(dataset: &Dataset, k: usize, grid: &[f64], seed: u64) -> Result<DMatrix<f64>> {
    let folds = cv_folds(dataset.n(), k, seed);
    let mut sse = DMatrix::zeros(grid.len(), dataset.c());
    for test in &folds {
        let mut in_test = vec![false; dataset.n()];
        for &r in test {
            in_test[r] = true;
        }
        let train: Vec<usize> = (0..dataset.n()).filter(|&r| !in_test[r]).collect();
        let x_tr = select_rows(&dataset.x, &train);
        let y_tr = select_rows(&dataset.y, &train);
        let x_te = select_rows(&dataset.x, test);
        let y_te = select_rows(&dataset.y, test);
        let xtx = x_tr.transpose() * &x_tr;
        let xty = x_tr.transpose() * &y_tr;
        for (g, &pen) in grid.iter().enumerate() {
            let beta = ridge_solve(&xtx, &xty, pen)?;
            let resid = &y_te - &x_te * beta;
            for j in 0..dataset.c() {
                sse[(g, j)] += resid.column(j).norm_squared();
            }
        }
    }
    Ok(sse)
}

/// `λ̂² = d c (c+1) / max{1, v − 3} / Σ Ŵ²`.
pub fn moment_lambda2(w_ridge: &DMatrix<f64>, v: f64) -> Result<f64> {
    let (d, c) = w_ridge.shape();
    let ss = w_ridge.norm_squared();
    if !(ss > 0.0) {
        return Err(Error::AllZeroRidge);
    }
    let (d, c) = (d as f64, c as f64);
    Ok(d * c * (c + 1.0) / (v - 3.0).max(1.0) / ss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaicReport {
    pub waic: f64,
    /// `−2 Σ_ℓ log E[p(y_ℓ | θ)]`
    pub lppd_term: f64,
    /// `2 Σ_ℓ Var[log p(y_ℓ | θ)]`
    pub penalty_term: f64,
    /// `(log E[p], Var[log p])` per subject.
    pub per_subject: Vec<(f64, f64)>,
}

/// WAIC from per-draw, per-subject log likelihoods (`loglik_draws[t][ℓ]`).
pub fn waic(loglik_draws: &[DVector<f64>]) -> Result<WaicReport> {
    waic_with_min_draws(loglik_draws, MIN_WAIC_DRAWS)
}

/// [`waic`] with a caller-chosen minimum draw count (at least 2, since the
/// penalty uses the unbiased variance).
pub fn waic_with_min_draws(loglik_draws: &[DVector<f64>], min_draws: usize) -> Result<WaicReport> {
    let m = loglik_draws.len();
    let required = min_draws.max(2);
    if m < required {
        return Err(Error::TooFewSamples { required, got: m });
    }
    let n = loglik_draws[0].len();
    for (t, draw) in loglik_draws.iter().enumerate() {
        if draw.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "draw {t} has {} subjects, expected {n}",
                draw.len()
            )));
        }
        if let Some(l) = draw.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogLik {
                draw: t,
                subject: l,
            });
        }
    }
    let mut per_subject = Vec::with_capacity(n);
    let mut lppd = 0.0;
    let mut pen = 0.0;
    for l in 0..n {
        let max = loglik_draws
            .iter()
            .map(|d| d[l])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = loglik_draws.iter().map(|d| (d[l] - max).exp()).sum();
        let log_mean = max + (sum_exp / m as f64).ln();
        let mean = loglik_draws.iter().map(|d| d[l]).sum::<f64>() / m as f64;
        let var = loglik_draws
            .iter()
            .map(|d| (d[l] - mean).powi(2))
            .sum::<f64>()
            / (m - 1) as f64;
        lppd += log_mean;
        pen += var;
        per_subject.push((log_mean, var));
    }
    let lppd_term = -2.0 * lppd;
    let penalty_term = 2.0 * pen;
    Ok(WaicReport {
        waic: lppd_term + penalty_term,
        lppd_term,
        penalty_term,
        per_subject,
    })
}
